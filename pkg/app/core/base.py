"""
Shared constants and defaults.
"""

SCHEMA = "matseg/1"
FORMAT_VERSION = 1

# Long-format CSV layout (1-based indices)
CSV_COLUMNS = ["t", "row", "col", "value"]

# Pipeline defaults
DEFAULT_TAU0 = 5
DEFAULT_TAU1 = 15
DEFAULT_C_R = 0.75
DEFAULT_RHO_FLOOR = 0.05
DEFAULT_MAX_AR_ORDER = 5

# Numerical guards
EIG_FLOOR_SCALE = 1e-10
RATIO_DENOM_FLOOR = 1e-12
AR1_CLAMP = 0.999
MAR_MAX_ITER = 100
MAR_REL_TOL = 1e-8
BURN_IN = 200

# Rolling forecast reporting
WEEK_LENGTH = 7

DESIGNS = ("example1", "example2", "example3")
TABLE_DESIGNS = {1: "example1", 2: "example2", 3: "example3"}
BASELINES = ("var1", "mar1", "ar1")
