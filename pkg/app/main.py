"""
Entry point for the matseg CLI.
"""

from cli.cli import main

if __name__ == "__main__":
    main()
