"""Entry point for running mapweave as a module."""

from mapweave.cli import main

if __name__ == "__main__":
    main()
