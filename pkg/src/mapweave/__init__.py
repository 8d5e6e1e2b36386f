"""mapweave - temporally consistent online vectorized map construction."""

__version__ = "0.1.0"
