"""Friends-of-friends instrumental-variable laboratory for linear-in-means peer effects."""

__version__ = "0.1.0"
