"""Classical two-charge (hydrogen-like) atom dynamics in external magnetic fields."""

__version__ = "0.1.0"
