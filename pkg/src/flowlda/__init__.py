"""Deep generative discriminant analysis with normalizing flows."""

__version__ = "0.1.0"
