"""Integrated-semigroup calculus for commuting operator sums, with an age-structured diffusion solver."""

__version__ = "0.1.0"
