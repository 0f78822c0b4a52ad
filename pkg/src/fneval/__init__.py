"""Exact transformer constructions for key-value function evaluation, with checkers."""

__version__ = "0.1.0"
