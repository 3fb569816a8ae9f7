"""Option-implied discount factors, carry gaps and path-risk regressions."""

__version__ = "0.1.0"
