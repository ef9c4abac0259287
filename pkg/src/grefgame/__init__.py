"""Graph referential game: agents, training loop, and protocol analysis."""

__version__ = "0.1.0"
