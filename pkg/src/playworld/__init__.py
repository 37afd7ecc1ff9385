"""Playable world models: tokenize, learn dynamics, collect, evaluate, play."""

__version__ = "0.1.0"
