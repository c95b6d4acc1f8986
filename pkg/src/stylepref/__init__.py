"""Pairwise preference toolkit for speech style evaluation."""

__version__ = "0.1.0"
