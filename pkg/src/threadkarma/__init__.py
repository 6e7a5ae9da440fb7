"""Threaded-discussion popularity modeling with a graph-structured LSTM."""

__version__ = "0.1.0"
