"""Branching random walks on free products of finite groups."""

__version__ = "0.3.0"
