"""Poisoning attacks on graph link prediction via weighted meta-gradients."""

__version__ = "0.1.0"
