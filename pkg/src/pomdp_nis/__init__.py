"""Importance-sampled return estimates for policies with memory on tabular POMDPs."""

__version__ = "0.1.0"
