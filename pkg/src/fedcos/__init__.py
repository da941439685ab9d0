"""Federated optimization simulator with a cosine direction penalty on local training."""

__version__ = "0.1.0"
