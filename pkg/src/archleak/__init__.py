"""Desk-scale cache side-channel lab for DNN architecture recovery."""

__version__ = "0.1.0"
