"""Desk-scale laboratory for quantum error mitigation and
informationally-complete measurement estimation."""

__version__ = "0.1.0"
