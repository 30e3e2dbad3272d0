"""Hypergraph-based high-order relation modeling.

Fuzzy C-Means hyperedges, relational artifact amplification, a prototype
bank with gated EMA learning, gap-score classification, and exact
O-information analysis.
"""
from . import amplifier, bank, fcm, formats, hypergraph, oinfo, pipeline
from .errors import ConfigurationError, DataError, HoiGraphError

__version__ = "0.1.0"

__all__ = [
    "amplifier", "bank", "fcm", "formats", "hypergraph", "oinfo", "pipeline",
    "ConfigurationError", "DataError", "HoiGraphError",
]
