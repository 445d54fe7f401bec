"""Opcode-subsequence fingerprinting and near-duplicate filtering for Android app corpora."""

__version__ = "0.1.0"
