"""Quantum device fingerprinting with CHSH attestation and signed, hash-chained provenance."""

__version__ = "0.1.0"
