"""Batch sentence-embedding sidecar: HTTP /embed service plus an offline
KSEV vector-file exporter."""

__version__ = "0.1.0"
