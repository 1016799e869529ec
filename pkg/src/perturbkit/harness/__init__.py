"""Benchmark ingestion and remapping construction."""

DATASETS = ("morph-er", "cwsd20", "fillergap", "synthetic")
