"""Experiment orchestration: configuration, checkpoints, metrics, drivers and rendering."""
