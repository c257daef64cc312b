"""Experiment harness: presets, metrics, result files and the command line."""
