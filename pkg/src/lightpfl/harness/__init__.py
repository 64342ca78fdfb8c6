"""Scenario configuration, datasets, metrics and the command-line entry point."""
