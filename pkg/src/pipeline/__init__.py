"""Synthetic benchmark, experiment orchestration, reports and CLI commands."""
