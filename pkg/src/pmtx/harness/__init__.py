"""Reproduction harness: fills, crash campaigns, metrics, scenarios and the CLI."""
