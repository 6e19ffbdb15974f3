"""Data, configuration, checkpoints, reports and the CLI pipeline."""
