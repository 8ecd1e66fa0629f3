"""Synthetic data, training, evaluation, configuration and the command line."""
