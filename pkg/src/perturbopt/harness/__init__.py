"""Experiment harness: config files, CLI, sweeps, manifests."""
