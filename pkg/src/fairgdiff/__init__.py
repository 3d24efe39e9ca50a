"""Counterfactual-treatment latent graph diffusion for topology-fair graph generation."""

__version__ = "0.1.0"
