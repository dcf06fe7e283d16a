"""Autodiff tensors, layers and optimizers for the EGA models."""
