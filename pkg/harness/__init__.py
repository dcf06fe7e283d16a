"""Synthetic auction world, run configuration and the ega command line."""
