"""Ranking, auction and FLOPs metrics."""
