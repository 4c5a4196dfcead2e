"""Rank statistics, RDMs and representational similarity analysis."""
