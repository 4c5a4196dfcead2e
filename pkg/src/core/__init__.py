"""Core settings, domain models, errors and file I/O for ConceptLens."""
