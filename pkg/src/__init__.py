"""ConceptLens - concept-specific neuron search and ablation toolkit."""
