"""Desk-scale knowledge-distillation toolkit: configurable losses, layer mappings,
augmentation policies, configuration search, importance analysis and a
meta-recommender, all on small numpy models."""

__version__ = "0.1.0"
