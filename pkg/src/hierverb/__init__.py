"""Few-shot hierarchical text classification with hierarchy-aware verbalizers."""

__version__ = "0.1.0"
