"""ECG triage toolkit: annotated 12-lead traces to vectorcardiographic
heterogeneity features and rebalanced boosted-tree outcome models."""

__version__ = "0.1.0"
