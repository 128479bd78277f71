"""Synthetic triplet factory, hard-negative mining, contrastive batching and seven-task embedding evaluation."""

__version__ = "0.1.0"
