"""Unsupervised word segmentation with bi-directional segmental language models."""

__version__ = "0.1.0"
