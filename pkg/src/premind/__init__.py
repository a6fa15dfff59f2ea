"""premind: slide-level lecture video segmentation, indexing, and QA."""

__version__ = "0.1.0"
