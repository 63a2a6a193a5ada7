"""Few-shot clause span retrieval engine and Soft F1 evaluation harness."""

__version__ = "0.1.0"
