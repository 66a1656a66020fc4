"""Multi-view mammography classification with hybrid convolutional / state-space encoders."""

__version__ = "0.1.0"
