"""Sparse-view Gaussian splatting with wavelet-domain novel-view repair."""

__version__ = "0.1.0"
