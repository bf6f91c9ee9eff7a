"""Coarse-to-fine point cloud completion: structured feature aggregation,
2D-convolutional coarse decoding, and iterative-feedback upsampling, with
a self-contained tensor autodiff engine and evaluation metric suite."""

__version__ = "0.1.0"
