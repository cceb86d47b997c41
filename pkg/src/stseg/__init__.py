"""stseg: road segmentation from satellite-style image time series.

A single-image encoder-decoder network produces per-pixel class probability
maps; a two-layer convolutional LSTM fuses the maps across acquisition days
into one stable map.  Everything runs on a small built-in tensor library with
reverse-mode autodiff, backed by compiled kernels when available.
"""

from .kernels import BACKEND, HAVE_NATIVE

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAVE_NATIVE", "__version__"]
