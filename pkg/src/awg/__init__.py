"""Wavelet-attention forecaster: learnable filter banks, cross-scale fusion,
frequency-aware attention, hierarchical prediction."""

__version__ = "0.1.0"
