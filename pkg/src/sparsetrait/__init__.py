"""Sparse-coded spectrogram patch histograms for binary speaker-trait classification."""

__version__ = "0.1.0"
