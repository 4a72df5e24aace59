"""Long-view spike features and a convolution-attention classifier for EEG/MEG clips."""

__version__ = "0.1.0"
