"""Accident anticipation from dashcam frames and text with driver-attention co-training."""

__version__ = "0.1.0"
