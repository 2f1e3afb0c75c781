"""Two-stage one-shot object detection with episodic training."""

__version__ = "0.1.0"
