"""Flow-matching segmentation of thin curvilinear structures."""

__version__ = "0.1.0"
