"""CAM-guided cross-modal attention alignment for grid-image captioning."""

__version__ = "0.1.0"
