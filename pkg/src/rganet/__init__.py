"""RGANet: global-attention segmentation network, losses, and the MGRID metric."""

__version__ = "0.1.0"
