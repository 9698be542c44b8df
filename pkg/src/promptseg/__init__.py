"""promptseg: text-prompted universal image segmentation toolkit."""

__version__ = "0.1.0"
