"""VisionGRU: linear-complexity recurrent vision backbone on a numpy substrate."""

__version__ = "0.1.0"
