"""Surface topography extraction and classification from dense point clouds."""

__version__ = "0.1.0"
