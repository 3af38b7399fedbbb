"""Layout- and scale-robust convolutional scene descriptors with a spatially unstructured layer."""

__version__ = "0.1.0"
