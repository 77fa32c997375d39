"""Unsupervised typography style transfer with a skip-connected GAN."""

__version__ = "0.1.0"
