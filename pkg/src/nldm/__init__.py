"""Sequence labeling with a latent projective dependency structure over
the labels, trained end to end with exact inside-outside gradients."""

__version__ = "0.1.0"
