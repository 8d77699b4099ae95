"""SPARTA: spatial-channel attention activations for adversarially robust CNNs."""

__version__ = "0.1.0"
