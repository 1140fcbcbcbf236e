"""Adversarial text detection from input-specific attention subnetworks, built on a small numpy autodiff core."""

__version__ = "0.1.0"
