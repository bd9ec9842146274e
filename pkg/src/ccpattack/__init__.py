"""Color channel perturbation attacks, baselines, and a CCP-augmentation defense."""

__version__ = "0.1.0"
