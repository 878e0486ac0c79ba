"""Training-free QSM dipole inversion with a model-based deep image prior."""

__version__ = "1.0.0"
