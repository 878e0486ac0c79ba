from .dipole import apply_A, build_kernel
from .reconstructor import Reconstructor, reconstruct

__all__ = ["apply_A", "build_kernel", "Reconstructor", "reconstruct"]
