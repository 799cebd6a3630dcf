"""Functional and cycle-level model of a multiplier-less NE-array inference accelerator."""

from .psiquant import PrecisionMode, PsiTerm, PsiWeight, decompose_weight, decompose_tensor, reconstruct

__all__ = ["PrecisionMode", "PsiTerm", "PsiWeight", "decompose_weight", "decompose_tensor", "reconstruct"]
__version__ = "0.1.0"
