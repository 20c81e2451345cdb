"""Optimal withdrawal with a state-dependent rate bound on a one-dimensional diffusion."""

from .model import (CoefficientSpec, ModelSpec, ExtendedModel, ValidatedModel, affine, constant,
                    custom, extend_to_real_line, logistic, prepare, sqrt_affine, validate_model)

__version__ = "0.1.0"

__all__ = [
    "CoefficientSpec", "ModelSpec", "ExtendedModel", "ValidatedModel", "affine", "constant", "custom",
    "extend_to_real_line", "logistic", "prepare", "sqrt_affine", "validate_model",
]
