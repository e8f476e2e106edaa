"""Random-hyperplane hashing baseline.

Codes are signs of Gaussian projections of mean-centered inputs; it shares
the sign convention, packing, and evaluation harness with the learned codes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dadh.data import sign_pm1


@dataclass(frozen=True)
class LshModel:
    projection: np.ndarray
    center: np.ndarray
    seed: int

    def __post_init__(self):
        if self.projection.ndim != 2:
            raise ValueError("projection must be a (k, dim) matrix")
        if self.center.shape != (self.projection.shape[1],):
            raise ValueError(
                f"center shape {self.center.shape} != ({self.projection.shape[1]},)"
            )
        self.projection.setflags(write=False)
        self.center.setflags(write=False)

    @property
    def k(self) -> int:
        return self.projection.shape[0]

    @property
    def dim(self) -> int:
        return self.projection.shape[1]


def lsh_fit(dim: int, k: int, seed: int, center=None) -> LshModel:
    """Draw k standard-normal hyperplanes. center (the training-set feature
    mean, typically) is subtracted before projecting; defaults to zero."""
    if dim < 1 or k < 1:
        raise ValueError(f"bad sizes dim={dim}, k={k}")
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((k, dim))
    if center is None:
        center = np.zeros(dim)
    else:
        center = np.asarray(center, dtype=np.float64).copy()
        if center.shape != (dim,):
            raise ValueError(f"center shape {center.shape} != ({dim},)")
    return LshModel(projection=projection, center=center, seed=int(seed))


def lsh_encode(model: LshModel, xs) -> np.ndarray:
    """Sign codes for one vector or a batch of rows; sign(0) = +1."""
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 1
    xs = np.atleast_2d(xs)
    if xs.shape[1] != model.dim:
        raise ValueError(f"input dim {xs.shape[1]} != model dim {model.dim}")
    codes = sign_pm1((xs - model.center) @ model.projection.T)
    return codes[0] if single else codes
