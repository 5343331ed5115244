"""Maps from raw embeddings to the unit hypercube, and hypersphere helpers."""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy import special

from . import ndcore as nd
from .errors import ParameterError
from .ndcore import Var

CLAMP_EPS = 1e-12
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


class CompactTransform(str, enum.Enum):
    SIGMOID = "sigmoid"
    GAUSSIAN_CDF = "gaussian_cdf"
    IDENTITY = "identity"


def apply(t: CompactTransform | str, z: Var) -> Var:
    """Entrywise compactification into [eps, 1 - eps].

    Sigmoid suits bases whose embeddings live in R^d; the standard normal CDF
    suits bases that normalize onto the sphere, since uniform CDF outputs mean
    standard normal inputs and normalized i.i.d. normals are uniform on the
    sphere.
    """
    t = CompactTransform(t)
    if t is CompactTransform.SIGMOID:
        out = nd.sigmoid(z)
    elif t is CompactTransform.GAUSSIAN_CDF:
        out = 0.5 * (1.0 + nd.erf(z * _INV_SQRT2))
    else:
        v = z.value
        if np.any((v < 0.0) | (v > 1.0)) or np.isnan(v).any():
            raise ValueError("identity transform needs inputs already in [0, 1]")
        out = z
    return nd.clamp(out, CLAMP_EPS, 1.0 - CLAMP_EPS)


def apply_array(t: CompactTransform | str, z) -> np.ndarray:
    """Tape-free version of :func:`apply` for evaluation code."""
    return apply(t, nd.Tape().const(z)).value


def l2_normalize_rows(z: Var) -> Var:
    norms_sq = nd.frobenius_sq(z, axis=1)
    if np.any(norms_sq.value == 0.0):
        raise ValueError("cannot normalize a zero row")
    return z / nd.sqrt(norms_sq)


def normal_cdf(x) -> np.ndarray:
    return special.ndtr(np.asarray(x, dtype=np.float64))


def normal_ppf(u) -> np.ndarray:
    """Inverse standard normal CDF (used by round-trip checks only)."""
    return special.ndtri(np.asarray(u, dtype=np.float64))


def make_rng(seed) -> np.random.Generator:
    """The package-wide generator: numpy PCG64 seeded via SeedSequence."""
    return np.random.Generator(np.random.PCG64(seed))


def sample_uniform_sphere(n: int, d: int, seed) -> np.ndarray:
    """``n`` points uniform on S^{d-1}: normalized i.i.d. standard normals."""
    if d < 2:
        raise ParameterError(f"sphere sampling needs d >= 2, got {d}")
    if n < 1:
        raise ParameterError(f"n must be positive, got {n}")
    g = make_rng(seed).standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)
