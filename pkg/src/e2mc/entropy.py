"""m-spacings estimate of one-dimensional differential entropy.

For a sample sorted as x(1) <= ... <= x(n) and spacing order m,

    H = 1/(n-m) * sum_{i=1}^{n-m} log((n+1)/m * (x(i+m) - x(i)))

No bias correction is applied.  Spacings are floored at ``spacing_floor`` so
ties give a large negative but finite log and a zero gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .errors import ParameterError, ShapeError
from .ndcore import Var


@dataclass(frozen=True)
class MSpacingsConfig:
    m: int | None = None  # None: floor(sqrt(n))
    spacing_floor: float = 1e-12

    def __post_init__(self):
        if self.spacing_floor <= 0:
            raise ParameterError("spacing_floor must be positive")
        if self.m is not None and self.m < 1:
            raise ParameterError("m must be at least 1")

    def order(self, n: int) -> int:
        m = math.isqrt(n) if self.m is None else self.m
        if n < 4:
            raise ParameterError(f"m-spacings needs n >= 4 samples, got {n}")
        if not 1 <= m < n:
            raise ParameterError(f"spacing order m={m} invalid for n={n}")
        return m


DEFAULT = MSpacingsConfig()


def column_entropies(z: Var, cfg: MSpacingsConfig = DEFAULT) -> Var:
    """Per-column estimates of an ``n x d`` batch, returned as ``1 x d``."""
    n = z.shape[0]
    m = cfg.order(n)
    s, _ = nd.sort_columns_with_permutation(z)
    gaps = nd.clamp_min(s[m:, :] - s[: n - m, :], cfg.spacing_floor)
    return nd.mean(nd.log(gaps * ((n + 1) / m)), axis=0)


def m_spacings_entropy(column: Var, cfg: MSpacingsConfig = DEFAULT) -> Var:
    """Entropy estimate of a single ``n x 1`` column, as a ``1 x 1`` Var."""
    if column.shape[1] != 1:
        raise ShapeError(f"expected an n x 1 column, got {column.shape}")
    return column_entropies(column, cfg)


def marginal_entropy_loss(z_a: Var, z_b: Var, cfg: MSpacingsConfig = DEFAULT) -> Var:
    """(1/d) * sum_j [H_j(view a) + H_j(view b)] on compactified batches.

    The two views are summed, not averaged.
    """
    if z_a.shape != z_b.shape:
        raise ShapeError(f"view shapes differ: {z_a.shape} vs {z_b.shape}")
    d = z_a.shape[1]
    both = column_entropies(z_a, cfg) + column_entropies(z_b, cfg)
    return nd.sum(both) / d


def entropy_of_array(x, cfg: MSpacingsConfig = DEFAULT) -> np.ndarray:
    """Per-column estimates of a plain array (no gradient)."""
    z = nd.Tape().const(nd.as_matrix(x))
    return column_entropies(z, cfg).value.ravel()
