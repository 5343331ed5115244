"""Training criteria built on the tape.

The composite add-on is

    L = L_base - beta * L_entropy(Psi(Z), Psi(Z')) + gamma * L_cov(Psi(Z), Psi(Z'))

where Psi compactifies each coordinate into [0, 1].  The base losses
(VICReg, SwAV, SimSiam) and the comparison add-ons (VCReg, uniformity on the
hypersphere, nuclear-norm manifold capacity) live here too.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import ndcore as nd
from .entropy import MSpacingsConfig, marginal_entropy_loss
from .errors import ConfigError, NumericError, ParameterError, ShapeError
from .ndcore import Var
from .transforms import CompactTransform, apply, l2_normalize_rows


class Base(str, enum.Enum):
    VICREG = "vicreg"
    SWAV = "swav"
    SIMSIAM = "simsiam"
    NONE = "none"


class Addon(str, enum.Enum):
    E2MC = "e2mc"
    VCREG = "vcreg"
    AUH = "auh"
    MMCR = "mmcr"
    NONE = "none"


@dataclass
class VICRegParams:
    lam: float = 25.0
    mu: float = 25.0
    nu: float = 1.0
    eta: float = 1.0
    eps: float = 1e-4
    # "raw": unscaled K = Zc^T Zc; "sample": K/(n-1)
    # with a per-entry mean invariance term (batch-size independent scale).
    gram: str = "raw"

    def __post_init__(self):
        if self.eta <= 0 or self.eps < 0:
            raise ParameterError("VICReg needs eta > 0 and eps >= 0")
        if self.gram not in ("raw", "sample"):
            raise ParameterError(f"gram must be 'raw' or 'sample', got {self.gram!r}")


@dataclass
class SwAVParams:
    tau: float = 0.1
    n_prototypes: int = 16
    sinkhorn_iters: int = 3
    sinkhorn_eps: float = 0.05

    def __post_init__(self):
        if self.tau <= 0 or self.n_prototypes < 2:
            raise ParameterError("SwAV needs tau > 0 and at least 2 prototypes")


@dataclass
class SimSiamParams:
    predictor_hidden: int = 8


@dataclass
class AUHParams:
    lam: float = 0.5
    t: float = 2.0

    def __post_init__(self):
        if self.t <= 0:
            raise ParameterError("uniformity potential needs t > 0")


@dataclass
class MMCRParams:
    lam: float = 0.005
    n_views: int = 8

    def __post_init__(self):
        if self.n_views < 2:
            raise ParameterError("MMCR needs at least 2 views")


@dataclass
class VCRegParams:
    mu: float = 0.1
    nu: float = 0.001
    eta: float = 1.0
    eps: float = 1e-4

    def __post_init__(self):
        if self.mu < 0 or self.nu < 0:
            raise ParameterError("VCReg coefficients must be nonnegative")


# default (beta, gamma) for continued pre-training, per base method
PRESET_COEFFICIENTS = {
    Base.VICREG: (1000.0, 100.0),
    Base.SWAV: (1.0, 25.0),
    Base.SIMSIAM: (0.001, 0.01),
}

# Normalizing bases need the Gaussian CDF so that uniform marginals mean a
# uniform distribution on the sphere after normalization.
NATURAL_TRANSFORM = {
    Base.VICREG: CompactTransform.SIGMOID,
    Base.NONE: CompactTransform.SIGMOID,
    Base.SWAV: CompactTransform.GAUSSIAN_CDF,
    Base.SIMSIAM: CompactTransform.GAUSSIAN_CDF,
}


@dataclass
class CriterionSpec:
    base: Base = Base.VICREG
    addon: Addon = Addon.NONE
    beta: float = 0.0
    gamma: float = 0.0
    transform: CompactTransform | None = None  # None: natural choice for base
    vicreg: VICRegParams = field(default_factory=VICRegParams)
    swav: SwAVParams = field(default_factory=SwAVParams)
    simsiam: SimSiamParams = field(default_factory=SimSiamParams)
    auh: AUHParams = field(default_factory=AUHParams)
    mmcr: MMCRParams = field(default_factory=MMCRParams)
    vcreg: VCRegParams = field(default_factory=VCRegParams)
    entropy: MSpacingsConfig = field(default_factory=MSpacingsConfig)
    freeze_prototypes: bool = False

    def __post_init__(self):
        self.base = Base(self.base)
        self.addon = Addon(self.addon)
        if self.transform is not None:
            self.transform = CompactTransform(self.transform)
        if not (np.isfinite(self.beta) and np.isfinite(self.gamma)):
            raise ConfigError("beta and gamma must be finite", "$.criterion")
        self.validate()

    @property
    def compact_transform(self) -> CompactTransform:
        return self.transform or NATURAL_TRANSFORM[self.base]

    def validate(self):
        if self.addon is Addon.E2MC:
            t = self.compact_transform
            if t is not NATURAL_TRANSFORM[self.base]:
                raise ConfigError(
                    f"base {self.base.value} needs transform "
                    f"{NATURAL_TRANSFORM[self.base].value}, got {t.value}",
                    "$.criterion.transform",
                )
        if self.addon is Addon.MMCR and self.base is Base.NONE:
            raise ConfigError("mmcr add-on needs a base loss", "$.criterion.addon")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base"] = self.base.value
        d["addon"] = self.addon.value
        d["transform"] = None if self.transform is None else self.transform.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CriterionSpec":
        sub = {
            "vicreg": VICRegParams, "swav": SwAVParams, "simsiam": SimSiamParams,
            "auh": AUHParams, "mmcr": MMCRParams, "vcreg": VCRegParams,
            "entropy": MSpacingsConfig,
        }
        known = {f.name for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            if k not in known:
                raise ConfigError(f"unknown key {k!r}", "$.criterion")
            kw[k] = sub[k](**v) if k in sub and isinstance(v, dict) else v
        return cls(**kw)


# -- shared pieces ------------------------------------------------------------

def _check_batch(z: Var, name: str = "batch"):
    if z.shape[0] < 2:
        raise ParameterError(f"{name} needs n >= 2 rows, got {z.shape[0]}")


def _same_shape(a: Var, b: Var):
    if a.shape != b.shape:
        raise ShapeError(f"view shapes differ: {a.shape} vs {b.shape}")


def centered_gram(z: Var) -> Var:
    """K = Zc^T Zc with Zc the column-centered batch."""
    zc = z - nd.mean(z, axis=0)
    return zc.T @ zc


def _offdiag_sq(k: Var) -> Var:
    d = k.shape[0]
    return nd.frobenius_sq(k * (1.0 - np.eye(d)))


def _variance_hinge(z: Var, eta: float, eps: float, scale: float = 1.0) -> Var:
    """(1/d) Tr(max(0, eta - sqrt(scale * diag K + eps))) for one view."""
    zc = z - nd.mean(z, axis=0)
    diag_k = nd.sum(nd.square(zc), axis=0)
    if scale != 1.0:
        diag_k = diag_k * scale
    std = nd.sqrt(diag_k + eps)
    return nd.mean(nd.relu(eta - std))


# -- add-on terms -------------------------------------------------------------

def covariance_loss(z_a: Var, z_b: Var) -> Var:
    """(1/(nd)) (||offdiag K||_F^2 + ||offdiag K'||_F^2) on centered batches."""
    _same_shape(z_a, z_b)
    _check_batch(z_a)
    n, d = z_a.shape
    return (_offdiag_sq(centered_gram(z_a)) + _offdiag_sq(centered_gram(z_b))) / (n * d)


def covariance_loss_sample_form(z_a: Var, z_b: Var) -> Var:
    """(1/d) sum_{j != k} Cov_jk^2 with the 1/(n-1) sample covariance, both views.

    Differs from :func:`covariance_loss` by the factor n/(n-1)^2; kept for
    comparison only.
    """
    _same_shape(z_a, z_b)
    _check_batch(z_a)
    n, d = z_a.shape
    scale = 1.0 / (n - 1)
    return (
        _offdiag_sq(centered_gram(z_a) * scale) + _offdiag_sq(centered_gram(z_b) * scale)
    ) / d


def entropy_and_covariance(
    z_a: Var, z_b: Var, transform, cfg: MSpacingsConfig = MSpacingsConfig()
) -> tuple[Var, Var]:
    ca, cb = apply(transform, z_a), apply(transform, z_b)
    return marginal_entropy_loss(ca, cb, cfg), covariance_loss(ca, cb)


def e2mc_loss(
    base_loss: Var,
    z_a: Var,
    z_b: Var,
    transform,
    beta: float,
    gamma: float,
    cfg: MSpacingsConfig = MSpacingsConfig(),
) -> Var:
    """base - beta * entropy + gamma * covariance on compactified raw embeddings.

    Terms with a zero coefficient are not evaluated, so beta = gamma = 0
    returns ``base_loss`` itself.
    """
    _same_shape(z_a, z_b)
    if beta == 0.0 and gamma == 0.0:
        return base_loss
    ca, cb = apply(transform, z_a), apply(transform, z_b)
    out = base_loss
    if beta != 0.0:
        out = out - beta * marginal_entropy_loss(ca, cb, cfg)
    if gamma != 0.0:
        out = out + gamma * covariance_loss(ca, cb)
    return out


# -- base losses --------------------------------------------------------------

def vicreg_terms(z_a: Var, z_b: Var, p: VICRegParams) -> dict[str, Var]:
    """Unweighted invariance, variance and covariance terms."""
    _same_shape(z_a, z_b)
    _check_batch(z_a)
    n, d = z_a.shape
    if p.gram == "raw":
        invariance = nd.frobenius_sq(z_a - z_b) / n
        variance = 0.5 * (
            _variance_hinge(z_a, p.eta, p.eps) + _variance_hinge(z_b, p.eta, p.eps)
        )
        covariance = 0.5 * covariance_loss(z_a, z_b)
    else:
        s = 1.0 / (n - 1)
        invariance = nd.frobenius_sq(z_a - z_b) / (n * d)
        variance = 0.5 * (
            _variance_hinge(z_a, p.eta, p.eps, s) + _variance_hinge(z_b, p.eta, p.eps, s)
        )
        covariance = 0.5 * covariance_loss_sample_form(z_a, z_b)
    return {"invariance": invariance, "variance": variance, "covariance": covariance}


def vicreg_loss(z_a: Var, z_b: Var, p: VICRegParams = VICRegParams()) -> Var:
    t = vicreg_terms(z_a, z_b, p)
    return p.lam * t["invariance"] + p.mu * t["variance"] + p.nu * t["covariance"]


def vcreg_loss(z_a: Var, z_b: Var, p: VCRegParams = VCRegParams()) -> Var:
    """mu * variance hinge (view-averaged) + nu * covariance (view-summed)."""
    _same_shape(z_a, z_b)
    _check_batch(z_a)
    variance = 0.5 * (
        _variance_hinge(z_a, p.eta, p.eps) + _variance_hinge(z_b, p.eta, p.eps)
    )
    return p.mu * variance + p.nu * covariance_loss(z_a, z_b)


def sinkhorn_assign(scores, iters: int = 3, eps: float = 0.05) -> np.ndarray:
    """Balanced soft assignments of n samples to K prototypes.

    Rows sum to 1; columns approach n/K as ``iters`` grows.  Works on plain
    arrays and never touches a tape.
    """
    s = np.asarray(scores.value if isinstance(scores, Var) else scores, dtype=np.float64)
    if not np.isfinite(s).all():
        raise ValueError("sinkhorn: scores must be finite")
    if iters < 1 or eps <= 0:
        raise ParameterError("sinkhorn needs iters >= 1 and eps > 0")
    n, k = s.shape
    q = np.exp((s - s.max()) / eps)
    q /= q.sum()
    for _ in range(iters):
        q /= q.sum(axis=0, keepdims=True)
        q /= k
        q /= q.sum(axis=1, keepdims=True)
        q /= n
    return q * n


def swav_loss(
    z_a: Var, z_b: Var, prototypes: Var, p: SwAVParams = SwAVParams()
) -> Var:
    """Swapped prediction: -mean_i [q_a . log p_b + q_b . log p_a].

    Assignments q come from Sinkhorn on detached scores; predictions p are a
    softmax of normalized-embedding/prototype scores at temperature tau.
    """
    _same_shape(z_a, z_b)
    if prototypes.shape[0] != z_a.shape[1]:
        raise ShapeError(f"prototypes {prototypes.shape} do not match d={z_a.shape[1]}")
    s_a = l2_normalize_rows(z_a) @ prototypes
    s_b = l2_normalize_rows(z_b) @ prototypes
    q_a = sinkhorn_assign(s_a.value, p.sinkhorn_iters, p.sinkhorn_eps)
    q_b = sinkhorn_assign(s_b.value, p.sinkhorn_iters, p.sinkhorn_eps)
    logp_a = nd.log_softmax_rows(s_a / p.tau)
    logp_b = nd.log_softmax_rows(s_b / p.tau)
    n = z_a.shape[0]
    return -(nd.sum(logp_b * q_a) + nd.sum(logp_a * q_b)) / n


def _row_cosine(a: Var, b: Var) -> Var:
    return nd.sum(l2_normalize_rows(a) * l2_normalize_rows(b), axis=1)


def simsiam_loss(z_a: Var, z_b: Var, predictor: Callable[[Var], Var]) -> Var:
    """-1/2 [cos(p(z_a), sg(z_b)) + cos(p(z_b), sg(z_a))], batch mean."""
    _same_shape(z_a, z_b)
    cos_ab = _row_cosine(predictor(z_a), nd.detach(z_b))
    cos_ba = _row_cosine(predictor(z_b), nd.detach(z_a))
    return -0.5 * (nd.mean(cos_ab) + nd.mean(cos_ba))


# -- comparison add-ons ---------------------------------------------------------

def _log_mean_potential(z: Var, t: float) -> Var:
    n = z.shape[0]
    sq = nd.frobenius_sq(z, axis=1)
    dist = sq + sq.T - 2.0 * (z @ z.T)
    off = 1.0 - np.eye(n)
    pot = nd.exp(dist * (-t)) * off
    return nd.log(nd.sum(pot) / (n * (n - 1)))


def auh_uniformity_loss(z_a: Var, z_b: Var, p: AUHParams = AUHParams()) -> Var:
    """log mean_{p != q} exp(-t ||z_p - z_q||^2), summed over both views.

    Unweighted: callers multiply by ``p.lam``.
    """
    _same_shape(z_a, z_b)
    _check_batch(z_a)
    return _log_mean_potential(z_a, p.t) + _log_mean_potential(z_b, p.t)


def svd_jacobi(a, tol: float = 1e-10, max_sweeps: int = 100):
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Returns ``(u, s, vt)`` with singular values descending.  Intended for the
    small matrices here (the short side is the embedding dimension).
    """
    a = np.array(a, dtype=np.float64)
    flipped = a.shape[0] < a.shape[1]
    if flipped:
        a = a.T
    m, n = a.shape
    v = np.eye(n)
    off = np.inf
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                ai, aj = a[:, i], a[:, j]
                alpha = ai @ ai
                beta = aj @ aj
                gamma = ai @ aj
                if alpha == 0.0 or beta == 0.0:
                    continue
                rel = abs(gamma) / np.sqrt(alpha * beta)
                off = max(off, rel)
                if rel <= tol:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                a[:, [i, j]] = np.column_stack((c * ai - s * aj, s * ai + c * aj))
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i], v[:, j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            break
    else:
        raise NumericError(
            f"Jacobi SVD did not converge in {max_sweeps} sweeps "
            f"(largest remaining column cosine {off:.3e}, tol {tol:.1e})"
        )
    sv = np.linalg.norm(a, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    v = v[:, order]
    a = a[:, order]
    u = np.zeros_like(a)
    nz = sv > 0
    u[:, nz] = a[:, nz] / sv[nz]
    if flipped:
        return v, sv, u.T
    return u, sv, v.T


def nuclear_norm(c: Var, rank_tol: float = 1e-12) -> Var:
    """Sum of singular values; gradient U V^T over the nonzero spectrum."""
    u, s, vt = svd_jacobi(c.value)
    keep = s > rank_tol * max(s[0], 1e-300) if s.size else s > 0
    grad = u[:, keep] @ vt[keep, :]
    return c.tape.record(np.array([[s.sum()]]), (c,), lambda g: (g * grad,))


def mmcr_loss(views: Sequence[Var], lam: float = MMCRParams.lam) -> Var:
    """-lam * ||C||_* with C the mean over views."""
    if len(views) < 2:
        raise ParameterError("MMCR needs at least 2 views")
    shape = views[0].shape
    for v in views[1:]:
        if v.shape != shape:
            raise ShapeError("all MMCR views must share a shape")
    c = views[0]
    for v in views[1:]:
        c = c + v
    c = c / float(len(views))
    return -lam * nuclear_norm(c)
