"""Joint-embedding training and continued pre-training."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .. import ndcore as nd
from ..criteria import (
    Addon, Base, CriterionSpec, auh_uniformity_loss, covariance_loss, e2mc_loss,
    mmcr_loss, simsiam_loss, swav_loss, vcreg_loss, vicreg_terms,
)
from ..entropy import entropy_of_array
from ..errors import ConfigError, NumericError
from ..transforms import apply_array, l2_normalize_rows, make_rng
from .data import AugmentSpec, SyntheticDataset, augment_views
from .model import BoundModel, ModelState

log = logging.getLogger(__name__)

TRACE_FIELDS = (
    "epoch", "lr", "loss", "base", "invariance", "entropy", "covariance", "addon_term",
)


@dataclass
class TrainConfig:
    dataset: SyntheticDataset = field(default_factory=SyntheticDataset)
    batch_size: int = 256
    epochs: int = 100
    learning_rate: float = 0.1
    lr_schedule: str = "cosine"
    momentum: float = 0.9
    weight_decay: float = 0.0
    grad_clip: float | None = 1.0  # global L2 norm; None disables
    criterion: CriterionSpec = field(default_factory=CriterionSpec)
    augmentation: AugmentSpec = field(default_factory=AugmentSpec)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 4:
            raise ConfigError("batch_size must be >= 4", "$.train.batch_size")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", "$.train.epochs")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule must be constant or cosine", "$.train.lr_schedule")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0", "$.train.learning_rate")
        if self.batch_size > self.dataset.n_samples:
            raise ConfigError("batch_size exceeds dataset size", "$.train.batch_size")

    def lr_at(self, i: int) -> float:
        if self.lr_schedule == "constant" or self.epochs == 0:
            return self.learning_rate
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * i / self.epochs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["criterion"] = self.criterion.to_dict()
        return d


@lru_cache(maxsize=8)
def _dataset_cached(ds: tuple) -> tuple[np.ndarray, np.ndarray]:
    x, y = SyntheticDataset(**dict(ds)).generate()
    x.setflags(write=False)
    y.setflags(write=False)
    return x, y


def load_dataset(ds: SyntheticDataset) -> tuple[np.ndarray, np.ndarray]:
    return _dataset_cached(tuple(sorted(ds.to_dict().items())))


def n_views_for(spec: CriterionSpec) -> int:
    return spec.mmcr.n_views if spec.addon is Addon.MMCR else 2


def compute_loss(bound: BoundModel, spec: CriterionSpec, views: list[np.ndarray]):
    """Total loss Var plus a dict of scalar components for logging."""
    tape = bound.tape
    zs = [bound.project(bound.encode(v)) for v in views]
    za, zb = zs[0], zs[1]
    parts = {}
    if spec.base is Base.VICREG:
        p = spec.vicreg
        t = vicreg_terms(za, zb, p)
        base = p.lam * t["invariance"] + p.mu * t["variance"] + p.nu * t["covariance"]
        parts["invariance"] = t["invariance"].item()
    elif spec.base is Base.SWAV:
        base = swav_loss(za, zb, bound.prototypes, spec.swav)
    elif spec.base is Base.SIMSIAM:
        base = simsiam_loss(za, zb, bound.predict)
    else:
        base = tape.const(0.0)
    parts["base"] = base.item()

    if spec.addon is Addon.E2MC:
        loss = e2mc_loss(base, za, zb, spec.compact_transform, spec.beta, spec.gamma, spec.entropy)
    elif spec.addon is Addon.VCREG:
        loss = base + vcreg_loss(za, zb, spec.vcreg)
    elif spec.addon is Addon.AUH:
        ua, ub = l2_normalize_rows(za), l2_normalize_rows(zb)
        loss = base + spec.auh.lam * auh_uniformity_loss(ua, ub, spec.auh)
    elif spec.addon is Addon.MMCR:
        loss = base + mmcr_loss([l2_normalize_rows(z) for z in zs], spec.mmcr.lam)
    else:
        loss = base

    # the entropy/covariance pair is tracked for every run, gradient-free
    ca = apply_array(spec.compact_transform, za.value)
    cb = apply_array(spec.compact_transform, zb.value)
    ent = float((entropy_of_array(ca, spec.entropy) + entropy_of_array(cb, spec.entropy)).mean())
    t2 = nd.Tape()
    cov = covariance_loss(t2.const(ca), t2.const(cb)).item()
    parts["entropy"] = ent
    parts["covariance"] = cov
    parts["addon_term"] = -spec.beta * ent + spec.gamma * cov
    return loss, parts


def _batch_stats(views, loss_parts) -> str:
    lines = [f"loss parts: {loss_parts}"]
    for i, v in enumerate(views):
        lines.append(
            f"view {i}: mean={np.nanmean(v):.4g} std={np.nanstd(v):.4g} "
            f"min={np.nanmin(v):.4g} max={np.nanmax(v):.4g} nan={int(np.isnan(v).sum())}"
        )
    return "\n".join(lines)


def train_step(model: ModelState, cfg: TrainConfig, views, lr: float) -> dict:
    spec = cfg.criterion
    tape = nd.Tape()
    bound = model.bind(tape)
    try:
        loss, parts = compute_loss(bound, spec, views)
    except NumericError as e:
        raise NumericError(
            f"{e} at epoch {model.epoch} step {model.step}\n" + _batch_stats(views, {})
        ) from e
    value = loss.item()
    parts["loss"] = value
    if not math.isfinite(value):
        raise NumericError(
            f"non-finite loss at epoch {model.epoch} step {model.step}\n"
            + _batch_stats(views, parts)
        )
    grads = tape.backward(loss)
    frozen = spec.freeze_prototypes
    scale = 1.0
    if cfg.grad_clip is not None:
        norm = math.sqrt(math.fsum(float((g * g).sum()) for g in grads.values()))
        if norm > cfg.grad_clip:
            scale = cfg.grad_clip / norm
    parts["grad_norm"] = norm if cfg.grad_clip is not None else float("nan")
    new_arrays, new_vel = [], []
    for p, v in zip(bound.params, model.velocity):
        w = p.value
        if frozen and p.name.startswith("prototypes"):
            new_arrays.append(w)
            new_vel.append(v)
            continue
        g = grads[p] if scale == 1.0 else grads[p] * scale
        if cfg.weight_decay:
            g = g + cfg.weight_decay * w
        v = cfg.momentum * v + g
        new_arrays.append(w - lr * v)
        new_vel.append(v)
    if not all(np.isfinite(w).all() for w in new_arrays):
        raise NumericError(
            f"parameters became non-finite at epoch {model.epoch} step {model.step}\n"
            + _batch_stats(views, parts)
        )
    model.set_arrays(new_arrays)
    model.velocity = new_vel
    if model.prototypes and not frozen:
        c = model.prototypes[0]
        model.prototypes = [c / np.linalg.norm(c, axis=0, keepdims=True)]
    model.step += 1
    return parts


def train(model: ModelState, cfg: TrainConfig) -> tuple[ModelState, list[dict]]:
    """Run ``cfg.epochs`` epochs of SGD with momentum on ``cfg.criterion``.

    Returns a new state and one trace row per epoch (component means over the
    epoch's batches).  Epoch ``e`` shuffles and augments with a generator keyed
    by ``(model.seed, e)``.
    """
    model = model.copy()
    x, _ = load_dataset(cfg.dataset)
    n = x.shape[0]
    b = cfg.batch_size
    n_views = n_views_for(cfg.criterion)
    trace = []
    for i in range(cfg.epochs):
        lr = cfg.lr_at(i)
        rng = make_rng([model.seed, model.epoch])
        order = rng.permutation(n)
        acc: dict[str, list[float]] = {}
        for start in range(0, n - b + 1, b):
            batch = x[order[start:start + b]]
            views = augment_views(batch, cfg.augmentation, rng, n_views)
            parts = train_step(model, cfg, views, lr)
            for k, v in parts.items():
                acc.setdefault(k, []).append(v)
        model.epoch += 1
        row = {"epoch": model.epoch, "lr": lr}
        for k in TRACE_FIELDS[2:]:
            row[k] = float(np.mean(acc[k])) if k in acc else float("nan")
        trace.append(row)
        log.debug("epoch %d: %s", model.epoch, row)
    return model, trace


def check_compatible(model: ModelState, spec: CriterionSpec) -> None:
    base = model.meta.get("base")
    if base is not None and base != spec.base.value:
        raise ConfigError(
            f"checkpoint was trained with base {base!r}, criterion uses "
            f"{spec.base.value!r}", "$.criterion.base",
        )
    if spec.base is Base.SWAV and not model.prototypes:
        raise ConfigError("SwAV needs prototypes in the checkpoint", "$.criterion.base")
    if spec.base is Base.SIMSIAM and not model.predictor:
        raise ConfigError("SimSiam needs a predictor in the checkpoint", "$.criterion.base")


def continue_pretraining(
    checkpoint: ModelState,
    addon: CriterionSpec,
    cfg: TrainConfig,
    epochs: int = 10,
    lr_factor: float = 0.01,
) -> tuple[ModelState, list[dict]]:
    """Resume a base checkpoint under ``addon`` at ``lr_factor`` x the base rate.

    Everything else in ``cfg`` (batch size, momentum, augmentation) is kept;
    the schedule becomes constant.
    """
    spec = addon
    check_compatible(checkpoint, spec)
    cont = replace(
        cfg,
        criterion=spec,
        epochs=epochs,
        learning_rate=cfg.learning_rate * lr_factor,
        lr_schedule="constant",
    )
    return train(checkpoint, cont)


def init_model(cfg: TrainConfig, encoder_hidden=(64, 64), rep_dim=16,
               projector_hidden=(32,), embed_dim=8) -> ModelState:
    """Fresh model sized for ``cfg``'s dataset and base method."""
    spec = cfg.criterion
    return ModelState.init(
        encoder_sizes=[cfg.dataset.input_dim, *encoder_hidden, rep_dim],
        projector_sizes=[rep_dim, *projector_hidden, embed_dim],
        predictor_hidden=spec.simsiam.predictor_hidden if spec.base is Base.SIMSIAM else None,
        n_prototypes=spec.swav.n_prototypes if spec.base is Base.SWAV else None,
        seed=cfg.seed,
        base=spec.base.value,
    )
