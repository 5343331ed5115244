"""Run configuration: JSON schema, dataclass view and named presets.

A run config is a JSON object with the sections below; every section and key
is optional, unknown keys are rejected::

    {"dataset": {...}, "augmentation": {...}, "model": {...}, "train": {...},
     "criterion": {...}, "continue": {...}, "diagnostics": {...}, "sweep": {...}}
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema

from .criteria import CriterionSpec
from .errors import ConfigError, ParameterError
from .trainer import AugmentSpec, SyntheticDataset, TrainConfig
from .trainer.data import GENERATORS

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_posint = {"type": "integer", "minimum": 1}
_intlist = {"type": "array", "items": _posint}


def _obj(props: dict, **extra) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, **extra}


_VICREG = _obj({
    "lam": _num, "mu": _num, "nu": _num, "eta": _pos, "eps": _nonneg,
    "gram": {"enum": ["raw", "sample"]},
})

SCHEMA = _obj({
    "dataset": _obj({
        "generator": {"enum": list(GENERATORS)},
        "n_samples": {"type": "integer", "minimum": 4},
        "n_classes": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "spread": _nonneg,
    }),
    "augmentation": _obj({
        "noise_std": _nonneg, "scale_low": _pos, "scale_high": _pos,
        "max_shift": {"type": "integer", "minimum": 0},
    }),
    "model": _obj({
        "encoder_hidden": _intlist, "rep_dim": _posint,
        "projector_hidden": _intlist, "embed_dim": {"type": "integer", "minimum": 2},
    }),
    "train": _obj({
        "batch_size": {"type": "integer", "minimum": 4},
        "epochs": {"type": "integer", "minimum": 0},
        "learning_rate": _nonneg,
        "lr_schedule": {"enum": ["constant", "cosine"]},
        "momentum": {"type": "number", "minimum": 0, "maximum": 1},
        "weight_decay": _nonneg,
        "grad_clip": {"anyOf": [_pos, {"type": "null"}]},
        "seed": {"type": "integer", "minimum": 0},
    }),
    "criterion": _obj({
        "base": {"enum": ["vicreg", "swav", "simsiam", "none"]},
        "addon": {"enum": ["e2mc", "vcreg", "auh", "mmcr", "none"]},
        "beta": _num,
        "gamma": _num,
        "transform": {"enum": ["sigmoid", "gaussian_cdf", "identity", None]},
        "vicreg": _VICREG,
        "swav": _obj({
            "tau": _pos, "n_prototypes": {"type": "integer", "minimum": 2},
            "sinkhorn_iters": _posint, "sinkhorn_eps": _pos,
        }),
        "simsiam": _obj({"predictor_hidden": _posint}),
        "auh": _obj({"lam": _num, "t": _pos}),
        "mmcr": _obj({"lam": _num, "n_views": {"type": "integer", "minimum": 2}}),
        "vcreg": _obj({"mu": _nonneg, "nu": _nonneg, "eta": _pos, "eps": _nonneg}),
        "entropy": _obj({
            "m": {"anyOf": [_posint, {"type": "null"}]}, "spacing_floor": _pos,
        }),
        "freeze_prototypes": {"type": "boolean"},
    }),
    "continue": _obj({"epochs": {"type": "integer", "minimum": 0}, "lr_factor": _nonneg}),
    "diagnostics": _obj({
        "bins": {"type": "integer", "minimum": 2},
        "uniformity_n": {"anyOf": [_posint, {"type": "null"}]},
        "k_list": _intlist,
        "metric": {"enum": ["euclidean", "cosine"]},
        "fractions": {"type": "array", "items": {
            "type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        "probe_seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "n_resamples": _posint,
        "probe_test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    }),
    "sweep": _obj({
        "betas": {"type": "array", "items": _num, "minItems": 1},
        "gammas": {"type": "array", "items": _num, "minItems": 1},
        "epochs": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
    }),
})


@dataclass
class ModelSpec:
    encoder_hidden: tuple = (64, 64)
    rep_dim: int = 16
    projector_hidden: tuple = (32,)
    embed_dim: int = 8


@dataclass
class ContinueSpec:
    epochs: int = 10
    lr_factor: float = 0.01


@dataclass
class DiagnosticsSpec:
    bins: int = 5
    uniformity_n: int | None = 250  # None: use every row
    k_list: tuple = (1, 100)
    metric: str = "euclidean"
    fractions: tuple = (0.01, 0.1, 1.0)
    probe_seeds: tuple = (0, 1, 2)
    n_resamples: int = 10_000
    probe_test_fraction: float = 0.3  # held out per class before label subsampling


@dataclass
class SweepSpec:
    betas: tuple = (0.0, 1000.0)
    gammas: tuple = (0.0, 10000.0)
    epochs: tuple = (10,)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    cont: ContinueSpec = field(default_factory=ContinueSpec)
    diagnostics: DiagnosticsSpec = field(default_factory=DiagnosticsSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def to_dict(self) -> dict:
        t = self.train
        return _lists({
            "dataset": t.dataset.to_dict(),
            "augmentation": asdict(t.augmentation),
            "model": asdict(self.model),
            "train": {
                "batch_size": t.batch_size, "epochs": t.epochs,
                "learning_rate": t.learning_rate, "lr_schedule": t.lr_schedule,
                "momentum": t.momentum, "weight_decay": t.weight_decay,
                "grad_clip": t.grad_clip, "seed": t.seed,
            },
            "criterion": t.criterion.to_dict(),
            "continue": asdict(self.cont),
            "diagnostics": asdict(self.diagnostics),
            "sweep": asdict(self.sweep),
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def with_seed(self, seed: int) -> "RunConfig":
        """Same run with ``seed`` for both the data draw and training."""
        ds = replace(self.train.dataset, seed=seed)
        return replace(self, train=replace(self.train, dataset=ds, seed=seed))


def _lists(obj):
    # tuples -> lists so the snapshot round-trips through JSON unchanged
    if isinstance(obj, dict):
        return {k: _lists(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_lists(v) for v in obj]
    return obj


def _path_of(err: jsonschema.ValidationError) -> str:
    path = "$"
    for p in err.absolute_path:
        path += f"[{p}]" if isinstance(p, int) else f".{p}"
    return path


def validate(doc) -> None:
    """Schema check; raises ConfigError carrying the JSON path of the first error."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        err = errors[0]
        path = _path_of(err)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                path = f"{path}.{extra[0]}"
        raise ConfigError(err.message, path)


def from_dict(doc: dict) -> RunConfig:
    validate(doc)
    try:
        crit = CriterionSpec.from_dict(doc.get("criterion", {}))
        t = doc.get("train", {})
        train = TrainConfig(
            dataset=SyntheticDataset(**doc.get("dataset", {})),
            augmentation=AugmentSpec(**doc.get("augmentation", {})),
            criterion=crit,
            **t,
        )
        m = doc.get("model", {})
        model = ModelSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in m.items()})
        diag = DiagnosticsSpec(**{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in doc.get("diagnostics", {}).items()
        })
        sweep = SweepSpec(**{k: tuple(v) for k, v in doc.get("sweep", {}).items()})
        return RunConfig(train, model, ContinueSpec(**doc.get("continue", {})), diag, sweep)
    except ParameterError as e:
        raise ConfigError(str(e), "$") from e


def merge(base: dict, override: dict) -> dict:
    """Recursive dict merge; ``override`` wins."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# -- presets ------------------------------------------------------------------

# Reference settings of the continued pre-training runs.  Only the loss
# coefficients, the 10-epoch budget and the 0.01x learning-rate factor carry
# over to toy scale; batch sizes and rates are kept for reference.
REFERENCE_SETTINGS = {
    "vicreg": {
        "vicreg": {"lam": 25.0, "mu": 25.0, "nu": 1.0},
        "e2mc": {"beta": 1000.0, "gamma": 100.0, "transform": "sigmoid"},
        "continued": {"epochs": 10, "learning_rate": 0.003, "lr_factor": 0.01, "batch_size": 512},
    },
    "swav": {
        "swav": {"tau": 0.1},
        "e2mc": {"beta": 1.0, "gamma": 25.0, "transform": "gaussian_cdf"},
        "vcreg": {"mu": 0.1, "nu": 0.001},
        "auh": {"lam": 0.5, "t": 2.0},
        "mmcr": {"lam": 0.005, "n_views": 8},
        "continued": {"epochs": 10, "learning_rate": 0.001, "lr_factor": 0.01, "batch_size": 512},
    },
    "simsiam": {
        "e2mc": {"beta": 0.001, "gamma": 0.01, "transform": "gaussian_cdf"},
        "continued": {"epochs": 10, "learning_rate": 0.001, "lr_factor": 0.01, "batch_size": 512},
    },
}


def _preset(base: str, addon: str = "none", **crit) -> dict:
    c = {"base": base, "addon": addon, **crit}
    if base == "vicreg":
        c["vicreg"] = dict(REFERENCE_SETTINGS["vicreg"]["vicreg"])
    if base == "swav":
        c["swav"] = dict(REFERENCE_SETTINGS["swav"]["swav"])
    return {"criterion": c, "continue": {"epochs": 10, "lr_factor": 0.01}}


def _e2mc(base: str) -> dict:
    e = REFERENCE_SETTINGS[base]["e2mc"]
    return _preset(base, "e2mc", beta=e["beta"], gamma=e["gamma"])


PRESETS = {
    "vicreg-base": _preset("vicreg"),
    "vicreg-e2mc": _e2mc("vicreg"),
    "swav-base": _preset("swav"),
    "swav-e2mc": _e2mc("swav"),
    "swav-vcreg": _preset("swav", "vcreg", vcreg=REFERENCE_SETTINGS["swav"]["vcreg"]),
    "swav-auh": _preset("swav", "auh", auh=REFERENCE_SETTINGS["swav"]["auh"]),
    "swav-mmcr": _preset("swav", "mmcr", mmcr=REFERENCE_SETTINGS["swav"]["mmcr"]),
    "simsiam-base": _preset("simsiam"),
    "simsiam-e2mc": _e2mc("simsiam"),
}
# toy-scale coefficients used by the benchmark (see experiments.BenchmarkConfig)
PRESETS["vicreg-e2mc-toy"] = merge(PRESETS["vicreg-e2mc"], {"criterion": {"gamma": 10000.0}})


def load_document(path=None, preset: str | None = None) -> dict:
    """Preset (if any) overlaid with the JSON file at ``path`` (if any)."""
    doc: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}", "$")
        doc = copy.deepcopy(PRESETS[preset])
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}", "$") from e
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object", "$")
        doc = merge(doc, user)
    return doc


def load_run_config(path=None, preset: str | None = None, seed: int | None = None) -> RunConfig:
    cfg = from_dict(load_document(path, preset))
    return cfg if seed is None else cfg.with_seed(seed)
