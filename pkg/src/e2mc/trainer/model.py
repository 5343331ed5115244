"""Siamese MLP encoder/projector (+ optional predictor and prototypes)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import ndcore as nd
from ..ndcore import Tape, Var
from ..transforms import make_rng

SECTIONS = ("encoder", "projector", "predictor", "prototypes")


def init_mlp(sizes: list[int], rng: np.random.Generator) -> list[np.ndarray]:
    """He-normal weights, zero biases: ``[W0, b0, W1, b1, ...]``."""
    out = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        out.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        out.append(np.zeros((1, fan_out)))
    return out


def mlp_forward(x: Var, layers: list[Var]) -> Var:
    """Affine layers with ReLU between them; the last layer is linear."""
    h = x
    n_layers = len(layers) // 2
    for i in range(n_layers):
        h = h @ layers[2 * i] + layers[2 * i + 1]
        if i < n_layers - 1:
            h = nd.relu(h)
    return h


def mlp_sizes(layers: list[np.ndarray]) -> list[int]:
    if not layers:
        return []
    return [layers[0].shape[0]] + [w.shape[1] for w in layers[0::2]]


@dataclass
class ModelState:
    """All trainable arrays plus optimizer state and the data-stream position.

    ``velocity`` holds one momentum buffer per array in :meth:`named_arrays`
    order.  Training batches for epoch ``e`` are drawn from a generator keyed
    by ``(seed, e)``, so ``seed`` and ``epoch`` pin the stream exactly.
    """

    encoder: list[np.ndarray]
    projector: list[np.ndarray]
    predictor: list[np.ndarray] = field(default_factory=list)
    prototypes: list[np.ndarray] = field(default_factory=list)
    velocity: list[np.ndarray] = field(default_factory=list)
    epoch: int = 0
    step: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(
        cls,
        encoder_sizes=(2, 64, 64, 16),
        projector_sizes=(16, 32, 8),
        predictor_hidden: int | None = None,
        n_prototypes: int | None = None,
        seed: int = 0,
        base: str = "vicreg",
    ) -> "ModelState":
        encoder_sizes, projector_sizes = list(encoder_sizes), list(projector_sizes)
        if encoder_sizes[-1] != projector_sizes[0]:
            raise ValueError("projector input must match encoder output")
        rng = make_rng([seed, 0x1417])
        d = projector_sizes[-1]
        enc = init_mlp(encoder_sizes, rng)
        proj = init_mlp(projector_sizes, rng)
        pred = init_mlp([d, predictor_hidden, d], rng) if predictor_hidden else []
        protos = []
        if n_prototypes:
            c = rng.standard_normal((d, n_prototypes))
            protos = [c / np.linalg.norm(c, axis=0, keepdims=True)]
        state = cls(enc, proj, pred, protos, seed=seed, meta={"base": base})
        state.velocity = [np.zeros_like(a) for _, a in state.named_arrays()]
        return state

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for sec in SECTIONS:
            for i, a in enumerate(getattr(self, sec)):
                out.append((f"{sec}.{i}", a))
        return out

    def set_arrays(self, arrays: list[np.ndarray]) -> None:
        k = 0
        for sec in SECTIONS:
            cur = getattr(self, sec)
            setattr(self, sec, arrays[k:k + len(cur)])
            k += len(cur)

    def copy(self) -> "ModelState":
        return ModelState(
            [a.copy() for a in self.encoder],
            [a.copy() for a in self.projector],
            [a.copy() for a in self.predictor],
            [a.copy() for a in self.prototypes],
            [a.copy() for a in self.velocity],
            self.epoch, self.step, self.seed, dict(self.meta),
        )

    @property
    def embed_dim(self) -> int:
        return self.projector[-2].shape[1]

    def bind(self, tape: Tape) -> "BoundModel":
        return BoundModel(self, tape)

    def represent(self, x: np.ndarray) -> np.ndarray:
        """Encoder outputs Y for a batch, without recording gradients."""
        t = Tape()
        return mlp_forward(t.const(x), [t.const(a) for a in self.encoder]).value

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Projector outputs Z for a batch."""
        t = Tape()
        y = mlp_forward(t.const(x), [t.const(a) for a in self.encoder])
        return mlp_forward(y, [t.const(a) for a in self.projector]).value


class BoundModel:
    """The model's arrays registered as parameters on one tape."""

    def __init__(self, state: ModelState, tape: Tape):
        self.tape = tape
        self.params: list[Var] = []
        self.sections: dict[str, list[Var]] = {}
        for sec in SECTIONS:
            vs = [tape.param(a, f"{sec}.{i}") for i, a in enumerate(getattr(state, sec))]
            self.sections[sec] = vs
            self.params.extend(vs)

    def encode(self, x: np.ndarray) -> Var:
        return mlp_forward(self.tape.const(x), self.sections["encoder"])

    def project(self, y: Var) -> Var:
        return mlp_forward(y, self.sections["projector"])

    def predict(self, z: Var) -> Var:
        return mlp_forward(z, self.sections["predictor"])

    @property
    def prototypes(self) -> Var:
        return self.sections["prototypes"][0]
