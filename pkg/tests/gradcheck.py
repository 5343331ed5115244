"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

from e2mc import ndcore as nd

STEP = 1e-6


def tape_grads(build, arrays):
    """Value and parameter gradients of ``build(*vars)`` on a fresh tape."""
    tape = nd.Tape()
    vs = [tape.param(a) for a in arrays]
    out = build(*vs)
    g = tape.backward(out)
    return out.item(), [g[v] for v in vs]


def tape_value(build):
    def f(*arrays):
        tape = nd.Tape()
        return build(*[tape.const(a) for a in arrays]).item()
    return f


def fd_full(f, arrays, h=STEP):
    """Coordinate-wise central differences of scalar ``f(*arrays)``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            keep = a[idx]
            a[idx] = keep + h
            up = f(*arrays)
            a[idx] = keep - h
            down = f(*arrays)
            a[idx] = keep
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def fd_directional(f, arrays, directions, h=STEP):
    plus = [a + h * d for a, d in zip(arrays, directions)]
    minus = [a - h * d for a, d in zip(arrays, directions)]
    return (f(*plus) - f(*minus)) / (2 * h)


def rel_err(a, b):
    a = np.concatenate([np.ravel(x) for x in a]) if isinstance(a, list) else np.ravel(a)
    b = np.concatenate([np.ravel(x) for x in b]) if isinstance(b, list) else np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)
