"""Embedding-quality measurements and paired significance tests."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .entropy import MSpacingsConfig, entropy_of_array
from .errors import (
    DegenerateTestError, NumericError, ParameterError, ShapeError, StratificationError,
)
from .transforms import CompactTransform, apply_array, make_rng


# -- marginal entropy ----------------------------------------------------------

def marginal_entropy_report(
    embeddings, transform=CompactTransform.SIGMOID, cfg: MSpacingsConfig = MSpacingsConfig()
) -> np.ndarray:
    """Per-dimension m-spacings entropy of the compactified embeddings."""
    z = np.asarray(embeddings, dtype=np.float64)
    if z.shape[0] < 4:
        raise ParameterError("marginal entropy needs n >= 4")
    return entropy_of_array(apply_array(transform, z), cfg)


# -- uniformity of 1-d and 2-d marginals ---------------------------------------

def log_gamma_q(a: float, x: float, tol: float = 1e-15, max_iter: int = 10_000) -> float:
    """log Q(a, x), the regularized upper incomplete gamma function.

    Power series for P when x < a + 1, modified Lentz continued fraction for Q
    otherwise.  The prefactor x^a e^-x / Gamma(a) stays in log space, so far
    tails come back as large negative numbers instead of underflowing to -inf.
    """
    if a <= 0:
        raise ParameterError("incomplete gamma needs a > 0")
    if x < 0:
        raise ParameterError("incomplete gamma needs x >= 0")
    if x == 0:
        return 0.0
    log_pre = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        term = total = 1.0 / a
        ap = a
        for _ in range(max_iter):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * tol:
                break
        else:
            raise NumericError(f"incomplete gamma series did not converge (a={a}, x={x})")
        p = math.exp(log_pre + math.log(total))
        return math.log1p(-p) if p < 1.0 else -math.inf
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    dd = 1.0 / b
    h = dd
    for i in range(1, max_iter):
        an = -i * (i - a)
        b += 2.0
        dd = an * dd + b
        if abs(dd) < tiny:
            dd = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        dd = 1.0 / dd
        delta = dd * c
        h *= delta
        if abs(delta - 1.0) < tol:
            break
    else:
        raise NumericError(f"incomplete gamma fraction did not converge (a={a}, x={x})")
    return log_pre + math.log(h)


def chi2_logsf(stat: float, df: int) -> float:
    """Natural log of the chi-square upper tail probability."""
    if df < 1:
        raise ParameterError("chi-square needs df >= 1")
    return log_gamma_q(0.5 * df, 0.5 * max(stat, 0.0))


def chi2_sf(stat: float, df: int) -> float:
    return math.exp(chi2_logsf(stat, df))


def chi2_uniform(counts) -> tuple[float, float]:
    """Pearson chi-square of ``counts`` against equal cell probabilities.

    Returns ``(statistic, p_value)`` with ``cells - 1`` degrees of freedom.
    """
    stat, logp = chi2_uniform_log(counts)
    return stat, math.exp(logp)


def chi2_uniform_log(counts) -> tuple[float, float]:
    """Like :func:`chi2_uniform` but returns ``log p``."""
    c = np.asarray(counts, dtype=np.float64).ravel()
    expected = c.sum() / c.size
    stat = float(((c - expected) ** 2).sum() / expected)
    return stat, chi2_logsf(stat, c.size - 1)


def pairwise_uniformity_grid(
    embeddings, transform=CompactTransform.SIGMOID, bins: int = 10,
    return_stats: bool = False, log_p: bool = False,
):
    """Chi-square p-values of every 2-d marginal against the uniform square.

    Entry ``[j, k]`` tests the ``bins x bins`` histogram of dimensions j and k;
    the diagonal holds the 1-d test of dimension j with ``bins`` cells.  With
    ``log_p`` the entries are natural-log p-values, which keeps strongly
    non-uniform marginals comparable after p itself underflows.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    n, d = z.shape
    if bins < 2:
        raise ParameterError("bins must be >= 2")
    if n < 10 * bins * bins:
        raise ParameterError(f"need n >= 10*bins^2 = {10 * bins * bins} samples, got {n}")
    u = apply_array(transform, z)
    cell = np.minimum((u * bins).astype(np.int64), bins - 1)
    pvals = np.empty((d, d))
    stats = np.empty((d, d))
    for j in range(d):
        stats[j, j], pvals[j, j] = chi2_uniform_log(np.bincount(cell[:, j], minlength=bins))
        for k in range(j + 1, d):
            flat = cell[:, j] * bins + cell[:, k]
            s, p = chi2_uniform_log(np.bincount(flat, minlength=bins * bins))
            stats[j, k] = stats[k, j] = s
            pvals[j, k] = pvals[k, j] = p
    if not log_p:
        pvals = np.exp(pvals)
    return (pvals, stats) if return_stats else pvals


def offdiag_median(m: np.ndarray) -> float:
    d = m.shape[0]
    return float(np.median(m[~np.eye(d, dtype=bool)]))


def sample_x_distribution(n: int, seed) -> np.ndarray:
    """Points on the two diagonals of the unit square, half on each.

    Both marginals are U[0,1] and the coordinates are uncorrelated, yet the
    joint is concentrated on a set of measure zero.
    """
    rng = make_rng(seed)
    t = rng.uniform(size=n)
    flip = rng.uniform(size=n) < 0.5
    return np.column_stack((t, np.where(flip, 1.0 - t, t)))


# -- nearest-neighbour distance histograms -------------------------------------

def kth_neighbor_distances(x, ks, metric: str = "euclidean", chunk: int = 64) -> dict[int, np.ndarray]:
    """Exact brute-force distance from every point to its k-th nearest other point."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    ks = sorted(set(int(k) for k in ks))
    if ks[0] < 1 or ks[-1] >= n:
        raise ParameterError(f"need 1 <= k < n={n}, got {ks}")
    if metric == "cosine":
        x = x / np.linalg.norm(x, axis=1, keepdims=True)
    elif metric != "euclidean":
        raise ParameterError(f"unknown metric {metric!r}")
    out = {k: np.empty(n) for k in ks}
    kidx = [k - 1 for k in ks]
    for start in range(0, n, chunk):
        block = x[start:start + chunk]
        if metric == "cosine":
            dist = 1.0 - block @ x.T
        else:
            dist = np.sqrt(((block[:, None, :] - x[None, :, :]) ** 2).sum(axis=2))
        rows = np.arange(block.shape[0])
        dist[rows, start + rows] = np.inf
        part = np.partition(dist, kidx, axis=1)
        for k in ks:
            out[k][start:start + block.shape[0]] = part[:, k - 1]
    return out


def overlap_coefficient(h1, h2) -> float:
    """sum_b min(p1_b, p2_b) of two histograms normalized to unit mass."""
    a = np.asarray(h1, dtype=np.float64)
    b = np.asarray(h2, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("histograms must share bins")
    return float(np.minimum(a / a.sum(), b / b.sum()).sum())


@dataclass
class NNHistograms:
    edges: np.ndarray
    counts: dict[int, np.ndarray]
    distances: dict[int, np.ndarray]
    overlap: float

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "counts": {str(k): v.astype(int).tolist() for k, v in self.counts.items()},
            "overlap": self.overlap,
        }


def nn_distance_histograms(
    embeddings, k_list=(1, 100), bins="fd", metric: str = "euclidean"
) -> NNHistograms:
    """Histograms (shared edges) of k-th neighbour distances and their overlap.

    ``bins="fd"`` picks Freedman-Diaconis edges on the pooled distances.  The
    overlap compares the first two entries of ``k_list``.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    if z.shape[0] <= max(k_list):
        raise ParameterError(f"need n > max(k_list)={max(k_list)}, got n={z.shape[0]}")
    dists = kth_neighbor_distances(z, k_list, metric)
    pooled = np.concatenate([dists[k] for k in k_list])
    edges = np.histogram_bin_edges(pooled, bins=bins)
    counts = {k: np.histogram(dists[k], bins=edges)[0] for k in k_list}
    ov = overlap_coefficient(counts[k_list[0]], counts[k_list[1]]) if len(k_list) > 1 else 1.0
    return NNHistograms(edges, counts, {k: dists[k] for k in k_list}, ov)


# -- linear probe ---------------------------------------------------------------

def stratified_split(labels, fraction: float, seed, test_fraction: float = 0.3):
    """Indices ``(train, test)``: a held-out test part per class, then
    ``fraction`` of the remainder (at least one sample per class) for training."""
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    labels = np.asarray(labels)
    rng = make_rng([seed, 0x9B0BE])
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_test = int(round(test_fraction * idx.size))
        pool = idx[n_test:]
        if pool.size == 0:
            raise StratificationError(f"class {c} has no samples left for training")
        n_train = max(1, int(round(fraction * pool.size)))
        test.append(idx[:n_test])
        train.append(pool[:n_train])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def _softmax_ce(w, x, y_onehot, l2):
    logits = x @ w
    logits -= logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    logp = logits - logz
    n = x.shape[0]
    loss = -(y_onehot * logp).sum() / n + 0.5 * l2 * (w[:-1] ** 2).sum()
    grad = x.T @ (np.exp(logp) - y_onehot) / n
    grad[:-1] += l2 * w[:-1]
    return loss, grad


def fit_logistic(x, y, n_classes: int, iters: int = 500, lr: float = 0.5, l2: float = 1e-4):
    """Multinomial logistic regression by full-batch gradient descent with
    Armijo backtracking.  Returns weights with the bias in the last row."""
    xb = np.hstack([x, np.ones((x.shape[0], 1))])
    onehot = np.eye(n_classes)[y]
    w = np.zeros((xb.shape[1], n_classes))
    loss, grad = _softmax_ce(w, xb, onehot, l2)
    step = lr
    for _ in range(iters):
        g2 = (grad * grad).sum()
        if g2 < 1e-20:
            break
        while True:
            w_new = w - step * grad
            new_loss, new_grad = _softmax_ce(w_new, xb, onehot, l2)
            if new_loss <= loss - 0.5 * step * g2 or step < 1e-10:
                break
            step *= 0.5
        w, loss, grad = w_new, new_loss, new_grad
    return w


def linear_probe(
    representations, labels, fraction: float = 1.0, seed=0, test_fraction: float = 0.3,
    iters: int = 500, lr: float = 0.5, l2: float = 1e-4, return_predictions: bool = False,
):
    """Held-out accuracy of a linear classifier on frozen representations."""
    x = np.asarray(representations, dtype=np.float64)
    labels = np.asarray(labels)
    classes, y = np.unique(labels, return_inverse=True)
    tr, te = stratified_split(y, fraction, seed, test_fraction)
    mu = x[tr].mean(axis=0)
    sd = x[tr].std(axis=0)
    sd[sd < 1e-8] = 1.0
    xs = (x - mu) / sd
    w = fit_logistic(xs[tr], y[tr], classes.size, iters, lr, l2)
    pred = np.argmax(np.hstack([xs[te], np.ones((te.size, 1))]) @ w, axis=1)
    acc = float((pred == y[te]).mean())
    if return_predictions:
        return acc, classes[pred], te
    return acc


def probe_table(representations, labels, fractions=(0.01, 0.1, 1.0), seeds=(0, 1, 2),
                test_fraction: float = 0.3) -> list[dict]:
    """Mean and standard error of probe accuracy per label fraction."""
    rows = []
    for f in fractions:
        accs = np.array([linear_probe(representations, labels, f, s, test_fraction) for s in seeds])
        se = float(accs.std(ddof=1) / math.sqrt(accs.size)) if accs.size > 1 else float("nan")
        rows.append({"fraction": f, "mean": float(accs.mean()), "se": se, "n": int(accs.size)})
    return rows


# -- significance tests -----------------------------------------------------------

def mcnemar_test(preds_a, preds_b, labels) -> tuple[float, float]:
    """chi2 = (n01 - n10)^2 / (n01 + n10) on discordant pairs, 1 dof."""
    a, b, y = (np.asarray(v) for v in (preds_a, preds_b, labels))
    if not a.shape == b.shape == y.shape:
        raise ShapeError("prediction and label vectors must have equal length")
    ca, cb = a == y, b == y
    n01 = int((~ca & cb).sum())
    n10 = int((ca & ~cb).sum())
    return mcnemar_from_counts(n01, n10)


def mcnemar_from_counts(n01: int, n10: int) -> tuple[float, float]:
    if n01 + n10 == 0:
        raise DegenerateTestError("no discordant pairs")
    chi2 = (n01 - n10) ** 2 / (n01 + n10)
    return float(chi2), chi2_sf(chi2, 1)


def paired_permutation_test(correct_a, correct_b, n_resamples: int = 10_000, seed=0) -> float:
    """Two-sided sign-flip test of the mean paired difference.

    p is the fraction of resamples whose |sum of flipped differences| reaches
    the observed one (no +1 correction, so identical inputs give exactly 1).
    """
    a = np.asarray(correct_a).astype(np.int64)
    b = np.asarray(correct_b).astype(np.int64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("correctness vectors must be 1-d and of equal length")
    if n_resamples < 1:
        raise ParameterError("n_resamples must be positive")
    diff = a - b
    observed = abs(int(diff.sum()))
    nz = diff[diff != 0]
    if nz.size == 0:
        return 1.0
    rng = make_rng([seed, 0x5EED])
    hits = 0
    chunk = max(1, 2_000_000 // nz.size)
    done = 0
    while done < n_resamples:
        m = min(chunk, n_resamples - done)
        signs = rng.integers(0, 2, (m, nz.size), dtype=np.int8) * 2 - 1
        hits += int((np.abs(signs @ nz) >= observed).sum())
        done += m
    return hits / n_resamples


# -- report ---------------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    n: int
    d: int
    transform: str
    marginal_entropy: list[float]
    mean_marginal_entropy: float
    covariance_offdiag_fro: float
    uniformity_bins: int | None = None
    uniformity_pvalues: list[list[float]] | None = None
    uniformity_n: int | None = None
    uniformity_median_p: float | None = None
    uniformity_median_log_p: float | None = None
    uniformity_median_stat: float | None = None
    nn_histograms: dict | None = None
    probe: list[dict] | None = None
    significance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def covariance_offdiag_fro(u) -> float:
    """Frobenius norm of the off-diagonal sample covariance (1/(n-1))."""
    c = np.cov(np.asarray(u, dtype=np.float64), rowvar=False)
    c = np.atleast_2d(c)
    return float(np.linalg.norm(c - np.diag(np.diag(c))))


def build_report(
    embeddings,
    transform=CompactTransform.SIGMOID,
    bins: int = 5,
    k_list=(1, 100),
    metric: str = "euclidean",
    representations=None,
    labels=None,
    fractions=(0.01, 0.1, 1.0),
    seeds=(0, 1, 2),
    entropy_cfg: MSpacingsConfig = MSpacingsConfig(),
    uniformity_n: int | None = None,
    seed=0,
    test_fraction: float = 0.3,
) -> tuple[DiagnosticsReport, NNHistograms | None]:
    """Every diagnostic that applies to the given inputs.

    The uniformity grid runs on ``uniformity_n`` rows drawn without
    replacement (all rows when None); the NN histograms need n > max(k_list)
    and the probe table needs representations and labels.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    n, d = z.shape
    t = CompactTransform(transform)
    ent = marginal_entropy_report(z, t, entropy_cfg)
    u = apply_array(t, z)
    rep = DiagnosticsReport(
        n=n, d=d, transform=t.value,
        marginal_entropy=ent.tolist(),
        mean_marginal_entropy=float(ent.mean()),
        covariance_offdiag_fro=covariance_offdiag_fro(u),
    )
    m = n if uniformity_n is None else min(uniformity_n, n)
    if d >= 2 and m >= 10 * bins * bins:
        rows = np.arange(n)
        if m < n:
            rows = np.sort(make_rng([seed, 0x5B]).choice(n, m, replace=False))
        logp, st = pairwise_uniformity_grid(z[rows], t, bins, return_stats=True, log_p=True)
        rep.uniformity_bins = bins
        rep.uniformity_n = int(m)
        rep.uniformity_pvalues = np.exp(logp).tolist()
        rep.uniformity_median_log_p = offdiag_median(logp)
        rep.uniformity_median_p = math.exp(rep.uniformity_median_log_p)
        rep.uniformity_median_stat = offdiag_median(st)
    hist = None
    if n > max(k_list):
        hist = nn_distance_histograms(z, k_list, metric=metric)
        rep.nn_histograms = hist.to_dict()
    if representations is not None and labels is not None:
        rep.probe = probe_table(representations, labels, fractions, seeds, test_fraction)
    return rep, hist


def histogram_csv(hist: NNHistograms) -> str:
    """``k,bin_left,bin_right,count`` rows for every histogram."""
    lines = ["k,bin_left,bin_right,count"]
    for k, counts in hist.counts.items():
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], counts):
            lines.append(f"{k},{lo!r},{hi!r},{int(c)}")
    return "\n".join(lines) + "\n"


def histogram_svg(hist: NNHistograms, width: int = 480, height: int = 240) -> str:
    """Overlaid bar chart of the normalized histograms."""
    colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"]
    pad = 30
    edges = hist.edges
    span = edges[-1] - edges[0] or 1.0
    probs = {k: c / max(c.sum(), 1) for k, c in hist.counts.items()}
    top = max(float(p.max()) for p in probs.values()) or 1.0
    sx = (width - 2 * pad) / span
    sy = (height - 2 * pad) / top
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for (k, p), color in zip(probs.items(), colors):
        for lo, hi, v in zip(edges[:-1], edges[1:], p):
            x = pad + (lo - edges[0]) * sx
            h = v * sy
            out.append(
                f'<rect x="{x:.2f}" y="{height - pad - h:.2f}" width="{(hi - lo) * sx:.2f}" '
                f'height="{h:.2f}" fill="{color}" fill-opacity="0.5"/>'
            )
    for i, k in enumerate(probs):
        out.append(
            f'<text x="{width - pad - 60}" y="{pad + 14 * i}" font-size="11" '
            f'fill="{colors[i % 4]}">k={k}</text>'
        )
    out.append(f'<text x="{pad}" y="{pad - 10}" font-size="11">overlap={hist.overlap:.4f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_svg(u2: np.ndarray, size: int = 240) -> str:
    """Scatter plot of a 2-d compact marginal (coordinates in [0, 1])."""
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect width="{size}" height="{size}" fill="white" stroke="black"/>',
    ]
    for a, b in u2:
        out.append(f'<circle cx="{a * size:.1f}" cy="{(1 - b) * size:.1f}" r="1" fill="#333"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


