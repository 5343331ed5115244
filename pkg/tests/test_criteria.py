import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import special_ortho_group

from e2mc import ndcore as nd
from e2mc.criteria import (
    AUHParams, Addon, Base, CriterionSpec, PRESET_COEFFICIENTS, SwAVParams, VCRegParams,
    VICRegParams, auh_uniformity_loss, covariance_loss, covariance_loss_sample_form,
    e2mc_loss, mmcr_loss, nuclear_norm, simsiam_loss, sinkhorn_assign, svd_jacobi,
    swav_loss, vcreg_loss, vicreg_loss, vicreg_terms,
)
from e2mc.entropy import marginal_entropy_loss
from e2mc.errors import ConfigError, NumericError, ParameterError, ShapeError
from e2mc.transforms import CompactTransform, apply, l2_normalize_rows, sample_uniform_sphere
from criteria_cases import NAMES, make_case
from gradcheck import fd_directional, rel_err, tape_grads, tape_value


def val(fn, *arrays, **kw):
    t = nd.Tape()
    return fn(*[t.const(a) for a in arrays], **kw).item()


# -- gradients ------------------------------------------------------------------

@pytest.mark.parametrize("name", NAMES)
@pytest.mark.parametrize("seed", [10, 11])
def test_directional_gradients(name, seed):
    arrays, build, oracle = make_case(name, seed)
    f = oracle or tape_value(build)
    value, grads = tape_grads(build, arrays)
    assert f(*arrays) == pytest.approx(value, rel=1e-12, abs=1e-12)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        dirs = [rng.normal(size=a.shape) for a in arrays]
        analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))
        assert rel_err(analytic, fd_directional(f, arrays, dirs)) < 1e-5


@pytest.mark.parametrize("transform", ["sigmoid", "gaussian_cdf"])
def test_e2mc_gradient_both_transforms(transform):
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(32, 4)), rng.normal(size=(32, 4))
    build = lambda x, y: e2mc_loss(nd.Tape.const(x.tape, 0.0), x, y, transform, 2.0, 7.0)
    _, g = tape_grads(build, [a, b])
    dirs = [rng.normal(size=a.shape), rng.normal(size=b.shape)]
    analytic = sum(float(np.sum(gi * d)) for gi, d in zip(g, dirs))
    assert rel_err(analytic, fd_directional(tape_value(build), [a, b], dirs)) < 1e-5


def test_vicreg_sample_gram_gradient():
    rng = np.random.default_rng(4)
    a, b = 0.3 * rng.normal(size=(32, 4)), 0.3 * rng.normal(size=(32, 4))
    build = lambda x, y: vicreg_loss(x, y, VICRegParams(gram="sample"))
    _, g = tape_grads(build, [a, b])
    dirs = [rng.normal(size=a.shape), rng.normal(size=b.shape)]
    analytic = sum(float(np.sum(gi * d)) for gi, d in zip(g, dirs))
    assert rel_err(analytic, fd_directional(tape_value(build), [a, b], dirs)) < 1e-5


# -- covariance -----------------------------------------------------------------

def test_covariance_examples():
    const = np.ones((5, 3)) * 0.4
    assert val(covariance_loss, const, const) == 0.0
    z = np.array([[1.0, 1.0], [-1.0, -1.0]])
    assert val(covariance_loss, z, z) == 4.0
    orth = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    assert val(covariance_loss, orth, orth) == 0.0
    with pytest.raises(ParameterError):
        val(covariance_loss, np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ShapeError):
        val(covariance_loss, np.ones((3, 2)), np.ones((3, 3)))


def test_covariance_matches_definition():
    rng = np.random.default_rng(5)
    a, b = rng.uniform(size=(50, 6)), rng.uniform(size=(50, 6))

    def direct(z):
        zc = z - z.mean(axis=0)
        k = zc.T @ zc
        return np.sum((k - np.diag(np.diag(k))) ** 2)

    want = (direct(a) + direct(b)) / (50 * 6)
    assert val(covariance_loss, a, b) == pytest.approx(want, rel=1e-12)
    # the sample-covariance form differs by exactly n / (n - 1)^2
    assert val(covariance_loss_sample_form, a, b) == pytest.approx(want * 50 / 49**2, rel=1e-12)


@given(arrays(np.int64, (8, 3), elements=st.integers(-50, 50)),
       arrays(np.int64, (1, 3), elements=st.integers(-1000, 1000)))
def test_covariance_shift_invariance_exact(z, shift):
    # integer data with a power-of-two row count keeps centering exact
    z = z.astype(float)
    assert val(covariance_loss, z, z) == val(covariance_loss, z + shift, z + shift)


@given(st.integers(0, 2**32 - 1))
def test_covariance_shift_invariance_float(seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(size=(20, 4))
    shifted = z + rng.normal(size=(1, 4))
    assert val(covariance_loss, z, z) == pytest.approx(val(covariance_loss, shifted, shifted), rel=1e-9, abs=1e-15)


# -- e2mc -------------------------------------------------------------------------

def test_e2mc_zero_coefficients_return_base_object():
    t = nd.Tape()
    z = t.param(np.random.default_rng(0).normal(size=(16, 3)))
    base = vicreg_loss(z, z * 2.0)
    assert e2mc_loss(base, z, z * 2.0, "sigmoid", 0.0, 0.0) is base


def test_e2mc_entropy_vanishes_on_even_spacing():
    n = 63
    col = np.arange(1, n + 1) / (n + 1)
    z = np.column_stack([col, col[::-1]])
    t = nd.Tape()
    base = t.const(1.25)
    out = e2mc_loss(base, t.const(z), t.const(z), CompactTransform.IDENTITY, 1.0, 0.0)
    assert abs(out.item() - 1.25) <= 1e-12


def test_e2mc_is_compositional():
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(40, 5)), rng.normal(size=(40, 5))
    t = nd.Tape()
    za, zb = t.const(a), t.const(b)
    base = vicreg_loss(za, zb)
    ca, cb = apply("gaussian_cdf", za), apply("gaussian_cdf", zb)
    want = base.item() - 7.0 * marginal_entropy_loss(ca, cb).item() + 3.0 * covariance_loss(ca, cb).item()
    got = e2mc_loss(base, za, zb, "gaussian_cdf", 7.0, 3.0).item()
    assert got == pytest.approx(want, rel=1e-13, abs=1e-13)


@given(st.integers(0, 2**32 - 1), st.floats(0, 100), st.floats(0.1, 100))
def test_e2mc_affine_in_beta(seed, beta, step):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(25, 3)), rng.normal(size=(25, 3))
    t = nd.Tape()
    za, zb = t.const(a), t.const(b)
    h = marginal_entropy_loss(apply("sigmoid", za), apply("sigmoid", zb)).item()
    lo = e2mc_loss(t.const(0.0), za, zb, "sigmoid", beta, 1.0).item()
    hi = e2mc_loss(t.const(0.0), za, zb, "sigmoid", beta + step, 1.0).item()
    if h > 0:
        assert hi < lo
    assert hi - lo == pytest.approx(-step * h, rel=1e-8, abs=1e-9)


# -- vicreg / vcreg -------------------------------------------------------------

def _orthogonal_batch(scale):
    return scale * np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])


def test_vicreg_zero_at_target():
    z = _orthogonal_batch(0.5)  # diag K = 1 = eta^2
    assert val(vicreg_loss, z, z, p=VICRegParams(eps=0.0)) == 0.0
    zs = _orthogonal_batch(math.sqrt(0.75))  # diag K / (n-1) = 1
    assert val(vicreg_loss, zs, zs, p=VICRegParams(eps=0.0, gram="sample")) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("gram", ["raw", "sample"])
def test_vicreg_constant_batch_gives_mu(gram):
    z = np.full((6, 3), 0.75)
    p = VICRegParams(mu=25.0, eta=1.0, eps=0.0, gram=gram)
    assert val(vicreg_loss, z, z, p=p) == 25.0


def test_vicreg_lambda_scales_invariance_only():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=(20, 4)), rng.normal(size=(20, 4))
    t = nd.Tape()
    t1 = {k: v.item() for k, v in vicreg_terms(t.const(a), t.const(b), VICRegParams(lam=1.0)).items()}
    l1 = val(vicreg_loss, a, b, p=VICRegParams(lam=1.0))
    l2 = val(vicreg_loss, a, b, p=VICRegParams(lam=2.0))
    assert l2 - l1 == pytest.approx(t1["invariance"], rel=1e-12)


def test_vicreg_raw_gram_matches_definition():
    rng = np.random.default_rng(8)
    a, b = 0.1 * rng.normal(size=(30, 4)), 0.1 * rng.normal(size=(30, 4))
    n, d = a.shape

    def parts(z):
        zc = z - z.mean(axis=0)
        k = zc.T @ zc
        off = np.sum((k - np.diag(np.diag(k))) ** 2) / (n * d)
        var = np.mean(np.maximum(0.0, 1.0 - np.sqrt(np.diag(k) + 1e-4)))
        return off, var

    (ca, va), (cb, vb) = parts(a), parts(b)
    want = 25 * np.sum((a - b) ** 2) / n + 1.0 * (ca + cb) / 2 + 25 * (va + vb) / 2
    assert val(vicreg_loss, a, b) == pytest.approx(want, rel=1e-12)


def test_vicreg_errors():
    with pytest.raises(ParameterError):
        VICRegParams(eta=0.0)
    with pytest.raises(ParameterError):
        VICRegParams(gram="other")
    with pytest.raises(ParameterError):
        val(vicreg_loss, np.ones((1, 2)), np.ones((1, 2)))


def test_vcreg_examples():
    z = _orthogonal_batch(0.5)
    assert val(vcreg_loss, z, z, p=VCRegParams(eps=0.0)) == 0.0
    const = np.full((5, 2), 3.0)
    p = VCRegParams(mu=0.1, nu=0.001, eta=1.0, eps=0.0)
    assert val(vcreg_loss, const, const, p=p) == pytest.approx(0.1 * 1.0, rel=1e-15)
    rng = np.random.default_rng(9)
    a = rng.normal(size=(10, 3))
    assert val(vcreg_loss, a, a, p=VCRegParams(mu=0.0, nu=0.0)) == 0.0
    with pytest.raises(ParameterError):
        VCRegParams(mu=-1.0)


# -- sinkhorn / swav --------------------------------------------------------------

def test_sinkhorn_symmetric_scores():
    q = sinkhorn_assign(np.zeros((6, 2)))
    assert np.allclose(q, 0.5, atol=1e-15)


def test_sinkhorn_marginals():
    s = np.random.default_rng(10).normal(size=(40, 5))
    q = sinkhorn_assign(s, iters=3)
    assert np.allclose(q.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(q >= 0)
    q = sinkhorn_assign(s, iters=500)
    assert np.allclose(q.sum(axis=0), 40 / 5, atol=1e-6)


def test_sinkhorn_block_scores_match_balanced_oracle():
    s = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.35, 0.65]])
    q = sinkhorn_assign(s, iters=50, eps=0.05)
    # brute force: best assignment with two rows per cluster
    best = max(
        (c for c in itertools.product(range(2), repeat=4) if sum(c) == 2),
        key=lambda c: sum(s[i, k] for i, k in enumerate(c)),
    )
    assert tuple(np.argmax(q, axis=1)) == best
    assert np.all(q.max(axis=1) > 0.9)


def test_sinkhorn_errors():
    with pytest.raises(ValueError):
        sinkhorn_assign(np.array([[np.nan, 0.0]]))
    with pytest.raises(ParameterError):
        sinkhorn_assign(np.zeros((2, 2)), iters=0)


def _unit_columns(m):
    return m / np.linalg.norm(m, axis=0, keepdims=True)


def test_swav_high_temperature_gives_log_k():
    rng = np.random.default_rng(11)
    k = 6
    c = _unit_columns(rng.normal(size=(4, k)))
    a, b = rng.normal(size=(12, 4)), rng.normal(size=(12, 4))
    got = val(swav_loss, a, b, c, p=SwAVParams(tau=1e6, n_prototypes=k))
    assert got / 2 == pytest.approx(math.log(k), abs=1e-3)


def test_swav_matching_one_hot_gives_zero():
    c = np.eye(2)
    z = np.array([[1.0, 0.0], [0.0, 1.0]])
    got = val(swav_loss, z, z, c, p=SwAVParams(tau=1e-3, n_prototypes=2, sinkhorn_eps=0.01))
    assert got == pytest.approx(0.0, abs=1e-12)


def test_swav_errors():
    c = np.eye(2)
    with pytest.raises(ValueError):
        val(swav_loss, np.zeros((2, 2)), np.ones((2, 2)), c, p=SwAVParams(n_prototypes=2))
    with pytest.raises(ShapeError):
        val(swav_loss, np.ones((2, 3)), np.ones((2, 3)), c, p=SwAVParams(n_prototypes=2))
    with pytest.raises(ParameterError):
        SwAVParams(tau=0.0)


def test_swav_assignments_carry_no_gradient():
    # moving the prototypes changes q, but the reported gradient must equal the
    # gradient of the loss with q held at its current value
    arrays, build, oracle = make_case("swav", 3)
    _, g = tape_grads(build, arrays)
    dirs = [np.zeros_like(arrays[0]), np.zeros_like(arrays[1]),
            np.random.default_rng(3).normal(size=arrays[2].shape)]
    frozen = fd_directional(oracle, arrays, dirs)
    assert float(np.sum(g[2] * dirs[2])) == pytest.approx(frozen, rel=1e-5)


# -- simsiam ----------------------------------------------------------------------

def test_simsiam_examples():
    z = np.random.default_rng(12).normal(size=(8, 3))
    assert val(simsiam_loss, z, z, predictor=lambda v: v) == pytest.approx(-1.0, abs=1e-15)
    a = np.array([[1.0, 0.0], [0.0, 2.0]])
    b = np.array([[0.0, 3.0], [1.0, 0.0]])
    assert val(simsiam_loss, a, b, predictor=lambda v: v) == 0.0


def test_simsiam_stopgrad_branch_has_zero_gradient():
    rng = np.random.default_rng(13)
    a, b = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    fixed = rng.normal(size=(8, 3))
    t = nd.Tape()
    za, zb = t.param(a), t.param(b)
    loss = simsiam_loss(za, zb, lambda v: t.const(fixed))
    g = t.backward(loss)
    assert not g[za].any() and not g[zb].any()


def test_simsiam_zero_vector_error():
    with pytest.raises(ValueError):
        val(simsiam_loss, np.zeros((2, 2)), np.ones((2, 2)), predictor=lambda v: v)


# -- auh ----------------------------------------------------------------------------

def test_auh_examples():
    same = np.tile([[0.6, 0.8]], (5, 1))
    assert val(auh_uniformity_loss, same, same) == 0.0
    anti = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert val(auh_uniformity_loss, anti, anti, p=AUHParams(t=2.0)) == pytest.approx(-16.0, abs=1e-12)
    with pytest.raises(ParameterError):
        val(auh_uniformity_loss, np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ParameterError):
        AUHParams(t=0.0)


def test_auh_prefers_spread_points():
    rng = np.random.default_rng(14)
    center = np.zeros(8)
    center[0] = 1.0
    clustered = center + 0.2 * rng.normal(size=(512, 8))
    clustered /= np.linalg.norm(clustered, axis=1, keepdims=True)
    spread = sample_uniform_sphere(512, 8, seed=15)
    assert val(auh_uniformity_loss, spread, spread) < val(auh_uniformity_loss, clustered, clustered)


@given(st.integers(0, 2**32 - 1))
def test_auh_rotation_invariance(seed):
    z = sample_uniform_sphere(30, 4, seed=seed)
    r = special_ortho_group.rvs(4, random_state=seed % 2**31)
    assert val(auh_uniformity_loss, z, z) == pytest.approx(
        val(auh_uniformity_loss, z @ r, z @ r), rel=1e-12, abs=1e-12)


# -- mmcr ---------------------------------------------------------------------------

def test_mmcr_examples():
    eye = np.eye(2)
    assert val(lambda a, b: mmcr_loss([a, b], lam=0.005), eye, eye) == pytest.approx(-0.01, abs=1e-15)
    u = np.array([[0.6], [0.8]])
    v = np.array([[0.0, 1.0, 0.0]])
    r1 = u @ v
    t = nd.Tape()
    assert nuclear_norm(t.const(r1)).item() == pytest.approx(1.0, abs=1e-12)


def test_nuclear_norm_matches_eigen_oracle():
    c = np.random.default_rng(16).normal(size=(4, 4))
    want = np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(c.T @ c), 0, None)))
    t = nd.Tape()
    assert nuclear_norm(t.const(c)).item() == pytest.approx(want, abs=1e-8)


@pytest.mark.parametrize("shape", [(6, 3), (3, 6), (5, 5)])
def test_svd_jacobi_reconstructs(shape):
    a = np.random.default_rng(17).normal(size=shape)
    u, s, vt = svd_jacobi(a)
    assert np.allclose(u @ np.diag(s) @ vt, a, atol=1e-10)
    assert np.all(np.diff(s) <= 0)
    assert np.allclose(s, np.linalg.svd(a, compute_uv=False), atol=1e-10)


def test_svd_non_convergence_reports():
    a = np.random.default_rng(18).normal(size=(8, 8))
    with pytest.raises(NumericError, match="sweeps"):
        svd_jacobi(a, max_sweeps=1)


@given(st.integers(0, 2**31 - 1))
def test_mmcr_orthogonal_invariance(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(5, 3))
    left = special_ortho_group.rvs(5, random_state=seed)
    right = special_ortho_group.rvs(3, random_state=seed + 1)
    t = nd.Tape()
    assert nuclear_norm(t.const(c)).item() == pytest.approx(
        nuclear_norm(t.const(left @ c @ right)).item(), abs=1e-8)


def test_mmcr_errors():
    t = nd.Tape()
    with pytest.raises(ParameterError):
        mmcr_loss([t.const(np.eye(2))])
    with pytest.raises(ShapeError):
        mmcr_loss([t.const(np.eye(2)), t.const(np.eye(3))])


# -- CriterionSpec ------------------------------------------------------------------

def test_preset_coefficients():
    assert PRESET_COEFFICIENTS[Base.VICREG] == (1000.0, 100.0)
    assert PRESET_COEFFICIENTS[Base.SWAV] == (1.0, 25.0)
    assert PRESET_COEFFICIENTS[Base.SIMSIAM] == (0.001, 0.01)


def test_spec_roundtrip_and_transforms():
    spec = CriterionSpec(base="swav", addon="e2mc", beta=1.0, gamma=25.0)
    assert spec.compact_transform is CompactTransform.GAUSSIAN_CDF
    assert CriterionSpec.from_dict(spec.to_dict()) == spec
    assert CriterionSpec(base="vicreg").compact_transform is CompactTransform.SIGMOID


def test_spec_validation():
    with pytest.raises(ConfigError):
        CriterionSpec(base="swav", addon="e2mc", transform="sigmoid")
    with pytest.raises(ConfigError):
        CriterionSpec(beta=float("inf"))
    with pytest.raises(ConfigError):
        CriterionSpec(base="none", addon="mmcr")
    with pytest.raises(ConfigError):
        CriterionSpec.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        CriterionSpec(addon="simclr")
    assert CriterionSpec(addon=Addon.E2MC, transform="sigmoid").addon is Addon.E2MC
