"""Singular-quadrature checks: rule tables, model problems, banded blocks."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stokesbd.geometry import Disk, Starfish, discretize
from stokesbd.kernels import SplitParams
from stokesbd.quadrature import (
    alpert_reference,
    apply_rotated,
    correction_radius,
    get_rule,
    lagrange_coefficients,
    rotated_dense,
)

# adaptive mpmath quadrature of ln|2 sin((s-t)/2)| cos(t) over one period,
# s = 1.1 (equals the eigenrelation value -pi cos s)
MODEL_ORACLE = -1.4250142427674177331
MODEL_S = 1.1

# int_0^1 ln(x) (1-x)^9 x^m dx, m = 0,1,2 (adaptive mpmath quadrature)
LOG_POLY_ORACLE = {
    0: -0.29289682539682539683,
    1: -0.018362521317066771612,
    2: -0.0024291070881979972889,
}


def scalar_rule(order, f, n):
    """Corrected trapezoid for a periodic integrand log-singular at 0 and 2pi."""
    rule = get_rule(order)
    h = 2.0 * np.pi / n
    i = np.arange(rule.offset, n - rule.offset + 1)
    tot = h * np.sum(f(i * h))
    tot += h * np.sum(rule.weights * (f(rule.nodes * h) + f(2.0 * np.pi - rule.nodes * h)))
    return tot


def model_error(order, n):
    f = lambda tau: np.log(np.abs(2.0 * np.sin(tau / 2.0))) * np.cos(MODEL_S + tau)
    return abs(scalar_rule(order, f, n) - MODEL_ORACLE)


@pytest.mark.parametrize("order", [4, 8])
def test_model_problem_converges_at_order(order):
    e32, e64 = model_error(order, 32), model_error(order, 64)
    assert e64 < 1e-6
    assert e32 / max(e64, 1e-15) >= 2 ** (order / 2)


def test_model_problem_high_resolution():
    assert model_error(4, 512) < 1e-11
    assert model_error(8, 256) < 1e-13


@pytest.mark.parametrize("order", [4, 8])
def test_log_polynomial_moments(order):
    # f(x) = ln(x) (1-x)^9 x^m on [0, 1]: right end vanishes to ninth order,
    # so the one-sided corrected rule must reproduce the integrals at the
    # rule's order; at n=512 that is effectively exact
    rule = get_rule(order)
    n = 512
    h = 1.0 / n
    for m, ref in LOG_POLY_ORACLE.items():
        f = lambda x: np.log(x) * (1.0 - x) ** 9 * x ** m
        i = np.arange(rule.offset, n)
        tot = h * np.sum(f(i * h))  # f(1) = 0
        tot += h * np.sum(rule.weights * f(rule.nodes * h))
        assert tot == pytest.approx(ref, abs=2e-10 if order == 4 else 1e-13)


def test_rule_tables_sane():
    for order in (4, 8):
        rule = get_rule(order)
        assert np.all(rule.nodes > 0)
        assert np.all(np.diff(rule.nodes) > 0)
        assert np.all(rule.weights > 0)
        assert rule.stencil == order
    with pytest.raises(ValueError):
        get_rule(6)


@given(st.floats(min_value=0.01, max_value=4.0))
def test_lagrange_reproduces_polynomials(chi):
    m = 4
    ell = lagrange_coefficients(m, chi)
    assert np.sum(ell) == pytest.approx(1.0, abs=1e-10)
    grid = np.arange(0, m + 1)
    for deg in range(m + 1):
        assert np.sum(ell * grid**deg) == pytest.approx(chi**deg, rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------------------
# banded correction blocks


SPLIT = SplitParams(xi=20.13)


def dense_near_field(mesh, rule, split):
    """Trapezoid part (cyclic offsets >= rule.offset) + correction block."""
    n = mesh.n_nodes
    block = alpert_reference(mesh, rule, split).dense.copy()
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :])
    dist = np.minimum(dist, n - dist)
    from stokesbd.kernels import stokeslet_real

    for t in range(n):
        for j in range(n):
            if dist[t, j] >= rule.offset:
                G = stokeslet_real(mesh.nodes[t] - mesh.nodes[j], split)
                block[2 * t: 2 * t + 2, 2 * j: 2 * j + 2] += G
    return block


@pytest.mark.parametrize("order,bound", [(4, 2e-6), (8, 5e-8)])
def test_normal_field_in_null_space(order, bound):
    # the screened kernel is divergence-free, so the single layer of the
    # normal field vanishes identically; discrete residual is pure
    # quadrature error
    mesh = discretize(Disk(0.25), 64)
    rule = get_rule(order)
    M = dense_near_field(mesh, rule, SPLIT)
    mu = (mesh.normals * mesh.weights[:, None]).ravel()
    assert np.max(np.abs(M @ mu)) < bound


def test_normal_null_space_converges():
    mesh32 = discretize(Disk(0.25), 32)
    mesh64 = discretize(Disk(0.25), 64)
    rule = get_rule(4)
    errs = []
    for mesh in (mesh32, mesh64):
        M = dense_near_field(mesh, rule, SPLIT)
        mu = (mesh.normals * mesh.weights[:, None]).ravel()
        errs.append(np.max(np.abs(M @ mu)))
    assert errs[1] < errs[0] / 2 ** (4 / 2)


def test_block_symmetric_and_banded():
    mesh = discretize(Starfish(0.3, 0.3), 64)
    rule = get_rule(4)
    block = alpert_reference(mesh, rule, SPLIT)
    assert np.array_equal(block.dense, block.dense.T)
    four = block.dense.reshape(64, 2, 64, 2)
    idx = np.arange(64)
    dist = np.abs(idx[:, None] - idx[None, :])
    dist = np.minimum(dist, 64 - dist)
    far = dist > rule.stencil
    assert np.all(four[far[:, None, :, None] & np.ones((1, 2, 1, 2), bool)] == 0.0)
    near = dist <= rule.stencil
    assert np.any(four[near[:, None, :, None] & np.ones((1, 2, 1, 2), bool)] != 0.0)


def test_rotation_reuse_is_exact():
    # screened kernel is isotropic and aux geometry rotates rigidly, so
    # reuse is exact for every shape, not only disks
    rule = get_rule(4)
    for shape, theta in [(Disk(0.25), 1.3), (Starfish(0.3, 0.3), 0.7)]:
        mesh = discretize(shape, 64)
        ref = alpert_reference(mesh, rule, SPLIT)
        from stokesbd.geometry import place

        fresh = alpert_reference(place(mesh, np.zeros(2), theta), rule, SPLIT)
        rot = rotated_dense(ref, theta)
        scale = np.max(np.abs(fresh.dense))
        assert np.max(np.abs(rot - fresh.dense)) < 1e-13 * scale
        # matrix application agrees with apply_rotated
        rng = np.random.default_rng(0)
        mu = rng.normal(size=2 * 64)
        assert np.allclose(apply_rotated(ref, theta, mu), rot @ mu, atol=1e-14)


def test_rotation_at_zero_is_identity():
    mesh = discretize(Starfish(0.3, 0.3), 64)
    block = alpert_reference(mesh, get_rule(4), SPLIT)
    rng = np.random.default_rng(1)
    mu = rng.normal(size=2 * 64)
    assert np.allclose(apply_rotated(block, 0.0, mu), block.dense @ mu)


def test_correction_radius_scalings():
    rule4, rule8 = get_rule(4), get_rule(8)
    mesh = discretize(Disk(1.0), 64)
    r4 = correction_radius(rule4, mesh)
    assert r4 == pytest.approx(4 * 2 * np.pi / 64, rel=0.02)
    assert correction_radius(rule8, mesh) == pytest.approx(2 * r4, rel=0.02)
    fine = discretize(Disk(1.0), 128)
    assert correction_radius(rule4, fine) == pytest.approx(r4 / 2, rel=0.01)


def test_too_few_nodes_rejected():
    mesh = discretize(Disk(0.25), 12)
    with pytest.raises(ValueError, match="N_p"):
        alpert_reference(mesh, get_rule(4), SPLIT)
    mesh = discretize(Disk(0.25), 24)
    with pytest.raises(ValueError, match="N_p"):
        alpert_reference(mesh, get_rule(8), SPLIT)


def nystrom_spectrum(shape, n):
    # eigenvalues of the Nystrom discretization of the screened single
    # layer: W^(1/2) M W^(1/2) is similar to M W and approximates the
    # (positive semidefinite) continuum operator
    mesh = discretize(shape, n)
    M = dense_near_field(mesh, get_rule(4), SPLIT)
    w = np.repeat(mesh.weights, 2)
    Ms = np.sqrt(w)[:, None] * 0.5 * (M + M.T) * np.sqrt(w)[None, :]
    return np.linalg.eigvalsh(Ms)


@pytest.mark.parametrize("shape", [Disk(0.25), Starfish(0.3, 0.3)],
                         ids=["disk", "starfish"])
def test_spurious_negative_eigenvalues_bounded(shape):
    # the singular correction is indefinite on under-resolved modes, so a
    # few spurious negatives appear; they must stay well inside the
    # positive part of the spectrum at every resolution
    for n in (64, 256):
        eigs = nystrom_spectrum(shape, n)
        assert eigs.max() > 0.0
        assert eigs.min() > -0.6 * eigs.max()


def test_spurious_negatives_shrink_under_refinement():
    coarse = nystrom_spectrum(Disk(0.25), 64)
    fine = nystrom_spectrum(Disk(0.25), 256)
    assert abs(fine.min()) < abs(coarse.min())
    # the positive edge of the spectrum has converged
    assert fine.max() == pytest.approx(coarse.max(), rel=1e-4)
