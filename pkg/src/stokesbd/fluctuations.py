"""Gaussian surface velocities whose covariance matches the mobility solve.

The random slip fed to the saddle solve is built in two independent
pieces, mirroring the splitting of the velocity kernel: the wave part is
sampled exactly in Fourier space (a diagonal square root), the screened
real-space part by a Lanczos square root preconditioned with per-shape
eigenfactors.  Their sum has covariance (2 k_B T / dt) times the same
matrix the solver applies, which is what detailed balance of the
discretized Brownian dynamics requires.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ewald import (EwaldPlan, SparseNearField, WaveGrid, _wave_factor,
                    near_field_export, nufft_adjoint, wavenumbers)
from .geometry import Configuration, discretize, place, rotation_matrix
from .mobility import ConvergenceError, dense_near_block
from .quadrature import AlpertRule, get_rule

log = logging.getLogger(__name__)

# Sub-stream purposes.  Draw order within a purpose is fixed by the body
# ordering of the configuration, so (purpose, step) is enough to make
# every sample reproducible; dynamics claims the next integers.
KEY_WAVE = 0
KEY_NEAR = 1

_EIG_FLOOR = 1e-12      # relative cutoff below which reference modes are spurious
_LANCZOS_TINY = 1e-14   # breakdown threshold relative to the seed norm


@dataclass(frozen=True)
class GaussianStream:
    """Reproducible source of Gaussian draws, split by integer keys.

    Each distinct key tuple (purpose, step, ...) yields an independent
    counter-based generator, so samples do not depend on the order in
    which different purposes are consumed and a trajectory can be
    replayed bit for bit from the seed alone.
    """

    seed: int

    def generator(self, *key: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(key))
        return np.random.Generator(np.random.Philox(ss))


def wave_noise(plan: EwaldPlan, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance conjugate-symmetric noise on the retained mode set.

    Convention (fixed here, relied on by the sampler and its tests): for
    each velocity component, E[W(k) W(k')^*] = delta_{k,k'} and
    W(-k) = W(k)^*, which makes the inverse transform exactly real.
    Self-conjugate modes (zero and Nyquist index combinations) are real
    with unit variance; every other mode has variance 1/2 per real and
    imaginary part.  The k=0 mode is zeroed, and the Nyquist row/column
    are masked later by the wave factor anyway.  Indices follow fft
    order, matching wavenumbers().
    """
    m = plan.grid_m
    z = rng.standard_normal((2, m, m, 2))
    a = (z[..., 0] + 1j * z[..., 1]) * math.sqrt(0.5)
    flip = (-np.arange(m)) % m
    w = (a + a[:, flip][:, :, flip].conj()) / math.sqrt(2.0)
    w[:, 0, 0] = 0.0
    return w


def sample_wave_sqrt(plan: EwaldPlan, config: Configuration,
                     stream: GaussianStream, scale: float,
                     step: int = 0) -> np.ndarray:
    """Surface velocities with covariance scale^2 times the wave kernel.

    One adjoint transform of sqrt(factor)-weighted noise; no forward
    spreading is needed, so this costs half of a wave matvec.  The
    result is exactly real in exact arithmetic because the weighted
    modes stay conjugate-symmetric.
    """
    rng = stream.generator(KEY_WAVE, step)
    w = wave_noise(plan, rng)
    k = wavenumbers(plan)
    kx, ky = k[:, None], k[None, :]
    k2 = kx ** 2 + ky ** 2
    k2[0, 0] = 1.0  # guarded: the factor is zero at k=0
    dot = (kx * w[0] + ky * w[1]) / k2
    root = np.sqrt(_wave_factor(plan))
    modes = np.stack([root * (w[0] - kx * dot), root * (w[1] - ky * dot)])
    vals = nufft_adjoint(WaveGrid(plan=plan, modes=modes), config.all_nodes())
    return scale * vals.real.ravel()


@dataclass(frozen=True)
class ShapeFactors:
    """Eigenfactors of one reference body's screened-kernel block."""

    vectors: np.ndarray    # (2 n_p, m) kept eigenvectors
    values: np.ndarray     # (m,) kept eigenvalues, all positive
    n_dropped: int         # spurious modes removed (non-positive or tiny)
    drop_mass: float       # largest |eigenvalue| among the removed modes


@dataclass(frozen=True)
class SqrtWorkspace:
    """Per-shape square-root preconditioners for the near-field sampler.

    The screened kernel block of a body depends on its orientation only
    through a rotation, so one eigendecomposition per distinct shape is
    enough.  Spurious modes (quadrature artifacts with non-positive or
    negligible eigenvalues) are excluded; they carry no sampleable
    variance and would otherwise wreck the conditioning of the
    preconditioned operator.
    """

    factors: dict                 # shape -> ShapeFactors
    reduced_dim: int              # total kept modes over all bodies
    sizes: tuple                  # kept modes per body, config order


def precompute_sqrt_workspace(config: Configuration, plan: EwaldPlan,
                              rule: AlpertRule,
                              floor: float = _EIG_FLOOR) -> SqrtWorkspace:
    """Eigenfactor every distinct shape's reference block.

    floor is relative to the largest eigenvalue; modes at or below it
    are treated as spurious.  The default keeps everything positive,
    which is right for dilute configurations.  In dense packings the
    singular-quadrature artifact cluster straddles zero and inter-body
    coupling can push kept marginal modes negative, making the
    square-root iteration stall; raising the floor above the coupling
    scale (0.02 works at packing fraction one half) restores a clean
    positive preconditioned operator at the cost of a covariance
    deficit no larger than the floor itself.
    """
    factors = {}
    center = np.full(2, 0.5 * config.domain.L)
    for shape in {body.shape for body in config.bodies}:
        mesh = place(discretize(shape, config.n_p), center, 0.0)
        block = dense_near_block(mesh, plan, rule)
        block = 0.5 * (block + block.T)
        lam, vec = np.linalg.eigh(block)
        keep = lam > floor * lam[-1]
        dropped = lam[~keep]
        drop_mass = float(np.abs(dropped).max()) if dropped.size else 0.0
        kept_vec = np.ascontiguousarray(vec[:, keep])
        kept_lam = lam[keep]
        # Bookkeeping check: projecting onto the kept eigenspace must
        # reproduce the block up to exactly the discarded mass.
        proj = (kept_vec * kept_lam) @ kept_vec.T
        resid = np.abs(proj - block).max()
        if resid > drop_mass + 1e-12 * lam[-1]:
            raise ValueError(
                f"kept eigenspace misses {resid:.3e} of the reference block, "
                f"more than the {drop_mass:.3e} that was discarded")
        if dropped.size:
            log.debug("shape %r: dropped %d spurious modes, largest %.3e "
                      "(max eigenvalue %.3e)", shape, dropped.size,
                      drop_mass, lam[-1])
        factors[shape] = ShapeFactors(vectors=kept_vec, values=kept_lam,
                                      n_dropped=int(dropped.size),
                                      drop_mass=drop_mass)
    sizes = tuple(factors[b.shape].values.size for b in config.bodies)
    return SqrtWorkspace(factors=factors, reduced_dim=int(sum(sizes)),
                         sizes=sizes)


def _body_rotations(config: Configuration) -> list:
    return [rotation_matrix(body.theta) for body in config.bodies]


def workspace_maps(config: Configuration, workspace: SqrtWorkspace):
    """The three linear maps the preconditioned square root needs.

    forward   G        surface vector -> reduced coordinates
    transpose G^T      reduced -> surface
    back      G-dagger reduced -> surface, inverse scaling

    G is block diagonal over bodies: rotate into the reference frame,
    project onto the kept eigenvectors, scale by 1/sqrt(eigenvalue).
    By construction G M_ref G^T = I for a single body.
    """
    rots = _body_rotations(config)
    offs = np.concatenate([[0], np.cumsum(workspace.sizes)])

    def forward(x: np.ndarray) -> np.ndarray:
        x = x.reshape(config.n_nodes, 2)
        out = np.empty(workspace.reduced_dim)
        for beta, body in enumerate(config.bodies):
            fac = workspace.factors[body.shape]
            v = (x[config.body_slice(beta)] @ rots[beta]).ravel()
            out[offs[beta]:offs[beta + 1]] = (fac.vectors.T @ v) / np.sqrt(fac.values)
        return out

    def _assemble(y: np.ndarray, scaling: Callable) -> np.ndarray:
        out = np.empty((config.n_nodes, 2))
        for beta, body in enumerate(config.bodies):
            fac = workspace.factors[body.shape]
            coeff = scaling(y[offs[beta]:offs[beta + 1]], fac.values)
            v = (fac.vectors @ coeff).reshape(-1, 2)
            out[config.body_slice(beta)] = v @ rots[beta].T
        return out.ravel()

    def transpose(y: np.ndarray) -> np.ndarray:
        return _assemble(y, lambda c, lam: c / np.sqrt(lam))

    def back(y: np.ndarray) -> np.ndarray:
        return _assemble(y, lambda c, lam: c * np.sqrt(lam))

    return forward, transpose, back


def lanczos_sqrt(apply_a: Callable, w: np.ndarray,
                 maps: Optional[tuple] = None, tol: float = 1e-6,
                 max_iter: int = 150) -> tuple:
    """Apply back (G A G^T)^(1/2) to w by Lanczos iteration.

    maps is the (forward, transpose, back) triple from workspace_maps,
    or None for the unpreconditioned square root of A itself.  w lives
    in the reduced coordinates.  Iterates until successive square-root
    approximations differ by less than tol in relative norm.  Negative
    Ritz values (spurious, from indefinite quadrature artifacts) are
    clamped to zero inside the tridiagonal square root.  An invariant
    Krylov subspace (breakdown) makes the current iterate exact, so it
    is returned as is.

    Returns (vector, iterations).
    """
    if maps is None:
        identity = lambda v: v
        fwd, trans, back = identity, identity, identity
    else:
        fwd, trans, back = maps

    norm_w = np.linalg.norm(w)
    if norm_w == 0.0:
        return back(np.zeros_like(w)), 0

    basis = [w / norm_w]
    alphas: list = []
    betas: list = []
    x_prev = None
    history = []
    for j in range(max_iter):
        z = fwd(apply_a(trans(basis[j])))
        alphas.append(float(basis[j] @ z))
        # full reorthogonalization; the basis stays small
        for q in basis:
            z -= (q @ z) * q
        k = j + 1
        t = np.diag(np.asarray(alphas))
        if betas:
            off = np.asarray(betas)
            t[np.arange(k - 1), np.arange(1, k)] = off
            t[np.arange(1, k), np.arange(k - 1)] = off
        lam, u = np.linalg.eigh(t)
        if lam[0] < -0.05 * abs(lam[-1]):
            raise ConvergenceError(
                f"preconditioned operator is indefinite (Ritz values "
                f"{lam[0]:.3e} .. {lam[-1]:.3e}); raise the workspace "
                f"eigenvalue floor above the inter-body coupling scale",
                history)
        coeff = u @ (np.sqrt(np.clip(lam, 0.0, None)) * u[0])
        x = norm_w * np.einsum("i,i...->...", coeff, np.asarray(basis))
        if x_prev is not None:
            diff = np.linalg.norm(x - x_prev) / max(np.linalg.norm(x), 1e-300)
            history.append(diff)
            if diff <= tol:
                return back(x), k
        x_prev = x
        beta = np.linalg.norm(z)
        if beta <= _LANCZOS_TINY * norm_w:
            return back(x), k
        betas.append(float(beta))
        basis.append(z / beta)
    raise ConvergenceError(
        f"square-root iteration did not settle within {max_iter} steps "
        f"(last difference {history[-1] if history else float('nan'):.3e})",
        history)


def sample_near_sqrt(config: Configuration, near: SparseNearField,
                     workspace: SqrtWorkspace, stream: GaussianStream,
                     scale: float, step: int = 0, tol: float = 1e-6,
                     max_iter: int = 150) -> tuple:
    """Surface velocities with covariance scale^2 times the screened kernel.

    Covariance is exact on the kept eigenspaces of each body; the
    spurious modes excluded by the workspace contribute nothing.
    Returns (velocities, lanczos_iterations).
    """
    rng = stream.generator(KEY_NEAR, step)
    w = rng.standard_normal(workspace.reduced_dim)
    maps = workspace_maps(config, workspace)
    x, iters = lanczos_sqrt(near.apply, w, maps=maps, tol=tol,
                            max_iter=max_iter)
    return scale * x, iters


def sample_surface_velocity(config: Configuration, plan: EwaldPlan,
                            k_bt: float, dt: float, stream: GaussianStream,
                            near: Optional[SparseNearField] = None,
                            workspace: Optional[SqrtWorkspace] = None,
                            rule: Optional[AlpertRule] = None,
                            step: int = 0, tol: float = 1e-6) -> np.ndarray:
    """One random slip vector for the fluctuating saddle solve.

    Wave and screened parts use independent sub-streams, so either half
    can be reproduced on its own with the same stream and step.
    """
    n = 2 * config.n_nodes
    if k_bt == 0.0:
        return np.zeros(n)
    rule = rule if rule is not None else get_rule(4)
    if near is None:
        near = near_field_export(config, plan, rule)
    if workspace is None:
        workspace = precompute_sqrt_workspace(config, plan, rule)
    scale = math.sqrt(2.0 * k_bt / dt)
    v_wave = sample_wave_sqrt(plan, config, stream, scale, step=step)
    v_near, _ = sample_near_sqrt(config, near, workspace, stream, scale,
                                 step=step, tol=tol)
    return v_wave + v_near
