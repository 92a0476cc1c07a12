"""Rigid-body maps, the saddle-point mobility solve, and its preconditioner.

The discrete mobility problem couples the single-layer operator M with the
geometric map K that spreads rigid motions to surface nodes:

    M mu - K U = -v_slip
    K^T mu     = F

GMRES iterates on this symmetric indefinite system as written; the
preconditioner inverts an independent-body approximation built from a
single-body reference matrix, reused across poses by rotation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .ewald import EwaldPlan, SparseNearField, near_field_export, wave_matvec
from .geometry import (Configuration, SurfaceMesh, discretize, place,
                       rotation_matrix)
from .kernels import hasimoto_hat, perp, stokeslet_real
from .quadrature import AlpertRule, alpert_reference, get_rule

logger = logging.getLogger(__name__)

# relative eigenvalue floor of the reference pseudo-inverse; the discrete
# normal field may fall below it (its eigenvalue is quadrature-small, not
# zero), so anywhere from zero to one dropped modes is healthy
_PINV_FLOOR = 1e-12

_MAX_ITER_DEFAULT = 500


class ConvergenceError(RuntimeError):
    """An iteration failed to converge; carries the residual history."""

    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


# ---------------------------------------------------------------------------
# rigid-body maps


def apply_K(motion: np.ndarray, config: Configuration) -> np.ndarray:
    """Spread rigid motions (u_x, u_y, omega per body) to surface nodes."""
    motion = np.asarray(motion, dtype=float).reshape(config.n_bodies, 3)
    out = np.empty((config.n_nodes, 2))
    for beta in range(config.n_bodies):
        mesh = config.placed_mesh(beta)
        r = mesh.nodes - mesh.q
        sl = config.body_slice(beta)
        out[sl] = motion[beta, :2] + motion[beta, 2] * perp(r)
    return out.ravel()


def apply_KT(mu: np.ndarray, config: Configuration) -> np.ndarray:
    """Sum node forces to net force and torque per body."""
    mu = np.asarray(mu, dtype=float).reshape(config.n_nodes, 2)
    out = np.empty(3 * config.n_bodies)
    for beta in range(config.n_bodies):
        mesh = config.placed_mesh(beta)
        r = mesh.nodes - mesh.q
        m = mu[config.body_slice(beta)]
        out[3 * beta:3 * beta + 2] = m.sum(axis=0)
        out[3 * beta + 2] = np.sum(r[:, 0] * m[:, 1] - r[:, 1] * m[:, 0])
    return out


def _reference_K(mesh: SurfaceMesh) -> np.ndarray:
    """Dense (2 N_p, 3) rigid map of one body in reference pose."""
    n = mesh.nodes.shape[0]
    K = np.zeros((2 * n, 3))
    K[0::2, 0] = 1.0
    K[1::2, 1] = 1.0
    K[:, 2] = perp(mesh.nodes - mesh.q).ravel()
    return K


# ---------------------------------------------------------------------------
# dense single-body mobility (preconditioner reference and small oracles)


def dense_wave_block(nodes: np.ndarray, plan: EwaldPlan) -> np.ndarray:
    """Wave part of M by direct summation over the retained mode set."""
    m = plan.grid_m
    xi = plan.split.xi
    kap = np.arange(-(m // 2) + 1, m // 2)
    kx, ky = np.meshgrid(kap, kap, indexing="ij")
    keep = (kx != 0) | (ky != 0)
    K = 2.0 * math.pi / plan.box_len * np.stack([kx[keep], ky[keep]], axis=1)
    k2 = np.einsum("ij,ij->i", K, K)
    fac = hasimoto_hat(np.sqrt(k2), xi) / k2 / (plan.split.eta * plan.volume)
    khat = K / np.sqrt(k2)[:, None]
    E = np.exp(-1j * nodes @ K.T)                    # (n, nm)
    n = len(nodes)
    out = np.empty((2 * n, 2 * n))
    proj = {
        (0, 0): 1.0 - khat[:, 0] ** 2,
        (0, 1): -khat[:, 0] * khat[:, 1],
        (1, 1): 1.0 - khat[:, 1] ** 2,
    }
    for (a, b), p in proj.items():
        blk = np.real(np.conj(E) @ ((fac * p)[:, None] * E.T))
        out[a::2, b::2] = blk
        if a != b:
            out[b::2, a::2] = blk
    return out


def dense_near_block(mesh: SurfaceMesh, plan: EwaldPlan,
                     rule: AlpertRule) -> np.ndarray:
    """Near part of single-body M: singular block plus trapezoid tail."""
    n = mesh.nodes.shape[0]
    dense = alpert_reference(mesh, rule, plan.split).dense.copy()
    idx = np.arange(n)
    cyc = np.abs(idx[:, None] - idx[None, :])
    cyc = np.minimum(cyc, n - cyc)
    for i in range(n):
        for j in range(n):
            if i != j and cyc[i, j] >= rule.offset:
                dense[2 * i:2 * i + 2, 2 * j:2 * j + 2] += stokeslet_real(
                    mesh.nodes[i] - mesh.nodes[j], plan.split)
    return dense


@dataclass(frozen=True)
class BlockPreconditioner:
    """Reference single-body blocks, reused across bodies by rotation."""

    mesh_ref: SurfaceMesh
    m_ref: np.ndarray        # dense reference mobility (2 N_p, 2 N_p)
    m_pinv: np.ndarray       # filtered pseudo-inverse of its symmetric part
    n_ref: np.ndarray        # (K^T M_pinv K)^(-1), 3x3
    dropped: int             # eigenvalues under the pseudo-inverse floor


def precompute_preconditioner(shape, n_p: int, rule: AlpertRule,
                              plan: EwaldPlan) -> BlockPreconditioner:
    """Assemble and factor the single-body reference mobility for a shape.

    The reference body sits at the box center in unrotated pose; any
    other position gives the same matrix by translation invariance, and
    other orientations are recovered with rotation matrices.
    """
    center = np.full(2, 0.5 * plan.box_len)
    mesh = place(discretize(shape, n_p), center, 0.0)
    m_ref = dense_near_block(mesh, plan, rule) + dense_wave_block(
        mesh.nodes, plan)
    sym = 0.5 * (m_ref + m_ref.T)
    lam, vec = np.linalg.eigh(sym)
    floor = _PINV_FLOOR * np.max(np.abs(lam))
    small = np.abs(lam) < floor
    dropped = int(np.count_nonzero(small))
    if dropped > 1:
        raise ValueError(
            f"reference mobility for {shape} is rank-deficient beyond the "
            f"single normal-field mode: {dropped} eigenvalues under "
            f"{floor:.2e}")
    inv = np.where(small, 0.0, 1.0 / np.where(small, 1.0, lam))
    m_pinv = (vec * inv[None, :]) @ vec.T
    K = _reference_K(mesh)
    n_ref = np.linalg.inv(K.T @ m_pinv @ K)
    return BlockPreconditioner(mesh_ref=mesh, m_ref=m_ref, m_pinv=m_pinv,
                               n_ref=n_ref, dropped=dropped)


def _precon_table(config: Configuration, precon) -> list[BlockPreconditioner]:
    """Resolve one BlockPreconditioner per body from object or mapping."""
    if isinstance(precon, BlockPreconditioner):
        return [precon] * config.n_bodies
    return [precon[b.shape] for b in config.bodies]


def apply_block_preconditioner(resid: np.ndarray, config: Configuration,
                               precon) -> np.ndarray:
    """Solve the block-diagonal saddle system for a stacked residual.

    For each body independently (a = surface block, b = motion block):
        U  = -N_ref_rot (b + K^T M_pinv a)
        mu = M_pinv (a + K U)
    with all reference blocks conjugated by the body's rotation.
    """
    table = _precon_table(config, precon)
    n2 = 2 * config.n_nodes
    a_all = resid[:n2].reshape(config.n_nodes, 2)
    b_all = resid[n2:].reshape(config.n_bodies, 3)
    mu = np.empty_like(a_all)
    motion = np.empty_like(b_all)
    for beta, block in enumerate(table):
        R = rotation_matrix(config.bodies[beta].theta)
        sl = config.body_slice(beta)
        a_ref = (a_all[sl] @ R).ravel()          # rotate into reference pose
        v = block.m_pinv @ a_ref
        K = _reference_K(block.mesh_ref)
        s = K.T @ v
        b = b_all[beta]
        b_ref = np.array([*(R.T @ b[:2]), b[2]])
        u_ref = -block.n_ref @ (b_ref + s)
        mu_ref = v + block.m_pinv @ (K @ u_ref)
        mu[sl] = mu_ref.reshape(-1, 2) @ R.T     # rotate back
        motion[beta, :2] = R @ u_ref[:2]
        motion[beta, 2] = u_ref[2]
    return np.concatenate([mu.ravel(), motion.ravel()])


# ---------------------------------------------------------------------------
# GMRES (full basis, right-preconditioned)


def gmres(matvec, b: np.ndarray, tol: float,
          max_iter: int = _MAX_ITER_DEFAULT, precondition=None):
    """Right-preconditioned GMRES with a full (unrestarted) Krylov basis.

    Convergence is declared on the relative unpreconditioned residual
    |b - A x| / |b|, which the Arnoldi recurrence tracks exactly under
    right preconditioning. Returns (x, iterations, residual history).
    """
    b = np.asarray(b, dtype=float)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return np.zeros_like(b), 0, [0.0]
    if precondition is None:
        precondition = lambda r: r
    max_iter = min(max_iter, len(b))
    basis = [b / norm_b]
    H = np.zeros((max_iter + 1, max_iter))
    cs = np.zeros(max_iter)
    sn = np.zeros(max_iter)
    g = np.zeros(max_iter + 1)
    g[0] = norm_b
    history = []
    for j in range(max_iter):
        # copy: a matvec may hand back its input (identity-like operators)
        # and the in-place orthogonalization must not touch the basis
        w = np.array(matvec(precondition(basis[j])), dtype=float)
        for i in range(j + 1):
            H[i, j] = np.dot(w, basis[i])
            w -= H[i, j] * basis[i]
        # second orthogonalization pass; without it the basis loses rank
        # on ill-conditioned saddle systems and the iteration stagnates
        for i in range(j + 1):
            c = np.dot(w, basis[i])
            H[i, j] += c
            w -= c * basis[i]
        H[j + 1, j] = np.linalg.norm(w)
        exhausted = H[j + 1, j] == 0.0
        if not exhausted:
            basis.append(w / H[j + 1, j])
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        denom = math.hypot(H[j, j], H[j + 1, j])
        if denom == 0.0:
            raise ConvergenceError(
                "Krylov space collapsed (singular operator)", history)
        cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
        H[j, j] = denom
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        rel = abs(g[j + 1]) / norm_b
        history.append(rel)
        if rel <= tol or exhausted:
            if rel > tol:
                raise ConvergenceError(
                    f"Krylov space exhausted at residual {rel:.3e} "
                    f"(requested {tol:.1e})", history)
            y = np.linalg.solve(np.triu(H[:j + 1, :j + 1]), g[:j + 1])
            x = np.vstack(basis[:j + 1]).T @ y
            return precondition(x), j + 1, history
    raise ConvergenceError(
        f"GMRES did not reach {tol:.1e} in {max_iter} iterations "
        f"(last residual {history[-1]:.3e})", history)


# ---------------------------------------------------------------------------
# saddle solve


@dataclass
class SaddleResult:
    mu: np.ndarray          # boundary force density, (2 n_nodes,)
    motion: np.ndarray      # rigid motions, (3 N,)
    iterations: int
    residuals: list[float]
    normal_projection: float  # magnitude removed from v_slip for solvability


def _project_normal_modes(vslip: np.ndarray,
                          config: Configuration) -> tuple[np.ndarray, float]:
    """Remove each body's weighted-normal component from the slip field."""
    v = vslip.reshape(config.n_nodes, 2).copy()
    worst = 0.0
    for beta in range(config.n_bodies):
        mesh = config.placed_mesh(beta)
        nw = mesh.normals * mesh.weights[:, None]
        sl = config.body_slice(beta)
        c = np.sum(v[sl] * nw) / np.sum(nw * nw)
        v[sl] -= c * nw
        worst = max(worst, abs(c) * np.linalg.norm(nw))
    return v.ravel(), worst


def solve_saddle(config: Configuration, force: np.ndarray,
                 vslip: np.ndarray | None = None, *,
                 plan: EwaldPlan, near: SparseNearField | None = None,
                 rule: AlpertRule | None = None, precon=None,
                 eps_tol: float = 1e-9,
                 max_iter: int = _MAX_ITER_DEFAULT) -> SaddleResult:
    """Solve the coupled mobility system for boundary forces and motions.

    force is the applied (f_x, f_y, torque) stack; vslip, if given, is an
    extra surface velocity (Brownian samplers feed it here). The slip is
    projected body-by-body against the discrete weighted normal, the one
    direction the single-layer operator cannot produce.
    """
    force = np.asarray(force, dtype=float).ravel()
    if rule is None:
        rule = get_rule(4)
    if near is None:
        near = near_field_export(config, plan, rule)
    n2 = 2 * config.n_nodes
    proj_mag = 0.0
    if vslip is None:
        vslip = np.zeros(n2)
    else:
        vslip, proj_mag = _project_normal_modes(
            np.asarray(vslip, dtype=float).ravel(), config)
        if proj_mag > 0.0:
            logger.debug("slip normal-mode projection magnitude %.3e",
                         proj_mag)

    def operate(z):
        mu, U = z[:n2], z[n2:]
        top = near.apply(mu) + wave_matvec(mu, config, plan) - apply_K(
            U, config)
        bottom = -apply_KT(mu, config)
        return np.concatenate([top, bottom])

    rhs = np.concatenate([-vslip, -force])
    pre = None
    if precon is not None:
        pre = lambda r: apply_block_preconditioner(r, config, precon)
    z, iters, history = gmres(operate, rhs, eps_tol, max_iter, pre)
    return SaddleResult(mu=z[:n2], motion=z[n2:], iterations=iters,
                        residuals=history, normal_projection=proj_mag)


def body_mobility_dense(config: Configuration, *, plan: EwaldPlan,
                        near: SparseNearField | None = None,
                        rule: AlpertRule | None = None, precon=None,
                        eps_tol: float = 1e-9) -> np.ndarray:
    """Assemble the 3N x 3N body mobility by unit-force probing."""
    if rule is None:
        rule = get_rule(4)
    if near is None:
        near = near_field_export(config, plan, rule)
    n3 = 3 * config.n_bodies
    N = np.empty((n3, n3))
    for j in range(n3):
        e = np.zeros(n3)
        e[j] = 1.0
        N[:, j] = solve_saddle(config, e, plan=plan, near=near, rule=rule,
                               precon=precon, eps_tol=eps_tol).motion
    return N
