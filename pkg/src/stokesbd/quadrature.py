"""Locally corrected trapezoid rule for the log-singular single-layer kernel.

The screened real-space Stokeslet has an integrable log singularity along
the diagonal of each body's self-interaction block. The plain trapezoid
rule is replaced near the diagonal by a hybrid rule: trapezoid nodes
within `offset` of the target are dropped, and auxiliary nodes placed at
non-integer parameter offsets chi_k restore the rule's order. Density
values at auxiliary nodes come from Lagrange interpolation over the
target node and the `m` grid nodes on the same side, so the whole
correction is a banded matrix acting on the discrete density.

Corrections are built once per body shape in the reference pose. The
screened kernel is isotropic and the auxiliary geometry rotates rigidly,
so the rotated correction is exactly R M_ref R^T applied blockwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._alpert_tables import LOG_RULES
from .geometry import SurfaceMesh, rotation_matrix
from .kernels import SplitParams, stokeslet_real


@dataclass(frozen=True)
class AlpertRule:
    """Log-singularity correction rule of a given convergence order."""

    order: int
    offset: int            # first trapezoid node retained on each side
    nodes: np.ndarray      # auxiliary parameter offsets chi_k in (0, offset]
    weights: np.ndarray

    @property
    def stencil(self) -> int:
        """One-sided width of the interpolation stencil (= order)."""
        return self.order

    def min_nodes(self) -> int:
        return 4 * self.order


def get_rule(order: int) -> AlpertRule:
    if order not in LOG_RULES:
        raise ValueError(f"no log rule of order {order}; have {sorted(LOG_RULES)}")
    t = LOG_RULES[order]
    return AlpertRule(
        order=order,
        offset=t["offset"],
        nodes=np.array(t["nodes"]),
        weights=np.array(t["weights"]),
    )


def lagrange_coefficients(stencil: int, chi: float) -> np.ndarray:
    """Coefficients l_i(chi) for interpolation from grid offsets {0..m}.

    The auxiliary nodes satisfy 0 < chi <= offset < m, so this is proper
    interpolation (chi inside the stencil hull), which keeps the
    coefficients modest and the correction matrix well behaved.
    """
    out = np.empty(stencil + 1)
    for i in range(stencil + 1):
        num = 1.0
        den = 1.0
        for l in range(stencil + 1):
            if l != i:
                num *= chi - l
                den *= i - l
        out[i] = num / den
    return out


@dataclass(frozen=True)
class SingularBlock:
    """Symmetrized correction matrix for one body in reference pose.

    `dense` is the (2 N_p, 2 N_p) correction with half-bandwidth
    `rule.stencil` in node index (cyclic); r_alpert is the largest
    node-to-stencil-edge chord, the reach of the correction.
    """

    rule: AlpertRule
    dense: np.ndarray
    r_alpert: float

    @property
    def n_nodes(self) -> int:
        return self.dense.shape[0] // 2


def _aux_geometry(mesh: SurfaceMesh, s_aux: np.ndarray) -> np.ndarray:
    """Positions of the (possibly placed) body surface at parameters s_aux."""
    shape = mesh.shape
    rho = shape.rho(s_aux)
    u = np.stack([np.cos(s_aux), np.sin(s_aux)], axis=-1)
    pos = rho[..., None] * u
    if mesh.theta != 0.0:
        pos = pos @ rotation_matrix(mesh.theta).T
    return pos + mesh.q


def correction_radius(rule: AlpertRule, mesh: SurfaceMesh) -> float:
    """Largest chord from any node to the edge of its correction stencil."""
    m = rule.stencil
    fwd = np.roll(mesh.nodes, -m, axis=0) - mesh.nodes
    bwd = np.roll(mesh.nodes, m, axis=0) - mesh.nodes
    return float(max(np.hypot(fwd[:, 0], fwd[:, 1]).max(),
                     np.hypot(bwd[:, 0], bwd[:, 1]).max()))


def alpert_reference(mesh_ref: SurfaceMesh, rule: AlpertRule,
                     split: SplitParams) -> SingularBlock:
    """Build the symmetrized correction block for one body shape.

    The correction plays together with a trapezoid part that skips
    intra-body node pairs of cyclic index distance < rule.offset; summing
    both integrates the screened single-layer kernel to the rule's order.
    """
    n = mesh_ref.n_nodes
    if n < rule.min_nodes():
        raise ValueError(
            f"correction stencils overlap: need N_p >= {rule.min_nodes()} "
            f"for the order-{rule.order} rule, got {n}")
    m = rule.stencil
    h = mesh_ref.ds
    corr = np.zeros((n, 2, n, 2))
    ell = np.stack([lagrange_coefficients(m, chi) for chi in rule.nodes])
    for sign in (+1, -1):
        # aux positions for every target at once: (n, j) parameter grid
        s_aux = mesh_ref.s[:, None] + sign * rule.nodes[None, :] * h
        pos = _aux_geometry(mesh_ref, s_aux)
        G = stokeslet_real(mesh_ref.nodes[:, None, :] - pos, split)  # (n, j, 2, 2)
        # weight and distribute onto the stencil columns
        wG = rule.weights[None, :, None, None] * G
        for i in range(m + 1):
            cols = (np.arange(n) + sign * i) % n
            contrib = np.einsum("j,njab->nab", ell[:, i], wG)
            corr[np.arange(n), :, cols, :] += contrib
    dense = corr.reshape(2 * n, 2 * n)
    dense = 0.5 * (dense + dense.T)
    return SingularBlock(rule=rule, dense=dense,
                         r_alpert=correction_radius(rule, mesh_ref))


def rotated_dense(block: SingularBlock, theta: float) -> np.ndarray:
    """The correction for the body rotated by theta, as a dense matrix."""
    n = block.n_nodes
    rot = rotation_matrix(theta)
    four = block.dense.reshape(n, 2, n, 2)
    out = np.einsum("ab,ibjc,dc->iajd", rot, four, rot)
    return out.reshape(2 * n, 2 * n)


def apply_rotated(block: SingularBlock, theta: float, mu: np.ndarray) -> np.ndarray:
    """Apply the rotated correction: R (M_ref (R^T mu)) per 2-vector."""
    n = block.n_nodes
    rot = rotation_matrix(theta)
    v = mu.reshape(n, 2) @ rot  # R^T applied to each node vector
    w = (block.dense @ v.ravel()).reshape(n, 2)
    return (w @ rot.T).ravel()
