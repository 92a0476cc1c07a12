"""Linear-scaling application of the periodized single-layer mobility.

The screened split sends each half of the kernel to the data structure
that suits it. The real-space part decays like exp(-xi^2 r^2), so it is
summed with a cell list and exported as a block-sparse matrix together
with the banded singular corrections. The wave-space part decays in k
and is applied on a uniform grid: point densities are smeared onto the
grid with a truncated Gaussian window, convolved mode-by-mode with the
screened wave kernel, and interpolated back with the adjoint window.
All tolerances trace back to a single requested accuracy eps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import (
    Configuration,
    PeriodicDomain,
    build_cell_list,
    neighbor_pairs,
    wrap_position,
)
from .kernels import SplitParams, hasimoto_hat, stokeslet_real
from .quadrature import AlpertRule, alpert_reference, rotated_dense

# empirical prefactors of the truncation error in each space
_C_REAL = 100.0
_C_WAVE = 1.0

# refinement of the spreading grid relative to the retained mode grid;
# smearing and interpolation run on the fine grid so the Gaussian window
# is resolved there, and only the coarse-grid mode set is kept after the
# transform. Without this the deconvolution amplifies the window
# truncation at the highest retained modes far above the plan tolerance.
_OVERSAMPLE = 2

# warn when the singular-correction stencil reaches too close to the
# real-space cutoff; beyond this ratio the corrected band no longer sits
# safely inside the near-field interaction range
_RADIUS_RATIO_LIMIT = 0.6


@dataclass(frozen=True)
class EwaldPlan:
    """Parameters of one splitting, fixed for the lifetime of a run."""

    tol: float
    box_len: float
    n_box: int
    split: SplitParams
    grid_m: int          # uniform grid is grid_m x grid_m, even
    support_p: int       # window support in grid points per dimension, odd

    @property
    def r_c(self) -> float:
        return self.box_len / self.n_box

    @property
    def grid_h(self) -> float:
        return self.box_len / self.grid_m

    @property
    def spread_m(self) -> int:
        """Size of the oversampled grid used for smearing/interpolation."""
        return _OVERSAMPLE * self.grid_m

    @property
    def spread_h(self) -> float:
        return self.box_len / self.spread_m

    @property
    def eta_g(self) -> float:
        """Window shape parameter, tied to the spreading-grid spacing."""
        xi = self.split.xi
        return (xi * self.spread_h) ** 2 * self.support_p / math.pi

    @property
    def volume(self) -> float:
        return self.box_len ** 2


def select_params(eps: float, box_len: float, n_box: int, *,
                  viscosity: float = 1.0,
                  r_alpert: float | None = None) -> EwaldPlan:
    """Choose splitting, grid, and window so every truncation is <= eps.

    The cutoff r_c = box_len/n_box fixes xi through the real-space error
    estimate; the grid then resolves the wave kernel down to eps, and the
    window support bounds the smearing truncation by exp(-pi P / 2).
    """
    if not 1e-12 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-12, 1e-3], got {eps}")
    if n_box < 3:
        raise ValueError(f"n_box must be >= 3, got {n_box}")
    r_c = box_len / n_box
    xi = math.sqrt(math.log(_C_REAL / eps)) / r_c
    k_needed = 2.0 * xi * math.sqrt(math.log(_C_WAVE / eps))
    grid_m = 2 * math.ceil(k_needed * box_len / (2.0 * math.pi))
    support_p = math.ceil(2.0 / math.pi * math.log(1.0 / eps))
    if support_p % 2 == 0:
        support_p += 1
    if grid_m < support_p + 1:
        grid_m = support_p + 1  # window must fit on the grid without wrap
    plan = EwaldPlan(tol=eps, box_len=box_len, n_box=n_box,
                     split=SplitParams(xi=xi, eta=viscosity),
                     grid_m=grid_m, support_p=support_p)
    if r_alpert is not None:
        _warn_if_radius_large(r_alpert, plan.r_c)
    return plan


def _warn_if_radius_large(r_alpert: float, r_c: float) -> None:
    ratio = r_alpert / r_c
    if ratio > _RADIUS_RATIO_LIMIT:
        warnings.warn(
            f"singular-correction radius is {ratio:.3f} of the near-field "
            f"cutoff (limit {_RADIUS_RATIO_LIMIT}); accuracy degrades when "
            "corrected node pairs extend beyond the real-space range",
            stacklevel=3)


# ---------------------------------------------------------------------------
# near field: cell-list pairs + banded corrections, exported sparsely


@dataclass(frozen=True)
class SparseNearField:
    """Screened real-space mobility in block-sparse form.

    Holds both triangles explicitly so a matvec is a single sparse
    product; symmetric by construction because the screened kernel is an
    even, symmetric tensor and the correction blocks are symmetrized.
    """

    matrix: sp.bsr_matrix
    r_alpert: float

    def apply(self, mu: np.ndarray) -> np.ndarray:
        return self.matrix @ mu


def near_field_export(config: Configuration, plan: EwaldPlan,
                      rule: AlpertRule) -> SparseNearField:
    """Assemble all real-space interactions within the cutoff.

    Intra-body node pairs closer than the rule's offset are left to the
    singular-correction band; everything else within r_c enters with the
    minimum-image displacement. Images beyond the nearest are negligible
    because xi * r_c puts the kernel below the plan tolerance there.
    """
    n_p = config.n_p
    n_tot = config.n_nodes
    nodes = config.all_nodes()
    cells = build_cell_list(nodes, config.domain, plan.n_box)
    i, j, dx = neighbor_pairs(cells, nodes)

    same_body = (i // n_p) == (j // n_p)
    li, lj = i % n_p, j % n_p
    cyc = np.abs(li - lj)
    cyc = np.minimum(cyc, n_p - cyc)
    keep = ~(same_body & (cyc < rule.offset))
    i, j, dx = i[keep], j[keep], dx[keep]

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    if i.size:
        blocks = stokeslet_real(dx, plan.split)  # (pairs, 2, 2)
        aa, bb = np.meshgrid(np.arange(2), np.arange(2), indexing="ij")
        for r, c, g in ((i, j, blocks), (j, i, blocks)):
            # the kernel is even and symmetric, so the transposed block
            # equals the original and both triangles share one array
            rows.append((2 * r[:, None, None] + aa).ravel())
            cols.append((2 * c[:, None, None] + bb).ravel())
            vals.append(g.reshape(-1, 4).ravel())

    r_alpert = 0.0
    ref_blocks: dict = {}
    for shape in {body.shape for body in config.bodies}:
        ref_blocks[shape] = alpert_reference(config.mesh_ref(shape), rule,
                                             plan.split)
        r_alpert = max(r_alpert, ref_blocks[shape].r_alpert)
    band = np.arange(2 * n_p)
    rr, cc = np.meshgrid(band, band, indexing="ij")
    for beta, body in enumerate(config.bodies):
        dense = rotated_dense(ref_blocks[body.shape], body.theta)
        rows.append((rr + 2 * n_p * beta).ravel())
        cols.append((cc + 2 * n_p * beta).ravel())
        vals.append(dense.ravel())

    coo = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * n_tot, 2 * n_tot))
    _warn_if_radius_large(r_alpert, plan.r_c)
    return SparseNearField(matrix=coo.tocsr().tobsr(blocksize=(2, 2)),
                           r_alpert=r_alpert)


# ---------------------------------------------------------------------------
# wave field: Gaussian window NUFFT pair and gridded convolution


@dataclass(frozen=True)
class WaveGrid:
    """Fourier data of a smeared field on the uniform grid, deconvolved."""

    plan: EwaldPlan
    modes: np.ndarray  # complex, shape (2, M, M), fft mode order


def wavenumbers(plan: EwaldPlan) -> np.ndarray:
    """1D wavenumbers in fft order; the grid is square so x and y share."""
    return 2.0 * math.pi * np.fft.fftfreq(plan.grid_m, d=plan.grid_h)


def _deconvolution(plan: EwaldPlan) -> np.ndarray:
    k = wavenumbers(plan)
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    return np.exp(plan.eta_g * k2 / (8.0 * plan.split.xi ** 2))


def _retained(plan: EwaldPlan) -> np.ndarray:
    """Fine-grid fft indices of the retained coarse mode set."""
    m, mf = plan.grid_m, plan.spread_m
    return np.r_[0:m // 2, mf - m // 2:mf]


def _window(plan: EwaldPlan, points: np.ndarray):
    """Truncated Gaussian window: flat fine-grid indices and weights.

    Returns (idx, w) with shapes (n, P*P); mass-normalized untruncated
    Gaussian, truncation below exp(-pi P / 2) by the choice of support.
    """
    m, p, h = plan.spread_m, plan.support_p, plan.spread_h
    xi = plan.split.xi
    eta_g = plan.eta_g
    half = (p - 1) // 2
    offsets = np.arange(-half, half + 1)
    centers = np.rint(points / h).astype(np.int64)  # nearest grid node
    pref = math.sqrt(2.0 * xi * xi / (math.pi * eta_g))
    w1 = []
    ix = []
    for axis in range(2):
        cells = centers[:, axis, None] + offsets[None, :]
        delta = points[:, axis, None] - cells * h
        w1.append(pref * np.exp(-2.0 * xi * xi * delta ** 2 / eta_g))
        ix.append(np.mod(cells, m))
    w2 = (w1[0][:, :, None] * w1[1][:, None, :]).reshape(len(points), -1)
    idx = (ix[0][:, :, None] * m + ix[1][:, None, :]).reshape(len(points), -1)
    return idx, w2


def nufft_forward(points: np.ndarray, strengths: np.ndarray,
                  plan: EwaldPlan) -> WaveGrid:
    """Type-1 transform: (Dq)(k) ~= sum_j q_j exp(-i k . x_j).

    Smear with the window onto the oversampled grid, transform with
    trapezoid weights, keep the coarse mode set, divide out the window's
    Fourier factor.
    """
    mf = plan.spread_m
    points = wrap_position(np.asarray(points, dtype=float), _domain(plan))
    strengths = np.asarray(strengths, dtype=float).reshape(len(points), 2)
    idx, w2 = _window(plan, points)
    grid = np.empty((2, mf, mf))
    for comp in range(2):
        acc = np.bincount(idx.ravel(),
                          weights=(strengths[:, comp, None] * w2).ravel(),
                          minlength=mf * mf)
        grid[comp] = acc.reshape(mf, mf)
    sel = _retained(plan)
    fine = np.fft.fft2(grid) * plan.spread_h ** 2
    modes = fine[:, sel[:, None], sel[None, :]] * _deconvolution(plan)
    return WaveGrid(plan=plan, modes=modes)


def nufft_adjoint(grid: WaveGrid, points: np.ndarray) -> np.ndarray:
    """Adjoint of nufft_forward; evaluates sum_k w(k) exp(+i k . x_j).

    Exact algebraic adjoint of the forward map (same truncated window,
    coarse modes zero-embedded into the fine spectrum), so the identity
    <D q, w> = <q, D* w> holds to round-off.
    """
    plan = grid.plan
    mf = plan.spread_m
    points = wrap_position(np.asarray(points, dtype=float), _domain(plan))
    sel = _retained(plan)
    fine = np.zeros((2, mf, mf), dtype=complex)
    fine[:, sel[:, None], sel[None, :]] = grid.modes * _deconvolution(plan)
    spread = np.fft.ifft2(fine)
    spread *= plan.spread_h ** 2 * mf * mf
    idx, w2 = _window(plan, points)
    flat = spread.reshape(2, mf * mf)
    return np.einsum("np,cnp->nc", w2, flat[:, idx])


def _domain(plan: EwaldPlan) -> PeriodicDomain:
    return PeriodicDomain(L=plan.box_len)


def _wave_factor(plan: EwaldPlan) -> np.ndarray:
    """Scalar part of the wave kernel on the grid, zero at k=0.

    The Nyquist row and column are masked as well: the screening factor
    is below the plan tolerance there and dropping them keeps the
    retained mode set symmetric under k -> -k, which in turn keeps the
    convolved field conjugate-symmetric.
    """
    plan_k = wavenumbers(plan)
    k2 = plan_k[:, None] ** 2 + plan_k[None, :] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = hasimoto_hat(np.sqrt(k2), plan.split.xi) / k2
    fac[0, 0] = 0.0
    m = plan.grid_m
    fac[m // 2, :] = 0.0
    fac[:, m // 2] = 0.0
    return fac / (plan.split.eta * plan.volume)


def wave_matvec(mu: np.ndarray, config: Configuration,
                plan: EwaldPlan) -> np.ndarray:
    """Apply the wave-space mobility to a stacked density vector."""
    points = config.all_nodes()
    fwd = nufft_forward(points, np.asarray(mu, dtype=float), plan)
    k = wavenumbers(plan)
    kx, ky = k[:, None], k[None, :]
    k2 = kx ** 2 + ky ** 2
    k2[0, 0] = 1.0  # guarded: factor is zero at k=0 anyway
    fac = _wave_factor(plan)
    mx, my = fwd.modes
    dot = (kx * mx + ky * my) / k2
    out = WaveGrid(plan=plan, modes=np.stack(
        [fac * (mx - kx * dot), fac * (my - ky * dot)]))
    vals = nufft_adjoint(out, points)
    return vals.real.ravel()


def full_matvec(mu: np.ndarray, config: Configuration, plan: EwaldPlan,
                near: SparseNearField) -> np.ndarray:
    """M mu with M = near field (incl. corrections) + wave field."""
    return near.apply(np.asarray(mu, dtype=float)) + wave_matvec(mu, config, plan)
