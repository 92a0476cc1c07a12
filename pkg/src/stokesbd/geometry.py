"""Body shapes, surface meshes, periodic-domain utilities, neighbor search.

Shapes are star-shaped curves given by a radius function rho(s) of the
parameter s in [0, 2pi), gamma(s) = rho(s) (cos s, sin s). Meshes are
built once in a reference pose (body centered at the origin, theta = 0)
and rigidly placed; all differential quantities (tangent, normal,
curvature, arc-length element) come from analytic derivatives of rho.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class PeriodicDomain:
    """Square periodic cell [0, L)^2."""

    L: float

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("domain side L must be positive")

    @property
    def volume(self) -> float:
        return self.L * self.L


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Disk:
    a: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("disk radius must be positive")

    @property
    def radius(self) -> float:
        """Circumscribed radius (equals the disk radius)."""
        return self.a

    def rho(self, s):
        return np.full_like(np.asarray(s, dtype=float), self.a)

    def drho(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))

    def d2rho(self, s):
        return np.zeros_like(np.asarray(s, dtype=float))


@dataclass(frozen=True)
class Starfish:
    """Four-lobed star rho(s) = r_s (1 + b cos(arms*s)).

    The circumscribed radius is a = r_s (1 + b).
    """

    r_s: float
    b: float
    arms: int = 4

    def __post_init__(self):
        if not self.r_s > 0:
            raise ValueError("starfish base radius must be positive")
        if not 0 <= self.b < 1:
            raise ValueError("lobe amplitude must satisfy 0 <= b < 1")

    @property
    def radius(self) -> float:
        return self.r_s * (1.0 + self.b)

    def rho(self, s):
        return self.r_s * (1.0 + self.b * np.cos(self.arms * np.asarray(s, dtype=float)))

    def drho(self, s):
        m = self.arms
        return -self.r_s * self.b * m * np.sin(m * np.asarray(s, dtype=float))

    def d2rho(self, s):
        m = self.arms
        return -self.r_s * self.b * m * m * np.cos(m * np.asarray(s, dtype=float))


@dataclass(frozen=True)
class FourierCurve:
    """Radius function rho(s) = c0 + sum_m (c_m cos(ms) + s_m sin(ms)).

    cos_coeffs[0] is the constant term; sin_coeffs[0] is ignored (kept
    for index alignment). The curve must stay strictly star-shaped
    (rho > 0 everywhere), which also guarantees it is simple.
    """

    cos_coeffs: tuple
    sin_coeffs: tuple = ()

    def __post_init__(self):
        cos_c = tuple(float(c) for c in self.cos_coeffs)
        sin_c = tuple(float(c) for c in self.sin_coeffs)
        object.__setattr__(self, "cos_coeffs", cos_c)
        object.__setattr__(self, "sin_coeffs", sin_c)
        s = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
        if np.min(self.rho(s)) <= 0:
            raise ValueError("FourierCurve radius must stay positive (simple curve)")

    @property
    def radius(self) -> float:
        s = np.linspace(0.0, 2.0 * np.pi, 4096, endpoint=False)
        return float(np.max(self.rho(s)))

    def _terms(self):
        for m, c in enumerate(self.cos_coeffs):
            if c != 0.0:
                yield m, c, "cos"
        for m, c in enumerate(self.sin_coeffs):
            if m >= 1 and c != 0.0:
                yield m, c, "sin"

    def rho(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for m, c, kind in self._terms():
            out += c * (np.cos(m * s) if kind == "cos" else np.sin(m * s))
        return out

    def drho(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for m, c, kind in self._terms():
            out += c * m * (-np.sin(m * s) if kind == "cos" else np.cos(m * s))
        return out

    def d2rho(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for m, c, kind in self._terms():
            out -= c * m * m * (np.cos(m * s) if kind == "cos" else np.sin(m * s))
        return out


BodyShape = Disk | Starfish | FourierCurve


# ---------------------------------------------------------------------------
# meshes


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SurfaceMesh:
    """Equispaced-in-parameter discretization of one body surface.

    nodes, tangents, normals are (N_p, 2); curvatures and speeds
    (|gamma'(s_j)|) are (N_p,). weights = speeds * ds are the trapezoid
    arc-length elements. Normals point into the fluid. q and theta record
    the rigid placement relative to the reference pose, so off-node
    geometry can be reconstructed from the shape functions.
    """

    shape: BodyShape
    s: np.ndarray
    nodes: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    curvatures: np.ndarray
    speeds: np.ndarray
    ds: float
    q: np.ndarray = field(default_factory=lambda: np.zeros(2))
    theta: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return self.speeds * self.ds

    @property
    def perimeter(self) -> float:
        return float(np.sum(self.weights))


def discretize(shape: BodyShape, n_p: int) -> SurfaceMesh:
    """Mesh a shape with n_p nodes equispaced in parameter.

    n_p must be even and at least 4; solver components impose stricter
    lower bounds of their own (the singular quadrature needs room for
    its correction stencils).
    """
    if n_p < 4 or n_p % 2 != 0:
        raise ValueError(f"n_p must be even and >= 4, got {n_p}")
    s = 2.0 * np.pi * np.arange(n_p) / n_p
    rho = shape.rho(s)
    drho = shape.drho(s)
    d2rho = shape.d2rho(s)
    u = np.stack([np.cos(s), np.sin(s)], axis=1)
    up = np.stack([-np.sin(s), np.cos(s)], axis=1)
    nodes = rho[:, None] * u
    d1 = drho[:, None] * u + rho[:, None] * up
    d2 = (d2rho - rho)[:, None] * u + 2.0 * drho[:, None] * up
    speeds = np.hypot(d1[:, 0], d1[:, 1])
    tangents = d1 / speeds[:, None]
    # outward normal of a positively oriented curve
    normals = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    curvatures = cross / speeds**3
    return SurfaceMesh(
        shape=shape,
        s=_freeze(s),
        nodes=_freeze(nodes),
        tangents=_freeze(tangents),
        normals=_freeze(normals),
        curvatures=_freeze(curvatures),
        speeds=_freeze(speeds),
        ds=2.0 * np.pi / n_p,
    )


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def place(mesh_ref: SurfaceMesh, q, theta: float) -> SurfaceMesh:
    """Rigidly place a reference mesh at tracking point q, rotation theta."""
    q = np.asarray(q, dtype=float)
    rot = rotation_matrix(theta)
    return replace(
        mesh_ref,
        nodes=_freeze(mesh_ref.nodes @ rot.T + q),
        tangents=_freeze(mesh_ref.tangents @ rot.T),
        normals=_freeze(mesh_ref.normals @ rot.T),
        q=_freeze(q.copy()),
        theta=float(theta),
    )


# ---------------------------------------------------------------------------
# periodic utilities


def min_image(r, domain: PeriodicDomain):
    """Map separation vectors componentwise into [-L/2, L/2)."""
    r = np.asarray(r, dtype=float)
    L = domain.L
    return r - L * np.floor(r / L + 0.5)


def wrap_position(x, domain: PeriodicDomain):
    """Map positions componentwise into [0, L)."""
    x = np.asarray(x, dtype=float)
    return x - domain.L * np.floor(x / domain.L)


@dataclass(frozen=True)
class CellList:
    """Nodes bucketed into an N_box x N_box grid of side r_c = L/N_box."""

    domain: PeriodicDomain
    n_box: int
    cell_of: np.ndarray      # (n,) flat bucket index per node
    order: np.ndarray        # node indices sorted by bucket
    start: np.ndarray        # (n_box^2 + 1,) bucket -> slice of `order`

    @property
    def r_c(self) -> float:
        return self.domain.L / self.n_box

    def bucket_nodes(self, b: int) -> np.ndarray:
        return self.order[self.start[b] : self.start[b + 1]]


def build_cell_list(nodes: np.ndarray, domain: PeriodicDomain, n_box: int) -> CellList:
    """Sort nodes into periodic buckets; requires n_box >= 3.

    With at least 3 buckets per dimension a 3x3 stencil visits each
    neighboring bucket exactly once, so pair enumeration never
    double-counts across the periodic wrap.
    """
    if n_box < 3:
        raise ValueError(f"n_box must be >= 3, got {n_box}")
    nodes = np.asarray(nodes, dtype=float)
    w = wrap_position(nodes, domain)
    idx = np.floor(w / domain.L * n_box).astype(np.int64)
    np.clip(idx, 0, n_box - 1, out=idx)
    flat = idx[:, 0] * n_box + idx[:, 1]
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n_box * n_box)
    start = np.concatenate([[0], np.cumsum(counts)])
    return CellList(domain=domain, n_box=n_box, cell_of=_freeze(flat),
                    order=_freeze(order), start=_freeze(start))


_HALF_STENCIL = ((0, 0), (1, 0), (1, 1), (0, 1), (-1, 1))


def neighbor_pairs(cells: CellList, nodes: np.ndarray):
    """All unordered node pairs with minimum-image distance < r_c.

    Returns (i, j, dx) with i != j, each pair once, and dx the
    minimum-image displacement nodes[i] - nodes[j].
    """
    nodes = np.asarray(nodes, dtype=float)
    nb = cells.n_box
    ii = []
    jj = []
    for b in range(nb * nb):
        a_nodes = cells.bucket_nodes(b)
        if a_nodes.size == 0:
            continue
        bx, by = divmod(b, nb)
        for ox, oy in _HALF_STENCIL:
            cx, cy = (bx + ox) % nb, (by + oy) % nb
            c = cx * nb + cy
            b_nodes = cells.bucket_nodes(c)
            if b_nodes.size == 0:
                continue
            if (ox, oy) == (0, 0):
                ia, ib = np.triu_indices(a_nodes.size, k=1)
                ii.append(a_nodes[ia])
                jj.append(a_nodes[ib])
            else:
                ia, ib = np.meshgrid(a_nodes, b_nodes, indexing="ij")
                ii.append(ia.ravel())
                jj.append(ib.ravel())
    if not ii:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty.copy(), np.empty((0, 2))
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    dx = min_image(nodes[i] - nodes[j], cells.domain)
    keep = np.einsum("ij,ij->i", dx, dx) < cells.r_c**2
    return i[keep], j[keep], dx[keep]


# ---------------------------------------------------------------------------
# bodies and configurations


@dataclass(frozen=True)
class Body:
    """Rigid body: shape reference, tracking point q, unwrapped angle theta."""

    shape: BodyShape
    q: np.ndarray
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", _freeze(np.asarray(self.q, dtype=float)))
        object.__setattr__(self, "theta", float(self.theta))


class Configuration:
    """A periodic domain plus placed rigid bodies sharing one mesh resolution."""

    def __init__(self, domain: PeriodicDomain, bodies: Sequence[Body], n_p: int):
        self.domain = domain
        self.bodies = list(bodies)
        self.n_p = int(n_p)
        self._ref_meshes: dict = {}
        for body in self.bodies:
            if body.shape not in self._ref_meshes:
                self._ref_meshes[body.shape] = discretize(body.shape, self.n_p)

    @property
    def n_bodies(self) -> int:
        return len(self.bodies)

    @property
    def n_nodes(self) -> int:
        return self.n_p * self.n_bodies

    def mesh_ref(self, shape: BodyShape) -> SurfaceMesh:
        return self._ref_meshes[shape]

    def placed_mesh(self, beta: int) -> SurfaceMesh:
        body = self.bodies[beta]
        return place(self._ref_meshes[body.shape], body.q, body.theta)

    def all_nodes(self) -> np.ndarray:
        """All node positions stacked, shape (n_bodies*n_p, 2)."""
        return np.concatenate([self.placed_mesh(b).nodes for b in range(self.n_bodies)])

    def body_slice(self, beta: int) -> slice:
        return slice(beta * self.n_p, (beta + 1) * self.n_p)

    def with_state(self, Q: np.ndarray) -> "Configuration":
        """Copy with body states replaced by the 3N vector (qx, qy, theta)*N."""
        Q = np.asarray(Q, dtype=float).reshape(self.n_bodies, 3)
        bodies = [replace(b, q=Q[i, :2].copy(), theta=float(Q[i, 2]))
                  for i, b in enumerate(self.bodies)]
        new = object.__new__(Configuration)
        new.domain = self.domain
        new.bodies = bodies
        new.n_p = self.n_p
        new._ref_meshes = self._ref_meshes
        return new

    def state(self) -> np.ndarray:
        return np.concatenate([[b.q[0], b.q[1], b.theta] for b in self.bodies])


# ---------------------------------------------------------------------------
# random configurations


def gap_statistic(phi: float, phi0: float) -> float:
    """Minimum surface gap over radius, d_min/a = 2 (sqrt(phi0/phi) - 1)."""
    if not 0 < phi < phi0:
        raise ValueError("need 0 < phi < phi0")
    return 2.0 * (np.sqrt(phi0 / phi) - 1.0)


def generate_random_config(
    n_bodies: int,
    phi: float,
    phi0: float,
    seed: int,
    domain: PeriodicDomain | None = None,
    n_p: int = 32,
    max_tries_per_body: int = 20000,
) -> Configuration:
    """Random non-overlapping disk suspension at packing fraction phi.

    Disks of radius a0 = a*sqrt(phi0/phi) are inserted by seeded random
    sequential addition (rejecting overlaps under minimum image), then
    shrunk to radius a in place, which guarantees every pairwise surface
    gap is at least d_min = 2a (sqrt(phi0/phi) - 1). RSA jams well below
    dense packings, so phi0 is capped at 0.54.
    """
    if not 0 < phi < phi0 < 0.7:
        raise ValueError("need 0 < phi < phi0 < 0.7")
    if phi0 > 0.54:
        raise ValueError("phi0 > 0.54 is unreachable by sequential insertion")
    if domain is None:
        domain = PeriodicDomain(1.0)
    L = domain.L
    a = L * np.sqrt(phi / (n_bodies * np.pi))
    a0 = a * np.sqrt(phi0 / phi)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    centers = np.empty((0, 2))
    for placed_count in range(n_bodies):
        for _ in range(max_tries_per_body):
            cand = rng.random(2) * L
            if centers.shape[0]:
                d = min_image(centers - cand, domain)
                if np.min(np.einsum("ij,ij->i", d, d)) < (2.0 * a0) ** 2:
                    continue
            centers = np.vstack([centers, cand])
            break
        else:
            raise RuntimeError(
                f"random sequential insertion stalled after placing "
                f"{placed_count} of {n_bodies} bodies (phi0={phi0})"
            )
    shape = Disk(a)
    bodies = [Body(shape=shape, q=c, theta=0.0) for c in centers]
    return Configuration(domain, bodies, n_p)


def generate_packed_config(
    n_bodies: int,
    phi: float,
    phi0: float,
    seed: int,
    domain: PeriodicDomain | None = None,
    n_p: int = 32,
    max_sweeps: int = 20000,
) -> Configuration:
    """Dense random disk suspension beyond the reach of plain insertion.

    Starts from a sequential-addition configuration at a feasible
    effective fraction, then alternates seeded Monte Carlo displacement
    sweeps with hard-core growth toward radius a0 = a*sqrt(phi0/phi).
    Once a0 is reached the disks are shrunk to radius a, so gaps satisfy
    the same bound as generate_random_config, but phi0 up to ~0.65 is
    attainable.  Deterministic for a given seed.  Cost is O(N^2) per
    sweep, fine for the few hundred bodies used in benchmarks.
    """
    if not 0 < phi < phi0 < 0.68:
        raise ValueError("need 0 < phi < phi0 < 0.68")
    if domain is None:
        domain = PeriodicDomain(1.0)
    L = domain.L
    a = L * np.sqrt(phi / (n_bodies * np.pi))
    a0 = a * np.sqrt(phi0 / phi)
    start = min(phi0, 0.40)
    base = generate_random_config(n_bodies, phi, max(start, phi * 1.0001),
                                  seed, domain, n_p)
    centers = np.array([b.q for b in base.bodies])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(1,))))
    r = a * np.sqrt(max(start, phi * 1.0001) / phi)

    def min_pair_dist(c):
        best = np.inf
        for i in range(1, n_bodies):
            d = min_image(c[i:] - c[i - 1], domain)
            best = min(best, np.min(np.einsum("ij,ij->i", d, d)))
        return np.sqrt(best)

    for sweep in range(max_sweeps):
        if r >= a0:
            break
        # grow as far as the current gaps allow, but gently
        r = min(a0, min(1.01 * r, 0.4999 * min_pair_dist(centers)))
        # one displacement sweep at the current core radius
        amp = 0.3 * (L / np.sqrt(n_bodies))
        order = rng.permutation(n_bodies)
        kicks = rng.normal(scale=amp, size=(n_bodies, 2))
        for i in order:
            cand = wrap_position(centers[i] + kicks[i], domain)
            others = np.delete(centers, i, axis=0)
            d = min_image(others - cand, domain)
            if np.min(np.einsum("ij,ij->i", d, d)) >= (2.0 * r) ** 2:
                centers[i] = cand
    else:
        raise RuntimeError(
            f"packing stalled at effective radius {r/a0:.4f} of target "
            f"(phi0={phi0}) after {max_sweeps} sweeps")
    shape = Disk(a)
    bodies = [Body(shape=shape, q=c.copy(), theta=0.0) for c in centers]
    return Configuration(domain, bodies, n_p)


# ---------------------------------------------------------------------------
# serialization

_SHAPE_TAGS = {"disk": Disk, "starfish": Starfish, "fourier": FourierCurve}


def _shape_to_dict(shape: BodyShape) -> dict:
    if isinstance(shape, Disk):
        return {"shape": "disk", "params": {"a": shape.a}}
    if isinstance(shape, Starfish):
        return {"shape": "starfish",
                "params": {"r_s": shape.r_s, "b": shape.b, "arms": shape.arms}}
    if isinstance(shape, FourierCurve):
        return {"shape": "fourier",
                "params": {"cos_coeffs": list(shape.cos_coeffs),
                           "sin_coeffs": list(shape.sin_coeffs)}}
    raise TypeError(f"unknown shape {shape!r}")


def _shape_from_dict(d: dict) -> BodyShape:
    cls = _SHAPE_TAGS[d["shape"]]
    params = dict(d["params"])
    if cls is FourierCurve:
        params = {"cos_coeffs": tuple(params["cos_coeffs"]),
                  "sin_coeffs": tuple(params.get("sin_coeffs", ()))}
    return cls(**params)


def config_to_json(config: Configuration) -> str:
    """Serialize a configuration; floats round-trip exactly (repr digits)."""
    doc = {
        "L": config.domain.L,
        "n_p": config.n_p,
        "bodies": [
            {**_shape_to_dict(b.shape), "q": [b.q[0], b.q[1]], "theta": b.theta}
            for b in config.bodies
        ],
    }
    return json.dumps(doc, indent=2)


def config_from_json(text: str) -> Configuration:
    doc = json.loads(text)
    domain = PeriodicDomain(doc["L"])
    bodies = [
        Body(shape=_shape_from_dict(b), q=np.array(b["q"]), theta=b["theta"])
        for b in doc["bodies"]
    ]
    return Configuration(domain, bodies, doc.get("n_p", 32))
