"""Annular domains, their triangulations and the observation region.

The domain is Omega = Omega_2 minus the closed disc Omega_1.  The inner
circle Gamma carries the friction condition, the outer curve Gamma_0 the
homogeneous Dirichlet condition.  Both curves are star-shaped about the
origin, so they are stored as polar radius functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import Delaunay, cKDTree

GAMMA = 1
GAMMA0 = 0

ON_CURVE_TOL = 1e-12
SPACING_FACTOR = 0.8


class MeshError(ValueError):
    """Raised for invalid domain specifications or failed mesh generation."""


@dataclass(frozen=True)
class Circle:
    radius: float

    def r(self, theta):
        return np.full_like(np.asarray(theta, dtype=float), self.radius)

    def dr(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    def min_radius(self) -> float:
        return self.radius

    def max_radius(self) -> float:
        return self.radius

    def area(self) -> float:
        return math.pi * self.radius**2


@dataclass(frozen=True)
class Flower:
    """Curve r(theta) = r0 + rho * cos(k * theta)."""

    r0: float = 1.0
    rho: float = 0.25
    k: int = 6

    def __post_init__(self):
        if not (self.r0 > self.rho >= 0) or self.k < 1:
            raise MeshError(f"degenerate flower parameters {self}")

    def r(self, theta):
        return self.r0 + self.rho * np.cos(self.k * np.asarray(theta, dtype=float))

    def dr(self, theta):
        return -self.rho * self.k * np.sin(self.k * np.asarray(theta, dtype=float))

    def min_radius(self) -> float:
        return self.r0 - self.rho

    def max_radius(self) -> float:
        return self.r0 + self.rho

    def area(self) -> float:
        return math.pi * (self.r0**2 + 0.5 * self.rho**2)


@dataclass(frozen=True)
class Disc:
    center: tuple[float, float]
    radius: float

    def area(self) -> float:
        return math.pi * self.radius**2


def distance_to_curve(curve, points, samples: int = 20000) -> np.ndarray:
    """Approximate Euclidean distance of ``points`` to a closed polar curve."""
    theta = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    rr = curve.r(theta)
    pts = np.column_stack([rr * np.cos(theta), rr * np.sin(theta)])
    d, _ = cKDTree(pts).query(np.atleast_2d(points))
    # chord sagitta bound keeps this within ~1e-6 of the true distance
    return d


@dataclass(frozen=True)
class DomainSpec:
    inner: Circle
    outer: Circle | Flower
    omega_discs: tuple[Disc, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "omega_discs", tuple(self.omega_discs))
        if self.inner.radius <= 0:
            raise MeshError("inner radius must be positive")
        if self.outer.min_radius() <= self.inner.radius:
            raise MeshError("inner circle must lie strictly inside the outer curve")
        for disc in self.omega_discs:
            c = np.asarray(disc.center, dtype=float)
            if disc.radius <= 0:
                raise MeshError(f"disc {disc} has non-positive radius")
            if np.hypot(*c) - disc.radius <= self.inner.radius:
                raise MeshError(f"disc {disc} touches the inner boundary")
            if distance_to_curve(self.outer, c[None, :])[0] <= disc.radius:
                raise MeshError(f"disc {disc} touches the outer boundary")
            if not self.contains(c[None, :])[0]:
                raise MeshError(f"disc center {disc.center} is outside the domain")

    @property
    def gap(self) -> float:
        return self.outer.min_radius() - self.inner.radius

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        rad = np.hypot(p[:, 0], p[:, 1])
        theta = np.arctan2(p[:, 1], p[:, 0])
        return (rad > self.inner.radius) & (rad < self.outer.r(theta))

    def area(self) -> float:
        return self.outer.area() - self.inner.area()

    def omega_area(self) -> float:
        return sum(d.area() for d in self.omega_discs)


def annulus(r_in: float = 0.5, r_out: float = 1.0, omega_discs=()) -> DomainSpec:
    return DomainSpec(Circle(r_in), Circle(r_out), tuple(omega_discs))


def flower_discs(k: int = 6, center_radius: float = 0.8,
                 axis_radius: float = 0.25, other_radius: float = 0.2) -> tuple[Disc, ...]:
    """One disc per petal; the petals on the x-axis get the larger radius."""
    discs = []
    for m in range(k):
        phi = 2.0 * math.pi * m / k
        c = (center_radius * math.cos(phi), center_radius * math.sin(phi))
        on_axis = abs(math.sin(phi)) < 1e-12
        c = (round(c[0], 15), round(c[1], 15))
        discs.append(Disc(c, axis_radius if on_axis else other_radius))
    return tuple(discs)


def flower_domain(r_in: float = 0.25, r0: float = 1.0, rho: float = 0.25, k: int = 6,
                  omega_discs=None) -> DomainSpec:
    if omega_discs is None:
        omega_discs = flower_discs(k)
    return DomainSpec(Circle(r_in), Flower(r0, rho, k), tuple(omega_discs))


def omega_indicator(spec: DomainSpec, point) -> bool | np.ndarray:
    """Membership in the union of the open observation discs.

    Returns a bool for a single point and a boolean array for an (n, 2) array.
    """
    p = np.asarray(point, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    inside = np.zeros(len(p), dtype=bool)
    for disc in spec.omega_discs:
        cx, cy = disc.center
        inside |= (p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2 < disc.radius**2
    return bool(inside[0]) if single else inside


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with counterclockwise triangles.

    ``boundary_edges`` is a (p, 2) vertex-index array; ``boundary_markers``
    holds GAMMA (inner) or GAMMA0 (outer) for each of them.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    h_max: float = field(init=False)

    def __post_init__(self):
        for name, dtype in (("vertices", float), ("triangles", np.int64),
                            ("boundary_edges", np.int64), ("boundary_markers", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "h_max", measure_h(self))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def edges(self, marker: int) -> np.ndarray:
        return self.boundary_edges[self.boundary_markers == marker]

    @property
    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges(GAMMA0).ravel()] = True
        return mask

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        """Lengths of all unique edges."""
        e = unique_edges(self.triangles)
        d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
        return np.hypot(d[:, 0], d[:, 1])


def unique_edges(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def measure_h(mesh: Mesh) -> float:
    """Longest edge over all triangles."""
    p = mesh.vertices[mesh.triangles]
    d = p - np.roll(p, -1, axis=1)
    return float(np.sqrt((d**2).sum(axis=2)).max())


# ---------------------------------------------------------------------------
# generation


def _curve_nodes(curve, h: float, offset: float) -> np.ndarray:
    """Nodes on a closed polar curve, equidistributed in arclength."""
    n_dense = 20000
    theta = np.linspace(0.0, 2.0 * math.pi, n_dense + 1)
    speed = np.hypot(curve.r(theta), curve.dr(theta))
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(theta))])
    length = arc[-1]
    n = max(8, int(math.ceil(length / h)))
    targets = (np.arange(n) + offset) * (length / n)
    t = np.interp(targets, arc, theta)
    rr = curve.r(t)
    return np.column_stack([rr * np.cos(t), rr * np.sin(t)])


def _inward_layer(nodes: np.ndarray, h: float, into_positive_side: bool) -> np.ndarray:
    """Staggered points offset from a closed CCW polyline by h*sqrt(3)/2."""
    nxt = np.roll(nodes, -1, axis=0)
    mid = 0.5 * (nodes + nxt)
    tang = nxt - nodes
    tang /= np.hypot(tang[:, 0], tang[:, 1])[:, None]
    left = np.column_stack([-tang[:, 1], tang[:, 0]])
    normal = -left if into_positive_side else left
    return mid + 0.5 * math.sqrt(3.0) * h * normal


def _hex_lattice(spec: DomainSpec, h: float, rng: np.random.Generator) -> np.ndarray:
    R = spec.outer.max_radius() + 2 * h
    angle = rng.uniform(0.0, math.pi / 3.0)
    shift = rng.uniform(0.0, h, size=2)
    nx = int(math.ceil(2 * R / h)) + 2
    ny = int(math.ceil(2 * R / (h * math.sqrt(3.0) / 2))) + 2
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    x = (i + 0.5 * (j % 2)) * h - R + shift[0]
    y = j * h * math.sqrt(3.0) / 2 - R + shift[1]
    c, s = math.cos(angle), math.sin(angle)
    pts = np.column_stack([x.ravel(), y.ravel()])
    return pts @ np.array([[c, s], [-s, c]])


def _thin(points: np.ndarray, min_dist: float) -> np.ndarray:
    """Greedy removal so that kept points are pairwise at least min_dist apart."""
    tree = cKDTree(points)
    keep = np.ones(len(points), dtype=bool)
    for i, j in sorted(tree.query_pairs(min_dist)):
        if keep[i] and keep[j]:
            keep[j] = False
    return points[keep]


def _smooth(vertices, triangles, fixed, iterations: int = 6, relax: float = 0.5):
    n = len(vertices)
    e = unique_edges(triangles)
    adj = sparse.coo_matrix((np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                            shape=(n, n)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    free = ~fixed
    v = vertices.copy()
    for _ in range(iterations):
        avg = (adj @ v) / deg[:, None]
        trial = v.copy()
        trial[free] = (1 - relax) * v[free] + relax * avg[free]
        p = trial[triangles]
        a = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
            (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        if a.min() <= 0:
            break
        v = trial
    return v


def generate_mesh(spec: DomainSpec, target_h: float, seed: int = 0) -> Mesh:
    """Quasi-uniform triangulation of ``spec``.

    Boundary nodes are placed on the analytic curves, a staggered layer is
    offset inward from each, a randomly rotated hexagonal lattice fills the
    interior, and the Delaunay triangulation restricted to the domain is
    Laplacian-smoothed.  The result depends only on ``(spec, target_h, seed)``.
    """
    if not target_h > 0:
        raise MeshError("target_h must be positive")
    if spec.gap <= 2 * target_h:
        raise MeshError(f"target_h={target_h} too large for annulus gap {spec.gap}")
    # node spacing; boundary-to-interior edges run up to ~1.8x the spacing,
    # very coarse meshes may need a few tighter attempts
    factor = SPACING_FACTOR
    for _ in range(8):
        mesh = _generate(spec, factor * float(target_h), seed)
        if mesh.h_max <= 1.5 * target_h:
            return mesh
        factor *= 0.92
    raise MeshError(f"could not reach h_max <= 1.5*target_h for target_h={target_h}")


def _generate(spec: DomainSpec, h: float, seed: int) -> Mesh:
    rng = np.random.default_rng(seed)

    inner = _curve_nodes(spec.inner, h, rng.uniform())
    outer = _curve_nodes(spec.outer, h, rng.uniform())
    boundary = np.vstack([inner, outer])

    layer = np.vstack([_inward_layer(inner, h, into_positive_side=False),
                       _inward_layer(outer, h, into_positive_side=True)])
    lattice = _hex_lattice(spec, h, rng)

    def admissible(pts, margin):
        ok = spec.contains(pts)
        pts = pts[ok]
        d_in = np.hypot(pts[:, 0], pts[:, 1]) - spec.inner.radius
        d_out = distance_to_curve(spec.outer, pts) if len(pts) else np.zeros(0)
        return pts[(d_in > margin) & (d_out > margin)]

    layer = _thin(admissible(layer, 0.5 * h), 0.7 * h)
    lattice = admissible(lattice, 1.2 * h)
    if len(layer):
        d, _ = cKDTree(layer).query(lattice)
        lattice = lattice[d > 0.75 * h]
    interior = np.vstack([layer, lattice])

    vertices = np.vstack([boundary, interior])
    tri = Delaunay(vertices).simplices
    cent = vertices[tri].mean(axis=1)
    tri = tri[spec.contains(cent)]

    # boundary segments: consecutive nodes on each curve
    n_in, n_out = len(inner), len(outer)
    seg_in = np.column_stack([np.arange(n_in), np.roll(np.arange(n_in), -1)])
    seg_out = n_in + np.column_stack([np.arange(n_out), np.roll(np.arange(n_out), -1)])
    expected = {tuple(sorted(s)) for s in np.vstack([seg_in, seg_out])}

    all_e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(all_e, axis=0, return_counts=True)
    found = {tuple(e) for e in uniq[counts == 1]}
    if found != expected:
        raise MeshError(f"boundary recovery failed for target_h={h} (seed {seed}); "
                        f"{len(found ^ expected)} mismatched boundary edges")
    if len(np.unique(tri)) != len(vertices):
        raise MeshError("mesh generation left isolated vertices")

    # orient CCW
    p = vertices[tri]
    a = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
        (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    tri[a < 0] = tri[a < 0][:, [0, 2, 1]]

    fixed = np.zeros(len(vertices), dtype=bool)
    fixed[: n_in + n_out] = True
    vertices = _smooth(vertices, tri, fixed)

    edges = np.vstack([seg_in, seg_out])
    markers = np.r_[np.full(n_in, GAMMA), np.full(n_out, GAMMA0)]
    return Mesh(vertices, tri, edges, markers)


# ---------------------------------------------------------------------------
# text format


def write_mesh(mesh: Mesh, path) -> None:
    with open(path, "w") as fh:
        fh.write("MESH2D v1\n")
        fh.write(f"V {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"T {mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        fh.write(f"BE {len(mesh.boundary_edges)}\n")
        for (i, j), m in zip(mesh.boundary_edges, mesh.boundary_markers):
            fh.write(f"{i} {j} {m}\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if lines[0] != ["MESH2D", "v1"]:
        raise MeshError(f"{path}: not a MESH2D v1 file")
    pos = 1

    def block(tag, ncols, conv):
        nonlocal pos
        if lines[pos][0] != tag:
            raise MeshError(f"{path}: expected section {tag}, got {lines[pos][0]}")
        n = int(lines[pos][1])
        rows = lines[pos + 1: pos + 1 + n]
        pos += 1 + n
        if any(len(r) != ncols for r in rows):
            raise MeshError(f"{path}: malformed {tag} section")
        return np.array([[conv(x) for x in r] for r in rows]).reshape(n, ncols)

    v = block("V", 2, float)
    t = block("T", 3, int)
    be = block("BE", 3, int)
    return Mesh(v, t, be[:, :2], be[:, 2])
