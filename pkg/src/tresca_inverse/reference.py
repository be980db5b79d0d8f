"""Synthetic measurements from a fine, independently generated mesh."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .forward import NonlinearProblem, solve_nonlinear
from .geometry import Mesh, generate_mesh
from .inverse import FrictionCoefficient, InverseContext, ObservationData
from .quadratic import QuadraticSolution, QuadraticSpace, solve_quadratic

log = logging.getLogger(__name__)


def locate(mesh: Mesh, points, k: int = 12):
    """Containing triangle and barycentric coordinates for each point.

    Raises ``ValueError`` for points outside the mesh.
    """
    points = np.atleast_2d(points)
    tree = cKDTree(mesh.centroids())
    tri_idx = np.full(len(points), -1)
    bary = np.zeros((len(points), 3))
    todo = np.arange(len(points))
    while len(todo):
        kk = min(k, mesh.n_triangles)
        _, cand = tree.query(points[todo], k=kk)
        cand = cand.reshape(len(todo), kk)
        p = mesh.vertices[mesh.triangles[cand]]          # (n, k, 3, 2)
        x = points[todo][:, None, :]
        v0, v1 = p[:, :, 1] - p[:, :, 0], p[:, :, 2] - p[:, :, 0]
        w = x - p[:, :, 0]
        det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
        l1 = (w[..., 0] * v1[..., 1] - w[..., 1] * v1[..., 0]) / det
        l2 = (v0[..., 0] * w[..., 1] - v0[..., 1] * w[..., 0]) / det
        l0 = 1.0 - l1 - l2
        lam = np.stack([l0, l1, l2], axis=-1)
        ok = lam.min(axis=-1) >= -1e-12
        hit = ok.any(axis=1)
        first = ok.argmax(axis=1)
        rows = np.flatnonzero(hit)
        tri_idx[todo[rows]] = cand[rows, first[rows]]
        bary[todo[rows]] = lam[rows, first[rows]]
        todo = todo[~hit]
        if len(todo) and kk == mesh.n_triangles:
            raise ValueError(f"{len(todo)} points lie outside the mesh")
        k *= 4
    return tri_idx, bary


@dataclass(eq=False)
class ReferenceSolution:
    """Solution for the true coefficient on a fine, non-nested mesh.

    ``space`` is ``None`` for P1 nodal values, otherwise the
    :class:`QuadraticSpace` the values belong to.
    """

    mesh: Mesh
    values: np.ndarray
    space: QuadraticSpace | None = None

    @property
    def degree(self) -> int:
        return 1 if self.space is None else 2

    def evaluate(self, points) -> np.ndarray:
        if self.space is not None:
            return QuadraticSolution(self.space, self.values).evaluate(points, locate)
        tri, lam = locate(self.mesh, points)
        return np.einsum("ni,ni->n", self.values[self.mesh.triangles[tri]], lam)

    def observe(self, ctx: InverseContext) -> ObservationData:
        pts = ctx.omega_quad.points.reshape(-1, 2)
        vals = self.evaluate(pts).reshape(ctx.omega_quad.weights.shape)
        return ObservationData(vals, "fine-reference")


def _cache_key(ctx_like: dict) -> str:
    blob = json.dumps(ctx_like, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def reference_solution(ctx: InverseContext, a_true: FrictionCoefficient, target_h: float,
                       seed: int, cache_dir=None, key_extra: dict | None = None,
                       degree: int = 2) -> ReferenceSolution:
    """Solve the forward problem for ``a_true`` on a fresh fine mesh.

    ``ctx`` supplies the domain, beta and data functions; only its mesh is
    ignored.  ``degree`` selects P1 or isoparametric P2 elements.  With
    ``cache_dir`` the mesh and values are stored as ``.npz`` keyed on
    everything they depend on (``key_extra`` must name the data closures
    since those cannot be hashed).
    """
    if degree not in (1, 2):
        raise ValueError(f"reference degree must be 1 or 2, got {degree}")
    key = None
    if cache_dir is not None:
        key = _cache_key({"spec": repr(ctx.spec), "eps": ctx.beta.epsilon, "a": a_true.vector.tolist(),
                          "h": target_h, "seed": seed, "degree": degree, **(key_extra or {})})
        path = Path(cache_dir) / f"reference_{key}.npz"
        if path.exists():
            z = np.load(path)
            mesh = Mesh(z["vertices"], z["triangles"], z["edges"], z["markers"])
            log.info("loaded reference solution %s (%d vertices)", path, mesh.n_vertices)
            space = QuadraticSpace(ctx.spec, mesh) if degree == 2 else None
            return ReferenceSolution(mesh, z["values"], space)
    mesh = generate_mesh(ctx.spec, target_h, seed)
    log.info("reference mesh: %d vertices, h=%.4g, degree %d", mesh.n_vertices, mesh.h_max, degree)
    if degree == 2:
        sol = solve_quadratic(ctx.spec, mesh, ctx.beta, a_true, ctx.f, ctx.g)
        ref = ReferenceSolution(mesh, sol.values, sol.space)
    else:
        problem = NonlinearProblem(mesh, ctx.beta, a_true, ctx.f, ctx.g)
        ref = ReferenceSolution(mesh, solve_nonlinear(problem).values)
    if key is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        np.savez(path, vertices=mesh.vertices, triangles=mesh.triangles,
                 edges=mesh.boundary_edges, markers=mesh.boundary_markers, values=ref.values)
    return ref


def assert_not_nested(coarse: Mesh, fine: Mesh, samples: int = 200, seed: int = 0) -> None:
    """Check that the meshes differ and sampled interior vertices do not coincide."""
    if coarse.n_vertices == fine.n_vertices:
        raise AssertionError("reference and working mesh have equal vertex counts")
    rng = np.random.default_rng(seed)
    interior = np.flatnonzero(~np.isin(np.arange(coarse.n_vertices), coarse.boundary_edges))
    pick = rng.choice(interior, size=min(samples, len(interior)), replace=False)
    d, _ = cKDTree(fine.vertices).query(coarse.vertices[pick])
    if np.any(d < 1e-12):
        raise AssertionError(f"{int(np.sum(d < 1e-12))} sampled vertices coincide with the reference mesh")
