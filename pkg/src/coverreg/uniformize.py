"""Discrete Ricci flow to a constant-curvature metric and fundamental domain layout.

The flow uses vertex scaling (discrete conformal equivalence): per-vertex
log factors ``u`` rescale edge lengths as

* Euclidean: ``l = l0 * exp((u_i + u_j) / 2)``
* hyperbolic: ``sinh(l / 2) = exp((u_i + u_j) / 2) * l0 / 2``

and Newton's method minimizes the convex energy whose gradient is the
vector of angle deficits.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .mesh import MeshError, TriangleMesh
from .topology import SlicedMesh

logger = logging.getLogger(__name__)

EUCLIDEAN = "euclidean"
HYPERBOLIC = "hyperbolic"

# Gauss-Legendre nodes/weights on [0, 1] for the energy change along a step
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class FlowError(MeshError):
    """Ricci flow failed to converge or produced a degenerate metric."""


@dataclass
class DiscreteMetric:
    """Edge lengths in a constant-curvature background geometry.

    Attributes
    ----------
    mesh : TriangleMesh
    edge_lengths : ndarray, shape (n_edges,)
        Lengths indexed like ``mesh.edges``.
    background : {"euclidean", "hyperbolic"}
    radii : ndarray, shape (n_vertices,)
        Log scale factors ``u`` relative to the (prescaled) input lengths.
    vertex_curvature : ndarray, shape (n_vertices,)
        Angle deficits ``2*pi - sum of corner angles``.
    history : list of (max deficit, Gauss-Bonnet residual)
        One entry per flow iterate, the initial metric included.
    """

    mesh: TriangleMesh
    edge_lengths: np.ndarray
    background: str
    radii: np.ndarray
    vertex_curvature: np.ndarray
    initial_lengths: np.ndarray = None
    energy: list = field(default_factory=list)
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def max_deficit(self):
        return float(np.max(np.abs(self.vertex_curvature)))

    def face_lengths(self):
        """Per-face lengths, column k opposite corner k."""
        return self.edge_lengths[self.mesh.face_edges]

    def angles(self):
        return face_angles(self.face_lengths(), self.background)

    def face_areas(self):
        """Euclidean areas, or hyperbolic areas (angle defects of the triangles)."""
        L = self.face_lengths()
        if self.background == HYPERBOLIC:
            return np.pi - face_angles(L, HYPERBOLIC).sum(axis=1)
        s = 0.5 * L.sum(axis=1)
        return np.sqrt(np.maximum(s * (s - L[:, 0]) * (s - L[:, 1]) * (s - L[:, 2]), 0.0))

    def gauss_bonnet_residual(self):
        """Deficit sum minus its predicted value.

        Euclidean: sum K = 2 pi chi. Hyperbolic: sum K - sum area = 2 pi chi.
        """
        total = self.vertex_curvature.sum()
        if self.background == HYPERBOLIC:
            total -= self.face_areas().sum()
        return float(total - 2 * np.pi * self.mesh.euler_characteristic)


def triangle_inequality(L, slack=0.0):
    """True per face when the three lengths form a nondegenerate triangle."""
    L = np.asarray(L)
    return ((L[:, 0] + L[:, 1] - L[:, 2] > slack) & (L[:, 1] + L[:, 2] - L[:, 0] > slack)
            & (L[:, 2] + L[:, 0] - L[:, 1] > slack))


def face_angles(L, background=EUCLIDEAN):
    """Corner angles from opposite edge lengths by the cosine law."""
    L = np.asarray(L, dtype=float)
    a, b, c = L[:, 0], L[:, 1], L[:, 2]
    out = np.empty_like(L)
    for k, (x, y, z) in enumerate(((a, b, c), (b, c, a), (c, a, b))):
        if background == HYPERBOLIC:
            cos = (np.cosh(y) * np.cosh(z) - np.cosh(x)) / (np.sinh(y) * np.sinh(z))
        else:
            cos = (y * y + z * z - x * x) / (2 * y * z)
        out[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
    return out


def vertex_deficits(mesh, angles):
    """Angle deficit ``2*pi - sum theta`` at every vertex."""
    total = np.bincount(mesh.faces.ravel(), weights=angles.ravel(), minlength=mesh.n_vertices)
    return 2 * np.pi - total


def scaled_lengths(l0, u, edges, background):
    """Edge lengths after vertex scaling by log factors ``u``."""
    s = np.exp(0.5 * (u[edges[:, 0]] + u[edges[:, 1]]))
    if background == HYPERBOLIC:
        return 2 * np.arcsinh(s * l0 / 2)
    return l0 * s


def curvature_jacobian(mesh, L, angles, background):
    """Jacobian of the vertex deficits with respect to ``u`` (sparse, symmetric).

    Assembled per face from d(theta)/d(l) and d(l)/d(u).
    """
    F = mesh.faces
    th = angles
    if background == HYPERBOLIC:
        dl_du = np.tanh(L / 2)
        sh = np.sinh(L)
        d_own = np.empty_like(L)
        for k in range(3):
            d_own[:, k] = sh[:, k] / (sh[:, (k + 1) % 3] * sh[:, (k + 2) % 3] * np.sin(th[:, k]))
    else:
        dl_du = L / 2
        s = 0.5 * L.sum(axis=1)
        area = np.sqrt(np.maximum(s * (s - L[:, 0]) * (s - L[:, 1]) * (s - L[:, 2]), 1e-300))
        d_own = L / (2 * area[:, None])
    rows, cols, vals = [], [], []
    # dtheta_i/dl_j for j != i is -dtheta_i/dl_i * cos(theta_k), k the third corner
    for i in range(3):
        dth_dl = np.zeros((len(F), 3))
        dth_dl[:, i] = d_own[:, i]
        for j in range(3):
            if j != i:
                k = 3 - i - j
                dth_dl[:, j] = -d_own[:, i] * np.cos(th[:, k])
        for b in range(3):
            # edges incident to corner b are those opposite the other two corners
            val = sum(dth_dl[:, e] * dl_du[:, e] for e in range(3) if e != b)
            rows.append(F[:, i])
            cols.append(F[:, b])
            vals.append(-val)
    n = mesh.n_vertices
    J = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return 0.5 * (J + J.T)


def _state(mesh, l0, u, background):
    l = scaled_lengths(l0, u, mesh.edges, background)
    L = l[mesh.face_edges]
    if not np.all(triangle_inequality(L)):
        return None
    ang = face_angles(L, background)
    if not np.all(np.isfinite(ang)) or np.any(ang <= 0):
        return None
    return l, L, ang, vertex_deficits(mesh, ang)


def _flow_record(mesh, st, background):
    K = st[3]
    total = K.sum()
    if background == HYPERBOLIC:
        total -= (np.pi - st[2].sum(axis=1)).sum()
    return float(np.max(np.abs(K))), float(total - 2 * np.pi * mesh.euler_characteristic)


def ricci_flow(mesh: TriangleMesh, target=None, tol=1e-10, max_iters=200, lengths=None,
               min_step=1e-8) -> DiscreteMetric:
    """Flow the metric of ``mesh`` to zero vertex deficits.

    Parameters
    ----------
    mesh : TriangleMesh
    target : {"flat", "hyperbolic"}, optional
        Defaults from the genus (flat for g = 1, hyperbolic for g > 1).
    tol : float
        Convergence threshold on the maximum absolute deficit.
    lengths : array_like, optional
        Initial Euclidean edge lengths; defaults to the embedding lengths.

    Raises
    ------
    FlowError
        On a genus/target mismatch, line-search failure or non-convergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    g = mesh.genus
    if target is None:
        target = "flat" if g == 1 else "hyperbolic"
    if target not in ("flat", "hyperbolic"):
        raise ValueError(f"unknown target {target!r}")
    if (target == "flat") != (g == 1) or g < 1:
        raise FlowError(f"target {target!r} does not match genus {g}")
    background = EUCLIDEAN if target == "flat" else HYPERBOLIC
    l0 = np.asarray(mesh.edge_lengths if lengths is None else lengths, dtype=float)
    if l0.shape != (mesh.n_edges,) or np.any(l0 <= 0):
        raise FlowError("initial lengths must be positive, one per edge")
    L0 = l0[mesh.face_edges]
    if not np.all(triangle_inequality(L0)):
        raise FlowError("initial lengths violate the triangle inequality")
    s = 0.5 * L0.sum(axis=1)
    area = np.sqrt(np.maximum(s * (s - L0[:, 0]) * (s - L0[:, 1]) * (s - L0[:, 2]), 0)).sum()
    if background == HYPERBOLIC:
        # hyperbolic area of the uniformized surface is 4 pi (g - 1)
        l0 = l0 * np.sqrt(4 * np.pi * (g - 1) / area)
    else:
        l0 = l0 / np.sqrt(area)
    n = mesh.n_vertices
    u = np.zeros(n)
    st = _state(mesh, l0, u, background)
    if st is None:
        raise FlowError("initial metric is degenerate")
    energy = [0.0]
    history = [_flow_record(mesh, st, background)]
    free = np.arange(1, n) if background == EUCLIDEAN else np.arange(n)
    it = 0
    while np.max(np.abs(st[3])) >= tol:
        if it >= max_iters:
            raise FlowError(f"Ricci flow did not converge in {max_iters} iterations "
                            f"(max deficit {np.max(np.abs(st[3])):.3e})")
        l, L, ang, K = st
        J = curvature_jacobian(mesh, L, ang, background).tocsc()
        du = np.zeros(n)
        du[free] = -spsolve(J[free][:, free], K[free])
        t = 1.0
        while True:
            trial = [_state(mesh, l0, u + x * t * du, background) for x in _GL_X]
            new = _state(mesh, l0, u + t * du, background)
            if new is not None and all(tr is not None for tr in trial):
                dE = t * sum(w * tr[3] @ du for w, tr in zip(_GL_W, trial))
                if dE <= 1e-14 * max(1.0, abs(energy[-1])):
                    break
            t *= 0.5
            if t < min_step:
                raise FlowError("line search failed: step fell below the floor")
        u = u + t * du
        st = new
        energy.append(energy[-1] + dE)
        history.append(_flow_record(mesh, st, background))
        it += 1
        logger.debug("ricci flow iter %d step %.3g max deficit %.3e", it, t, np.max(np.abs(st[3])))
    return DiscreteMetric(mesh, st[0], background, u, st[3], l0, energy, it, history)


# -- layout ----------------------------------------------------------------

@dataclass
class FundamentalDomain:
    """Isometric layout of a sliced mesh in the plane or the unit disk.

    ``layout`` holds one complex coordinate per sliced vertex.
    """

    layout: np.ndarray
    sliced: SlicedMesh
    background: str
    metric: DiscreteMetric

    @property
    def points(self):
        return np.column_stack([self.layout.real, self.layout.imag])

    def face_lengths(self):
        return self.metric.edge_lengths[self.metric.mesh.face_edges]

    def layout_lengths(self):
        """Lengths of every face edge measured in the layout (opposite-corner order)."""
        z = self.layout[self.sliced.faces]
        out = np.empty(z.shape)
        for k in range(3):
            a, b = z[:, (k + 1) % 3], z[:, (k + 2) % 3]
            if self.background == HYPERBOLIC:
                out[:, k] = 2 * np.arctanh(np.abs((a - b) / (1 - a * np.conj(b))))
            else:
                out[:, k] = np.abs(a - b)
        return out

    def max_length_error(self):
        ref = self.face_lengths()
        return float(np.max(np.abs(self.layout_lengths() - ref) / ref))

    def boundary_segment_labels(self):
        """Label per sliced vertex of the first boundary segment it lies on, or ''."""
        lab = [""] * self.sliced.n_vertices
        for seg in self.sliced.segments:
            for c in seg.copies:
                if not lab[c]:
                    lab[c] = seg.label
        return lab

    def save_csv(self, path):
        labels = self.boundary_segment_labels()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex_id", "original_id", "x", "y", "segment"])
            for i, z in enumerate(self.layout):
                w.writerow([i, int(self.sliced.original[i]), repr(float(z.real)), repr(float(z.imag)), labels[i]])


def _sliced_face_graph(faces):
    """Face adjacency across interior edges of a disk mesh, as neighbor lists."""
    owner = {}
    nbrs = [[] for _ in range(len(faces))]
    for f, tri in enumerate(faces):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            other = owner.get((b, a))
            if other is not None:
                nbrs[f].append(other)
                nbrs[other].append(f)
            owner[(a, b)] = f
    return nbrs


def _seed_face(faces, nbrs):
    """Face farthest (in face hops) from the boundary."""
    dist = np.full(len(faces), -1)
    q = deque()
    for f in range(len(faces)):
        if len(nbrs[f]) < 3:
            dist[f] = 0
            q.append(f)
    while q:
        f = q.popleft()
        for h in nbrs[f]:
            if dist[h] < 0:
                dist[h] = dist[f] + 1
                q.append(h)
    return int(np.argmax(dist))


def _place(za, zb, l_ac, theta_a, background):
    """Third vertex of a counterclockwise triangle (a, b, c)."""
    if background == HYPERBOLIC:
        w = (zb - za) / (1 - np.conj(za) * zb)
        rot = np.conj(w) / abs(w)
        wc = np.tanh(l_ac / 2) * np.exp(1j * theta_a) / rot
        return (wc + za) / (1 + np.conj(za) * wc)
    d = (zb - za) / abs(zb - za)
    return za + l_ac * np.exp(1j * theta_a) * d


def layout_domain(metric: DiscreteMetric, sliced: SlicedMesh) -> FundamentalDomain:
    """Lay out the sliced mesh isometrically by breadth-first triangle completion.

    The seed face is the one farthest from the cut, placed with its first
    vertex at the origin and first edge along the positive real axis.
    """
    if sliced.euler_characteristic() != 1:
        raise FlowError("sliced mesh is not a disk")
    faces = sliced.faces
    L = metric.face_lengths()
    ang = face_angles(L, metric.background)
    hyp = metric.background == HYPERBOLIC
    nbrs = _sliced_face_graph(faces)
    seed = _seed_face(faces, nbrs)
    z = np.full(sliced.n_vertices, np.nan + 0j)
    a, b, c = faces[seed]
    z[a] = 0.0
    z[b] = np.tanh(L[seed, 2] / 2) if hyp else L[seed, 2]
    z[c] = _place(z[a], z[b], L[seed, 1], ang[seed, 0], metric.background)
    done = np.zeros(len(faces), dtype=bool)
    done[seed] = True
    q = deque([seed])
    while q:
        f = q.popleft()
        for h in nbrs[f]:
            if done[h]:
                continue
            tri = faces[h]
            missing = np.isnan(z[tri])
            if missing.sum() > 1:
                continue
            done[h] = True
            q.append(h)
            if missing.any():
                k = int(np.flatnonzero(missing)[0])
                i, j = (k + 1) % 3, (k + 2) % 3
                # c = tri[k] opposite edge (i, j); a = tri[i], b = tri[j]
                theta = ang[h, i]
                if theta < 1e-12 or np.pi - theta < 1e-12:
                    raise FlowError(f"degenerate triangle completion at face {h}")
                z[tri[k]] = _place(z[tri[i]], z[tri[j]], L[h, j], theta, metric.background)
    if np.isnan(z).any() or not done.all():
        raise FlowError("layout did not reach every face")
    if hyp and np.max(np.abs(z)) >= 1:
        raise FlowError("hyperbolic layout left the unit disk")
    return FundamentalDomain(z, sliced, metric.background, metric)
