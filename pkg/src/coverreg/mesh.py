"""Triangle meshes, discrete curvature, mesh I/O and synthetic test surfaces."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    """Invalid mesh topology, geometry, or file contents."""


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class TriangleMesh:
    """Closed, consistently oriented triangle surface.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
    faces : array_like, shape (m, 3)
        Counterclockwise vertex index triples.
    fields : dict, optional
        Named per-vertex scalar fields (intensity, curvature, ...).
    validate : bool
        Check the closed-manifold and orientation invariants.

    The instance is immutable; ``with_fields`` and ``with_vertices`` return
    new meshes sharing the connectivity.
    """

    def __init__(self, vertices, faces, fields=None, validate=True):
        v = np.asarray(vertices, dtype=float)
        f = np.asarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("faces must have shape (m, 3)")
        self.vertices = _readonly(v)
        self.faces = _readonly(f)
        self.fields = {}
        for name, vals in (fields or {}).items():
            vals = np.asarray(vals, dtype=float)
            if vals.shape != (len(v),):
                raise MeshError(f"field {name!r} has shape {vals.shape}, expected ({len(v)},)")
            self.fields[name] = _readonly(vals)
        if validate:
            self._validate()

    def _validate(self):
        n = len(self.vertices)
        f = self.faces
        if len(f) == 0:
            raise MeshError("mesh has no faces")
        if f.min() < 0 or f.max() >= n:
            raise MeshError("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise MeshError("face with repeated vertex")
        und = np.sort(self.halfedges, axis=1)
        _, counts = np.unique(und[:, 0] * n + und[:, 1], return_counts=True)
        if np.any(counts != 2):
            bad = int(np.sum(counts != 2))
            raise MeshError(f"non-manifold mesh: {bad} edges not shared by exactly 2 faces")
        keys = self.halfedges[:, 0] * n + self.halfedges[:, 1]
        if len(np.unique(keys)) != len(keys):
            raise MeshError("inconsistent face orientation")
        used = np.zeros(n, dtype=bool)
        used[f.ravel()] = True
        if not used.all():
            raise MeshError(f"{int((~used).sum())} unreferenced vertices")

    # -- connectivity -------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @cached_property
    def halfedges(self):
        """Directed edges, row ``3*f + k`` runs from corner k to corner k+1 of face f."""
        f = self.faces
        return _readonly(np.stack([f, np.roll(f, -1, axis=1)], axis=2).reshape(-1, 2))

    @cached_property
    def edges(self):
        """Unique undirected edges as sorted pairs, shape (E, 2)."""
        und = np.sort(self.halfedges, axis=1)
        return _readonly(np.unique(und, axis=0))

    @cached_property
    def halfedge_edge(self):
        """Index into ``edges`` for every halfedge."""
        n = self.n_vertices
        und = np.sort(self.halfedges, axis=1)
        keys = self.edges[:, 0] * n + self.edges[:, 1]
        return _readonly(np.searchsorted(keys, und[:, 0] * n + und[:, 1]))

    @cached_property
    def face_edges(self):
        """Edge index opposite each corner, shape (F, 3)."""
        he = self.halfedge_edge.reshape(-1, 3)
        # halfedge k joins corners k, k+1 and is opposite corner k+2
        return _readonly(he[:, [1, 2, 0]])

    @cached_property
    def halfedge_lookup(self):
        """dict mapping directed edge (a, b) to its halfedge row."""
        he = self.halfedges
        return {(int(a), int(b)): i for i, (a, b) in enumerate(he)}

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    @cached_property
    def n_components(self):
        from scipy.sparse.csgraph import connected_components

        return connected_components(self.adjacency, directed=False)[0]

    @property
    def genus(self):
        chi = self.euler_characteristic
        if self.n_components != 1:
            raise MeshError("mesh is disconnected")
        if chi % 2:
            raise MeshError(f"odd Euler characteristic {chi}")
        return (2 - chi) // 2

    @cached_property
    def adjacency(self):
        e = self.edges
        n = self.n_vertices
        a = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        return (a + a.T).tocsr()

    # -- geometry -----------------------------------------------------
    @cached_property
    def edge_lengths(self):
        e = self.edges
        return _readonly(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1))

    @cached_property
    def face_normals(self):
        """Unnormalized normals; length equals twice the face area."""
        v = self.vertices[self.faces]
        return _readonly(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]))

    @property
    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_normals, axis=1)

    @cached_property
    def vertex_normals(self):
        n = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(n, self.faces[:, k], self.face_normals)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return _readonly(n)

    def with_fields(self, **fields):
        merged = dict(self.fields)
        merged.update(fields)
        return TriangleMesh(self.vertices, self.faces, merged, validate=False)

    def with_vertices(self, vertices):
        return TriangleMesh(vertices, self.faces, self.fields, validate=False)

    def __repr__(self):
        return f"TriangleMesh(V={self.n_vertices}, F={self.n_faces}, chi={self.euler_characteristic})"


# -- curvature ---------------------------------------------------------

@dataclass(frozen=True)
class CurvatureField:
    """Per-vertex mean curvature, Gauss curvature and mixed (Voronoi) area."""

    mean: np.ndarray
    gauss: np.ndarray
    area: np.ndarray


def _cross_norm(a, b):
    if a.shape[-1] == 2:
        return np.abs(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
    return np.linalg.norm(np.cross(a, b), axis=-1)


def corner_angles(points, faces):
    """Interior angle at every face corner, shape (F, 3)."""
    p = points[faces]
    ang = np.empty(faces.shape)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        ang[:, k] = np.arctan2(_cross_norm(a, b), np.einsum("ij,ij->i", a, b))
    return ang


def mixed_areas(points, faces):
    """Mixed Voronoi vertex areas (Meyer et al. 2003)."""
    p = points[faces]
    ang = corner_angles(points, faces)
    farea = 0.5 * _cross_norm(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    out = np.zeros(len(points))
    obtuse = ang > np.pi / 2
    any_obtuse = obtuse.any(axis=1)
    cot = 1.0 / np.tan(ang)
    for k in range(3):
        i, j, l = k, (k + 1) % 3, (k + 2) % 3
        eij = np.sum((p[:, j] - p[:, i]) ** 2, axis=1)
        eil = np.sum((p[:, l] - p[:, i]) ** 2, axis=1)
        vor = (eij * cot[:, l] + eil * cot[:, j]) / 8.0
        a = np.where(any_obtuse, np.where(obtuse[:, k], farea / 2, farea / 4), vor)
        np.add.at(out, faces[:, k], a)
    return out


def cotan_laplacian(points, faces):
    """Cotangent stiffness matrix L with L[i, j] = -(cot a + cot b)/2, rows summing to zero."""
    n = len(points)
    cot = 1.0 / np.tan(corner_angles(points, faces))
    rows, cols, vals = [], [], []
    for k in range(3):
        i, j = faces[:, (k + 1) % 3], faces[:, (k + 2) % 3]
        w = 0.5 * cot[:, k]
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def compute_curvatures(mesh: TriangleMesh) -> CurvatureField:
    """Angle-deficit Gauss curvature and cotangent mean curvature per vertex.

    Both are normalized by the mixed Voronoi area. The mean curvature is
    signed positive where the mean-curvature normal agrees with the outward
    vertex normal, so a round sphere of radius r gives H = 1/r.
    """
    areas = mesh.face_areas
    scale = np.sqrt(areas.sum() / max(len(areas), 1))
    bad = np.flatnonzero(areas <= 1e-14 * scale * scale)
    if len(bad):
        raise MeshError(f"degenerate triangle: face {int(bad[0])} has zero area")
    x = mesh.vertices
    ang = corner_angles(x, mesh.faces)
    angle_sum = np.bincount(mesh.faces.ravel(), weights=ang.ravel(), minlength=mesh.n_vertices)
    area = mixed_areas(x, mesh.faces)
    gauss = (2 * np.pi - angle_sum) / area
    # L x = 2 A H n with the cotangent stiffness L
    hn = cotan_laplacian(x, mesh.faces) @ x / (2.0 * area[:, None])
    mean = np.linalg.norm(hn, axis=1) * np.sign(np.einsum("ij,ij->i", hn, mesh.vertex_normals))
    return CurvatureField(mean=mean, gauss=gauss, area=area)


def with_curvature_fields(mesh: TriangleMesh) -> TriangleMesh:
    """Attach ``mean_curvature`` and ``gauss_curvature`` fields."""
    c = compute_curvatures(mesh)
    return mesh.with_fields(mean_curvature=c.mean, gauss_curvature=c.gauss)


# -- I/O ---------------------------------------------------------------

def _tokens(path):
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                yield line


def _read_obj(path):
    verts, faces = [], []
    for line in _tokens(path):
        parts = line.split()
        if parts[0] == "v":
            verts.append([float(t) for t in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(t.split("/")[0]) for t in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            if len(idx) != 3:
                raise MeshError(f"{path}: non-triangular face")
            faces.append(idx)
    return verts, faces


def _read_off(path):
    it = _tokens(path)
    head = next(it).split()
    if head[0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    counts = head[1:] if len(head) > 1 else next(it).split()
    nv, nf = int(counts[0]), int(counts[1])
    verts = [[float(t) for t in next(it).split()[:3]] for _ in range(nv)]
    faces = []
    for _ in range(nf):
        parts = [int(t) for t in next(it).split()]
        if parts[0] != 3:
            raise MeshError(f"{path}: non-triangular face")
        faces.append(parts[1:4])
    return verts, faces


def _read_ply(path):
    it = _tokens(path)
    if next(it) != "ply":
        raise MeshError(f"{path}: missing ply header")
    nv = nf = None
    vprops = []
    current = None
    for line in it:
        parts = line.split()
        if parts[0] == "format" and parts[1] != "ascii":
            raise MeshError(f"{path}: only ASCII PLY is supported")
        if parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                nv = int(parts[2])
            elif current == "face":
                nf = int(parts[2])
        elif parts[0] == "property" and current == "vertex":
            vprops.append(parts[-1])
        elif parts[0] == "end_header":
            break
    if nv is None or nf is None:
        raise MeshError(f"{path}: PLY header lacks vertex or face element")
    ix = [vprops.index(c) for c in "xyz"]
    verts = []
    for _ in range(nv):
        vals = next(it).split()
        verts.append([float(vals[i]) for i in ix])
    faces = []
    for _ in range(nf):
        parts = [int(t) for t in next(it).split()]
        if parts[0] != 3:
            raise MeshError(f"{path}: non-triangular face")
        faces.append(parts[1:4])
    return verts, faces


_READERS = {"obj": _read_obj, "off": _read_off, "ply": _read_ply}


def load_mesh(path, format=None, require_genus=True) -> TriangleMesh:
    """Read an ASCII OBJ/OFF/PLY triangle mesh.

    A sidecar ``<path>.fields.csv`` is loaded into the mesh fields when it
    exists. With ``require_genus`` a genus-0 surface is rejected.
    """
    fmt = (format or os.path.splitext(str(path))[1].lstrip(".")).lower()
    if fmt not in _READERS:
        raise MeshError(f"unsupported mesh format {fmt!r}")
    try:
        verts, faces = _READERS[fmt](path)
    except (StopIteration, ValueError, IndexError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"{path}: parse failure ({exc})") from exc
    mesh = TriangleMesh(np.array(verts, dtype=float).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))
    side = fields_path(path)
    if os.path.exists(side):
        mesh = mesh.with_fields(**load_fields_csv(side, mesh.n_vertices))
    if require_genus and mesh.genus < 1:
        raise MeshError("genus must be >= 1")
    return mesh


def fields_path(path):
    return f"{path}.fields.csv"


def save_mesh(mesh: TriangleMesh, path, format=None, write_fields=True):
    fmt = (format or os.path.splitext(str(path))[1].lstrip(".")).lower()
    v, f = mesh.vertices, mesh.faces
    with open(path, "w") as fh:
        if fmt == "obj":
            for p in v:
                fh.write("v %r %r %r\n" % tuple(float(c) for c in p))
            for t in f + 1:
                fh.write("f %d %d %d\n" % tuple(t))
        elif fmt == "off":
            fh.write(f"OFF\n{len(v)} {len(f)} 0\n")
            for p in v:
                fh.write("%r %r %r\n" % tuple(float(c) for c in p))
            for t in f:
                fh.write("3 %d %d %d\n" % tuple(t))
        elif fmt == "ply":
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(v)}\nproperty double x\nproperty double y\nproperty double z\n")
            fh.write(f"element face {len(f)}\nproperty list uchar int vertex_indices\nend_header\n")
            for p in v:
                fh.write("%r %r %r\n" % tuple(float(c) for c in p))
            for t in f:
                fh.write("3 %d %d %d\n" % tuple(t))
        else:
            raise MeshError(f"unsupported mesh format {fmt!r}")
    if write_fields and mesh.fields:
        save_fields_csv(mesh.fields, fields_path(path))


def save_fields_csv(fields, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex_index", "field_name", "value"])
        for name in sorted(fields):
            for i, val in enumerate(fields[name]):
                w.writerow([i, name, repr(float(val))])


def load_fields_csv(path, n_vertices):
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            arr = out.setdefault(row["field_name"], np.full(n_vertices, np.nan))
            arr[int(row["vertex_index"])] = float(row["value"])
    for name, arr in out.items():
        if np.isnan(arr).any():
            raise MeshError(f"field {name!r} is missing values")
    return out


# -- synthetic surfaces ------------------------------------------------

TORUS_R, TORUS_r = 1.0, 0.4


def torus_grid(n_major, n_minor, R=TORUS_R, r=TORUS_r):
    """Torus of revolution sampled on a regular (u, v) grid, diagonals aligned."""
    u = 2 * np.pi * np.arange(n_major) / n_major
    v = 2 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = np.stack([(R + r * np.cos(vv)) * np.cos(uu),
                  (R + r * np.cos(vv)) * np.sin(uu),
                  r * np.sin(vv)], axis=-1).reshape(-1, 3)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    a = idx
    b = np.roll(idx, -1, axis=0)
    c = np.roll(np.roll(idx, -1, axis=0), -1, axis=1)
    d = np.roll(idx, -1, axis=1)
    faces = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3),
                            np.stack([a, c, d], -1).reshape(-1, 3)])
    return x, faces


def _eight_sdf(p, R=TORUS_R, r=TORUS_r, sep=1.0, k=0.08):
    def torus(cx):
        q = np.hypot(p[..., 0] - cx, p[..., 1]) - R
        return np.hypot(q, p[..., 2]) - r
    a, b = torus(-sep), torus(sep)
    m = np.minimum(a, b)
    return m - k * np.log(np.exp(-(a - m) / k) + np.exp(-(b - m) / k))


def _sdf_grad(f, p, h=1e-6):
    g = np.empty_like(p)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[:, k] = (f(p + e) - f(p - e)) / (2 * h)
    return g


def _project(f, p, iters=8):
    for _ in range(iters):
        g = _sdf_grad(f, p)
        p = p - (f(p) / np.sum(g * g, axis=1))[:, None] * g
    return p


def eight_surface(resolution, smooth_iters=30):
    """Genus-2 'eight': smooth union of two tori, triangulated by marching cubes.

    Marching-cubes output is relaxed tangentially and reprojected onto the
    implicit surface to remove slivers.
    """
    from skimage.measure import marching_cubes

    lo = np.array([-2.55, -1.55, -0.55])
    hi = -lo
    h = (hi[0] - lo[0]) / resolution
    # irrational offset keeps grid nodes off the level set
    axes = [np.arange(a, b + h, h) + 0.1234567 * h for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vol = _eight_sdf(grid)
    verts, faces, _, _ = marching_cubes(vol, level=0.0, spacing=(h, h, h))
    verts = verts + np.array([ax[0] for ax in axes])
    verts, faces = _weld(verts, faces)
    # orient outward: gradient of the SDF points outside
    n = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]])
    c = verts[faces].mean(axis=1)
    if np.sum(np.einsum("ij,ij->i", n, _sdf_grad(_eight_sdf, c))) < 0:
        faces = faces[:, ::-1]
    mesh = TriangleMesh(verts, faces)
    adj = mesh.adjacency
    deg = np.asarray(adj.sum(axis=1)).ravel()
    x = verts
    for _ in range(smooth_iters):
        avg = (adj @ x) / deg[:, None]
        nrm = _sdf_grad(_eight_sdf, x)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        d = avg - x
        d -= np.einsum("ij,ij->i", d, nrm)[:, None] * nrm
        x = _project(_eight_sdf, x + 0.5 * d)
    return x, np.asarray(mesh.faces)


def _weld(verts, faces, tol=1e-9):
    key = np.round(verts / tol).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    faces = inv[faces]
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces = faces[keep]
    used = np.unique(faces)
    remap = np.full(len(first), -1)
    remap[used] = np.arange(len(used))
    return verts[first][used], remap[faces]


def torus_point(u, v, R=TORUS_R, r=TORUS_r):
    return np.array([(R + r * np.cos(v)) * np.cos(u), (R + r * np.cos(v)) * np.sin(u), r * np.sin(v)])


def make_synthetic(kind, bumps=(), resolution=64) -> TriangleMesh:
    """Generate a closed test surface with Gaussian normal bumps.

    ``kind`` is ``"torus"`` (genus 1) or ``"genus2_eight"``. Each bump is
    ``(center, height, width)`` where ``center`` is a (u, v) angle pair on
    the torus or a 3D point near the eight surface; the displacement
    ``height * exp(-d^2 / (2 width^2))`` is applied along vertex normals,
    d being the 3D distance to the center.
    """
    if resolution < 8:
        raise MeshError("resolution must be >= 8")
    if kind == "torus":
        x, f = torus_grid(resolution, max(8, resolution // 2))
    elif kind == "genus2_eight":
        x, f = eight_surface(resolution)
    else:
        raise MeshError(f"invalid synthetic kind {kind!r}")
    mesh = TriangleMesh(x, f)
    if bumps:
        normals = np.array(mesh.vertex_normals)
        disp = np.zeros(len(x))
        for center, height, width in bumps:
            if width <= 0:
                raise MeshError("bump width must be positive")
            c = np.asarray(center, dtype=float)
            if kind == "torus" and c.shape == (2,):
                c = torus_point(*c)
            d2 = np.sum((x - c) ** 2, axis=1)
            disp += height * np.exp(-d2 / (2 * width * width))
        mesh = mesh.with_vertices(x + disp[:, None] * normals)
    expected = 1 if kind == "torus" else 2
    if mesh.genus != expected:
        raise MeshError(f"resolution {resolution} too small: generated genus {mesh.genus}")
    return mesh
