"""Beltrami coefficients of piecewise-linear maps on the cover.

A map ``f`` is measured per face of the source layout through its affine
part ``f(z) = A z + B conj(z) + C``, so ``f_z = A``, ``f_zbar = B`` and
``mu = B / A``. Beltrami coefficients transform under disk automorphisms
of the source as ``mu(W(z)) = mu(z) * W'(z) / conj(W'(z))``; vertex
fields stored at representatives carry this phase when they are moved to
another copy. For translations the phase is one.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .cover_solver import CoverSystem, assemble, cotan_stiffness, solve_linear, solve_newton
from .covering import TRANSLATION, FuchsianGenerators, copy_words
from .mesh import MeshError
from .uniformize import FundamentalDomain

logger = logging.getLogger(__name__)


class BeltramiError(MeshError):
    """Degenerate faces or coefficients at or beyond the unit bound."""


@dataclass
class BeltramiField:
    """Per-face complex Beltrami coefficient on a fundamental domain layout."""

    mu: np.ndarray
    domain: FundamentalDomain

    @property
    def abs(self):
        return np.abs(self.mu)

    def max_abs(self):
        return float(np.max(np.abs(self.mu)))

    def dilation(self):
        """Per-face dilation ``(1 + |mu|) / (1 - |mu|)``."""
        a = np.abs(self.mu)
        if np.any(a >= 1):
            raise BeltramiError("dilation is unbounded for |mu| >= 1")
        return (1 + a) / (1 - a)

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["face_id", "re_mu", "im_mu", "abs_mu"])
            for i, m in enumerate(self.mu):
                w.writerow([i, repr(float(m.real)), repr(float(m.imag)), repr(float(abs(m)))])


def _as_complex(p):
    p = np.asarray(p)
    if np.iscomplexobj(p):
        return p
    if p.ndim == 2 and p.shape[1] == 2:
        return p[:, 0] + 1j * p[:, 1]
    return p.astype(complex)


def affine_parts(source, image, faces):
    """Per-face ``(f_z, f_zbar)`` of the affine interpolant ``source -> image``."""
    z = _as_complex(source)[faces]
    w = _as_complex(image)[faces]
    e1, e2 = z[:, 1] - z[:, 0], z[:, 2] - z[:, 0]
    d1, d2 = w[:, 1] - w[:, 0], w[:, 2] - w[:, 0]
    det = e1 * np.conj(e2) - e2 * np.conj(e1)
    if np.any(np.abs(det) < 1e-300):
        bad = int(np.argmin(np.abs(det)))
        raise BeltramiError(f"face {bad} is degenerate in the source layout")
    fz = (d1 * np.conj(e2) - d2 * np.conj(e1)) / det
    fzb = (e1 * d2 - e2 * d1) / det
    return fz, fzb


def beltrami_of_map(domain: FundamentalDomain, image) -> BeltramiField:
    """Beltrami coefficient of the map taking ``domain.layout`` to ``image``.

    ``image`` holds one (complex or 2D) value per sliced vertex.
    """
    image = _as_complex(image)
    if len(image) != domain.sliced.n_vertices:
        raise BeltramiError(f"image has {len(image)} values, expected {domain.sliced.n_vertices}")
    fz, fzb = affine_parts(domain.layout, image, domain.sliced.faces)
    if np.any(np.abs(fz) < 1e-300):
        raise BeltramiError("f_z vanishes on a face")
    return BeltramiField(fzb / fz, domain)


def jacobian_determinant(source, image, faces):
    """Per-face Jacobian determinant of the affine interpolant (signed)."""
    z = _as_complex(source)[faces]
    w = _as_complex(image)[faces]
    a = ((np.conj(z[:, 1] - z[:, 0]) * (z[:, 2] - z[:, 0])).imag)
    b = ((np.conj(w[:, 1] - w[:, 0]) * (w[:, 2] - w[:, 0])).imag)
    return b / a


def clamp_coefficient(field: BeltramiField, eps=0.05) -> BeltramiField:
    """Scale moduli down to at most ``1 - eps`` keeping phases."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    mu = np.asarray(field.mu, dtype=complex)
    a = np.abs(mu)
    cap = 1 - eps
    scale = np.where(a > cap, cap / np.where(a > 0, a, 1), 1.0)
    return BeltramiField(mu * scale, field.domain)


def copy_phases(domain: FundamentalDomain, generators: FuchsianGenerators, words=None):
    """Unit factor ``W_c'(z) / conj(W_c'(z))`` at the representative of every copy."""
    sliced = domain.sliced
    words = copy_words(sliced) if words is None else words
    P = np.ones(sliced.n_vertices, dtype=complex)
    if generators.kind == TRANSLATION:
        return P
    cache = {}
    for c, w in enumerate(words):
        if w:
            if w not in cache:
                cache[w] = generators.word_motion(w)
            d = complex(cache[w].derivative(domain.layout[sliced.original[c]]))
            P[c] = d / np.conj(d)
    return P


def _face_areas(z, faces):
    p = z[faces]
    return 0.5 * np.abs((np.conj(p[:, 1] - p[:, 0]) * (p[:, 2] - p[:, 0])).imag)


def face_to_vertex(field: BeltramiField, generators: FuchsianGenerators, words=None):
    """Area-weighted average of face values at each original vertex (representative frame)."""
    d = field.domain
    sl = d.sliced
    P = copy_phases(d, generators, words)
    area = _face_areas(d.layout, sl.faces)
    num = np.zeros(sl.n_original, dtype=complex)
    den = np.zeros(sl.n_original)
    for k in range(3):
        c = sl.faces[:, k]
        vals = area * field.mu * np.conj(P[c])
        np.add.at(num, sl.original[c], vals)
        np.add.at(den, sl.original[c], area)
    return num / den


def vertex_to_face(values, domain: FundamentalDomain, generators: FuchsianGenerators, words=None):
    """Barycentric (corner mean) face values of a representative-frame vertex field."""
    sl = domain.sliced
    P = copy_phases(domain, generators, words)
    v = np.asarray(values, dtype=complex)
    vc = v[sl.original] * P
    return vc[sl.faces].mean(axis=1)


def connection_laplacian(domain: FundamentalDomain, generators: FuchsianGenerators, words=None):
    """Hermitian cotangent Dirichlet form and lumped mass over original vertices."""
    sl = domain.sliced
    S = cotan_stiffness(domain.layout, sl.faces)
    P = copy_phases(domain, generators, words)
    rows, cols, vals = [], [], []
    for a in range(3):
        for b in range(3):
            ca, cb = sl.faces[:, a], sl.faces[:, b]
            rows.append(sl.original[ca])
            cols.append(sl.original[cb])
            vals.append(-S[:, a, b] * np.conj(P[ca]) * P[cb])
    n = sl.n_original
    K = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    area = _face_areas(domain.layout, sl.faces)
    m = np.bincount(sl.original[sl.faces].ravel(), weights=np.repeat(area / 3, 3), minlength=n)
    return K, sparse.diags(m)


def dirichlet_energy(values, K):
    v = np.asarray(values, dtype=complex)
    return float(np.real(np.conj(v) @ (K @ v)))


def smooth_coefficient(field: BeltramiField, lam=1.0, generators: FuchsianGenerators = None,
                       words=None, return_vertex=False):
    """Minimize ``int |grad nu|^2 + lam/2 int |nu - nu_n|^2`` on the cover.

    The stationarity condition ``(2 K + lam M) nu = lam M nu_n`` is
    solved with ``K`` the cotangent Dirichlet form (with the Mobius phase
    connection across cuts when the deck group is hyperbolic).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if generators is None:
        raise ValueError("generators are required for cut periodicity")
    nu_n = face_to_vertex(field, generators, words)
    K, M = connection_laplacian(field.domain, generators, words)
    lhs = (2 * K + lam * M).tocsc()
    if generators.kind == TRANSLATION:
        lu = splu(sparse.csc_matrix((np.ascontiguousarray(lhs.data.real), lhs.indices, lhs.indptr), shape=lhs.shape))
        r = lam * (M @ nu_n)
        nu = lu.solve(np.ascontiguousarray(r.real)) + 1j * lu.solve(np.ascontiguousarray(r.imag))
    else:
        nu = splu(lhs).solve(lam * (M @ nu_n))
    out = BeltramiField(vertex_to_face(nu, field.domain, generators, words), field.domain)
    return (out, nu, nu_n) if return_vertex else out


def beltrami_stiffness(domain: FundamentalDomain, mu):
    """Per-face stiffness ``-(t_i^T D t_j) / (4 area)`` of the operator div(D grad).

    D is the symmetric, unit-determinant matrix built from ``mu`` so that
    both components of a map with Beltrami coefficient ``mu`` solve
    ``div(D grad u) = 0``. ``mu = 0`` gives the cotangent stiffness.
    """
    mu = np.asarray(mu, dtype=complex)
    r, t = mu.real, mu.imag
    den = 1 - r * r - t * t
    if np.any(den <= 1e-12):
        raise BeltramiError("|mu| too close to 1; D is singular")
    a1 = ((1 - r) ** 2 + t * t) / den
    a2 = -2 * t / den
    a3 = ((1 + r) ** 2 + t * t) / den
    p = domain.layout[domain.sliced.faces]
    # rotated opposite edges t_k = i * (p_{k+2} - p_{k+1})
    tv = np.stack([1j * (p[:, (k + 2) % 3] - p[:, (k + 1) % 3]) for k in range(3)], axis=1)
    area = 0.5 * ((np.conj(p[:, 1] - p[:, 0]) * (p[:, 2] - p[:, 0])).imag)
    if np.any(area <= 0):
        raise BeltramiError("source layout has non-positive faces")
    tx, ty = tv.real, tv.imag
    S = np.empty((len(p), 3, 3))
    for i in range(3):
        for j in range(3):
            q = tx[:, i] * (a1 * tx[:, j] + a2 * ty[:, j]) + ty[:, i] * (a2 * tx[:, j] + a3 * ty[:, j])
            S[:, i, j] = -q / (4 * area)
    return S


def assemble_beltrami(field: BeltramiField, generators: FuchsianGenerators, pinned, words=None) -> CoverSystem:
    return assemble(field.domain, generators, beltrami_stiffness(field.domain, field.mu), pinned, words=words)


def reconstruct_map(field: BeltramiField, generators: FuchsianGenerators, pinned, initial=None,
                    words=None, tol=1e-10, return_info=False):
    """Quasiconformal map with Beltrami coefficient ``field.mu``.

    Solves div(D grad u) = div(D grad v) = 0 on the cover with the target
    deck group ``generators`` and pinned base values. Returns one complex
    value per original vertex (expand with ``CoverSystem.expand``).
    """
    system = assemble_beltrami(field, generators, pinned, words)
    if generators.kind == TRANSLATION:
        z, info = solve_linear(system, return_info=True)
    else:
        start = field.domain.layout[: field.domain.sliced.n_original] if initial is None else initial
        z, info = solve_newton(system, start, tol=tol, return_info=True)
    info["system"] = system
    return (z, info) if return_info else z
