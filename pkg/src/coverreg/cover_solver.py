"""Poisson-type systems on the universal cover.

Unknowns are one complex value per original vertex, stored at its
representative copy in the sliced mesh. A copy ``c`` of vertex ``v`` is
constrained to ``T_c(z_v)`` where ``T_c`` is the copy's generator word
evaluated with the *target* deck group, so every face contributes with
its neighbors pulled back into the frame of the row vertex:

    sum_b S_f[a, b] * (T_a^-1 T_b)(z_b)

For translations this is linear; for disk automorphisms the system is
holomorphic in ``z`` and Newton's method uses the complex Jacobian
``A + sum w * M'(z_j)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .covering import MOBIUS, TRANSLATION, FuchsianGenerators, copy_words
from .mesh import MeshError
from .uniformize import FundamentalDomain

logger = logging.getLogger(__name__)


class SolverError(MeshError):
    """Singular system, divergence or an iterate leaving the disk."""


def cotan_stiffness(points, faces, min_area=1e-14):
    """Per-face 3x3 cotangent stiffness, off-diagonal ``+cot/2``, rows summing to zero.

    ``points`` are complex or (n, 2) planar coordinates.
    """
    z = np.asarray(points)
    if not np.iscomplexobj(z):
        z = z[:, 0] + 1j * z[:, 1]
    p = z[faces]
    S = np.zeros((len(faces), 3, 3))
    for k in range(3):
        e1 = p[:, (k + 1) % 3] - p[:, k]
        e2 = p[:, (k + 2) % 3] - p[:, k]
        cross = (np.conj(e1) * e2).imag
        if np.any(np.abs(cross) < min_area):
            bad = int(np.argmin(np.abs(cross)))
            raise SolverError(f"face {bad} is degenerate in the layout")
        cot = (np.conj(e1) * e2).real / cross
        i, j = (k + 1) % 3, (k + 2) % 3
        S[:, i, j] += 0.5 * cot
        S[:, j, i] += 0.5 * cot
    for k in range(3):
        S[:, k, k] = -S[:, k].sum(axis=1)
    return S


@dataclass
class CoverSystem:
    """``A z + Q(z) = b`` over the original vertices.

    ``Q`` is a sum of terms ``w * M(z_j)`` in row ``i`` with ``M`` a
    rigid motion, stored as parallel arrays; ``M`` is kept as matrix
    entries ``(ma, mb, mc, md)``.
    """

    A: sparse.csr_matrix
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    motions: np.ndarray          # (k, 4) complex matrix entries
    b: np.ndarray
    pinned: dict
    kind: str = TRANSLATION
    words: list = field(default=None, repr=False)
    generators: FuchsianGenerators = field(default=None, repr=False)
    original: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.A.shape[0]

    def Q(self, z):
        ma, mb, mc, md = self.motions.T
        zj = z[self.cols]
        vals = self.weights * (ma * zj + mb) / (mc * zj + md)
        return np.bincount(self.rows, weights=vals.real, minlength=self.n) + 1j * np.bincount(
            self.rows, weights=vals.imag, minlength=self.n)

    def residual(self, z):
        z = np.asarray(z, dtype=complex)
        return self.A @ z + self.Q(z) - self.b

    def jacobian(self, z):
        ma, mb, mc, md = self.motions.T
        d = self.weights / (mc * z[self.cols] + md) ** 2
        return (self.A + sparse.csr_matrix((d, (self.rows, self.cols)), shape=self.A.shape)).tocsc()

    def expand(self, z):
        """Values at every sliced copy, ``T_c(z_rep)``."""
        return expand_values(z, self.words, self.generators, self.original)


def expand_values(z, words, generators, original):
    """Evaluate ``T_c(z[original[c]])`` for every sliced copy ``c``."""
    z = np.asarray(z, dtype=complex)
    out = z[np.asarray(original)].astype(complex)
    cache = {}
    for c, w in enumerate(words):
        if w:
            if w not in cache:
                cache[w] = generators.word_motion(w)
            out[c] = cache[w](out[c])
    return out


def assemble(domain: FundamentalDomain, generators: FuchsianGenerators, stiffness, pinned=None,
             rhs=None, words=None) -> CoverSystem:
    """Assemble a cover system from per-face stiffness matrices.

    Parameters
    ----------
    domain : FundamentalDomain
        Supplies the sliced connectivity and copy correspondence.
    generators : FuchsianGenerators
        Target deck group used for the equivariance constraint.
    stiffness : ndarray, shape (n_faces, 3, 3)
        Real per-face matrices with zero row sums.
    pinned : dict, optional
        ``{original vertex: complex value}``; pinned rows become ``z_i = value``.
    rhs : array_like, optional
        Right-hand side per original vertex (default zero).
    """
    sliced = domain.sliced
    n = sliced.n_original
    words = copy_words(sliced) if words is None else words
    faces = sliced.faces
    orig = sliced.original
    S = np.asarray(stiffness, dtype=float)
    plain_r, plain_c, plain_w = [], [], []
    cross = {}
    for a in range(3):
        for bb in range(3):
            ca, cb = faces[:, a], faces[:, bb]
            w = S[:, a, bb]
            same = np.array([words[x] == words[y] for x, y in zip(ca, cb)])
            plain_r.append(orig[ca][same])
            plain_c.append(orig[cb][same])
            plain_w.append(w[same])
            for x, y, wt in zip(ca[~same], cb[~same], w[~same]):
                key = (int(orig[x]), int(orig[y]), words[x], words[y])
                cross[key] = cross.get(key, 0.0) + wt
    A = sparse.csr_matrix((np.concatenate(plain_w), (np.concatenate(plain_r), np.concatenate(plain_c))),
                          shape=(n, n))
    rows, cols, wts, mots = [], [], [], []
    inv_cache = {}
    for (i, j, wa, wb), wt in cross.items():
        if wa not in inv_cache:
            inv_cache[wa] = generators.word_motion(wa).inverse()
        m = inv_cache[wa] @ generators.word_motion(wb)
        rows.append(i)
        cols.append(j)
        wts.append(wt)
        mots.append(m.matrix.ravel())
    rows = np.array(rows, dtype=np.int64)
    cols = np.array(cols, dtype=np.int64)
    wts = np.array(wts, dtype=float)
    mots = np.array(mots, dtype=complex).reshape(-1, 4)
    b = np.zeros(n, dtype=complex) if rhs is None else np.asarray(rhs, dtype=complex).copy()
    pinned = dict(pinned or {})
    if pinned:
        idx = np.array(sorted(pinned))
        keep = np.ones(n)
        keep[idx] = 0
        A = sparse.diags(keep) @ A + sparse.csr_matrix((np.ones(len(idx)), (idx, idx)), shape=(n, n))
        A = A.tocsr()
        mask = ~np.isin(rows, idx)
        rows, cols, wts, mots = rows[mask], cols[mask], wts[mask], mots[mask]
        for i, v in pinned.items():
            b[i] = v
    return CoverSystem(A.tocsr(), rows, cols, wts, mots, b, pinned, generators.kind, words, generators, orig)


def chart_stiffness(domain: FundamentalDomain, generators: FuchsianGenerators, words=None):
    """Cotangent stiffness with row ``a`` of each face measured in the chart of corner ``a``.

    A corner lying on a copy ``c`` sees the face pulled back by ``W_c^-1``
    (the deck motion of ``generators``, which must be the group of
    ``domain``), so every vertex equation is the planar cotangent
    Laplacian of its own one-ring and coordinate maps are exact
    solutions. Translations leave the weights unchanged.
    """
    sl = domain.sliced
    S = cotan_stiffness(domain.layout, sl.faces)
    if generators.kind == TRANSLATION:
        return S
    words = copy_words(sl) if words is None else words
    groups = {}
    for a in range(3):
        for f, c in enumerate(sl.faces[:, a]):
            if words[c]:
                groups.setdefault(words[c], []).append((f, a))
    for w, items in groups.items():
        inv = generators.word_motion(w).inverse()
        f = np.array([i for i, _ in items])
        a = np.array([k for _, k in items])
        pts = inv(domain.layout[sl.faces[f]].ravel())
        local = cotan_stiffness(pts, np.arange(len(pts)).reshape(-1, 3))
        S[f, a, :] = local[np.arange(len(f)), a, :]
    return S


def assemble_cotan(domain: FundamentalDomain, generators: FuchsianGenerators, pinned=None,
                   rhs=None, words=None) -> CoverSystem:
    """Cotangent Laplacian on the cover with per-chart weights from the layout geometry."""
    S = chart_stiffness(domain, generators, words)
    return assemble(domain, generators, S, pinned, rhs, words)


def solve_linear(system: CoverSystem, return_info=False):
    """Direct solve of a translation-only system."""
    if system.kind != TRANSLATION:
        raise SolverError("solve_linear requires translation motions; use solve_newton")
    ma, mb, mc, md = system.motions.T
    M = system.A + sparse.csr_matrix((system.weights, (system.rows, system.cols)), shape=system.A.shape)
    rhs = system.b - np.bincount(system.rows, weights=(system.weights * mb / md).real, minlength=system.n) \
        - 1j * np.bincount(system.rows, weights=(system.weights * mb / md).imag, minlength=system.n)
    try:
        lu = splu(M.tocsc())
        z = lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))
    except RuntimeError as exc:
        raise SolverError(f"singular cover system: {exc}") from exc
    if not np.all(np.isfinite(z)):
        raise SolverError("singular cover system")
    res = float(np.max(np.abs(system.residual(z))))
    return (z, {"iterations": 1, "residual": res}) if return_info else z


def solve_newton(system: CoverSystem, initial, tol=1e-10, max_iters=30, return_info=False):
    """Newton iteration ``z <- z - t s`` with ``J(z) s = F(z)``.

    The step is halved while the iterate leaves the unit disk (Mobius
    systems) or the residual does not decrease.
    """
    z = np.array(initial, dtype=complex)
    F = system.residual(z)
    r = float(np.max(np.abs(F)))
    merit = float(np.linalg.norm(F))
    it = 0
    disk = system.kind == MOBIUS
    while r >= tol:
        if it >= max_iters:
            raise SolverError(f"Newton did not converge in {max_iters} iterations (residual {r:.3e})")
        try:
            s = splu(system.jacobian(z)).solve(F)
        except RuntimeError as exc:
            raise SolverError(f"singular Newton system: {exc}") from exc
        t = 1.0
        while True:
            zn = z - t * s
            ok = np.all(np.isfinite(zn)) and (not disk or np.max(np.abs(zn)) < 1)
            if ok:
                Fn = system.residual(zn)
                rn = float(np.max(np.abs(Fn)))
                mn = float(np.linalg.norm(Fn))
                if mn < merit or rn < tol:
                    break
            t *= 0.5
            if t < 1e-10:
                raise SolverError("Newton line search failed")
        z, F, r, merit = zn, Fn, rn, mn
        it += 1
        logger.debug("newton iter %d step %.3g residual %.3e", it, t, r)
    return (z, {"iterations": it, "residual": r}) if return_info else z
