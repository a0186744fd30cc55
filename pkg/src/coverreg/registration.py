"""Feature-matching registration of equal-genus surfaces on their universal covers.

The map is represented by its lift ``g`` from the source fundamental
domain into the target cover: one complex value per source vertex,
extended to the copies of cut vertices by the target deck group. Each
iteration

1. moves every point toward better feature agreement in closed form
   (auxiliary map ``h``, a per-vertex 2x2 Gauss-Newton solve),
2. solves the screened Poisson problem ``(L - mu^2 M) g + Q(g) = -mu^2 M h``
   on the cover,
3. projects the result onto bijective maps by clamping and smoothing its
   Beltrami coefficient and reconstructing the map from it,

and is accepted only if the energy (Dirichlet energy plus weighted
feature mismatch) does not increase.
"""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .beltrami import (BeltramiField, beltrami_of_map, clamp_coefficient, reconstruct_map,
                       smooth_coefficient)
from .cover_solver import CoverSystem, assemble, chart_stiffness, cotan_stiffness, solve_linear, solve_newton
from .covering import (MOBIUS, TRANSLATION, FuchsianGenerators, base_relation, compute_generators,
                       copy_words)
from .mesh import MeshError, TriangleMesh, with_curvature_fields
from .topology import choose_base_vertex, greedy_homotopy_basis, slice_along_basis, transfer_cut
from .uniformize import HYPERBOLIC, FundamentalDomain, layout_domain, ricci_flow

logger = logging.getLogger(__name__)


class RegistrationError(MeshError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


FEATURE_MODES = ("curvature", "intensity", "both")


@dataclass
class RegistrationConfig:
    """Weights and stopping rules of the registration.

    Feature fields are standardized by their area-weighted spread on the
    source, so ``alpha`` and ``beta`` are dimensionless. ``lam`` is
    measured relative to the mean source-layout face area, so the
    smoothing length is about ``sqrt(2 / lam)`` mesh edges. ``eps_stop``
    is relative to the energy at the initial harmonic map.
    """

    alpha: float = 1.0
    beta: float = 1.0
    mu_penalty: float = 10.0
    lam: float = 1.0
    eps_clamp: float = 0.05
    eps_stop: float = 1e-5
    max_iters: int = 100
    feature: str = "curvature"
    project_every: int = 1
    base_src: int = None
    base_tgt: int = None
    newton_tol: float = 1e-10
    min_step: float = 1.0 / 64

    def validate(self):
        for name in ("alpha", "beta", "mu_penalty", "lam", "eps_clamp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.eps_stop <= 0:
            raise ValueError("eps_stop must be positive")
        if not 0 < self.eps_clamp < 1:
            raise ValueError("eps_clamp must lie in (0, 1)")
        if self.mu_penalty <= 0:
            raise ValueError("mu_penalty must be positive")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.feature not in FEATURE_MODES:
            raise ValueError(f"feature must be one of {FEATURE_MODES}")
        if self.project_every < 1:
            raise ValueError("project_every must be >= 1")
        return self

    def feature_weights(self):
        """(field name, weight) pairs for the configured feature mode."""
        if self.feature == "curvature":
            return [("mean_curvature", self.alpha), ("gauss_curvature", self.beta)]
        if self.feature == "intensity":
            return [("intensity", self.alpha)]
        return [("intensity", self.alpha), ("mean_curvature", self.alpha), ("gauss_curvature", self.beta)]

    def to_dict(self):
        return asdict(self)


# -- parameterization --------------------------------------------------------

@dataclass
class Parameterization:
    """Uniformized surface: metric, cut, layout and deck generators."""

    mesh: TriangleMesh
    metric: object
    basis: object
    domain: FundamentalDomain
    generators: FuchsianGenerators
    words: list
    timings: dict = field(default_factory=dict)

    @property
    def sliced(self):
        return self.domain.sliced


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except RegistrationError:
        raise
    except (MeshError, ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        raise RegistrationError(name, str(exc)) from exc


def parameterize(mesh: TriangleMesh, base_vertex=None, basis=None, tol=1e-10, lengths=None) -> Parameterization:
    """Ricci flow, canonical cut, layout and generators of one surface.

    ``lengths`` optionally replaces the embedding's edge lengths (indexed
    like ``mesh.edges``) as the initial metric.
    """
    if mesh.genus < 1:
        raise RegistrationError("input", "genus must be >= 1")
    t = {}
    t0 = time.perf_counter()
    metric = _stage("ricci_flow", ricci_flow, mesh, tol=tol, lengths=lengths)
    t["ricci_flow"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if basis is None:
        if base_vertex is None:
            basis = _stage("topology", choose_base_vertex, mesh, lengths)
        else:
            basis = _stage("topology", greedy_homotopy_basis, mesh, int(base_vertex))
    sliced = _stage("topology", slice_along_basis, mesh, basis)
    t["topology"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    domain = _stage("layout", layout_domain, metric, sliced)
    gens = _stage("generators", compute_generators, domain)
    words = _stage("generators", copy_words, sliced)
    t["layout"] = time.perf_counter() - t0
    return Parameterization(mesh, metric, basis, domain, gens, words, t)


# -- feature transfer --------------------------------------------------------

def _face_gradients(z, faces, values):
    """Per-face gradient ``gx + i gy`` of piecewise-linear vertex values."""
    p = z[faces]
    area2 = ((np.conj(p[:, 1] - p[:, 0]) * (p[:, 2] - p[:, 0])).imag)
    g = np.zeros(len(faces), dtype=complex)
    for k in range(3):
        t = 1j * (p[:, (k + 2) % 3] - p[:, (k + 1) % 3])
        g += values[faces[:, k]] * t
    return g / area2


def _words_up_to(names, length):
    letters = [(n, 1) for n in names] + [(n, -1) for n in names]
    out = [()]
    for k in range(1, length + 1):
        for w in itertools.product(letters, repeat=k):
            if all(not (a[0] == b[0] and a[1] == -b[1]) for a, b in zip(w[:-1], w[1:])):
                out.append(tuple(w))
    return out


class FeatureTransfer:
    """Piecewise-linear scalar fields on a laid-out triangulation of the cover.

    Queries outside the fundamental domain are moved into it by short
    deck words (generators, their products of length two, and the
    sub-words of the base-point relation that reach the corner tiles).
    Values are deck invariant; gradients are pulled back with the chain
    rule ``grad(F o M) = conj(M') grad F(M)``.
    """

    def __init__(self, layout, faces, fields, generators: FuchsianGenerators, relation=None, k_nearest=12):
        self.z = np.asarray(layout, dtype=complex)
        self.faces = np.asarray(faces)
        self.fields = {k: np.asarray(v, dtype=float) for k, v in fields.items()}
        self.generators = generators
        self.grads = {k: _face_gradients(self.z, self.faces, v) for k, v in self.fields.items()}
        c = self.z[self.faces].mean(axis=1)
        self.tree = cKDTree(np.column_stack([c.real, c.imag]))
        self.k = min(k_nearest, len(self.faces))
        words = _words_up_to(generators.names(), 2)
        if relation:
            m = len(relation)
            for i in range(m):
                for L in range(1, m):
                    w = tuple(relation[(i + j) % m] for j in range(L))
                    words.append(w)
                    words.append(tuple((n, -s) for n, s in reversed(w)))
        seen, self.motions = set(), []
        for w in sorted(words, key=len):
            if w not in seen:
                seen.add(w)
                self.motions.append((w, generators.word_motion(w)))
        e1 = self.z[self.faces[:, 1]] - self.z[self.faces[:, 0]]
        e2 = self.z[self.faces[:, 2]] - self.z[self.faces[:, 0]]
        self._det = (np.conj(e1) * e2).imag
        self._e1, self._e2 = e1, e2

    def _bary(self, w, f):
        d = w - self.z[self.faces[f, 0]]
        b1 = (np.conj(d) * self._e2[f]).imag / self._det[f]
        b2 = (np.conj(self._e1[f]) * d).imag / self._det[f]
        return np.stack([1 - b1 - b2, b1, b2], axis=-1)

    def _locate_local(self, w, tol):
        """Face and barycentrics for points inside the base layout, else -1."""
        _, cand = self.tree.query(np.column_stack([w.real, w.imag]), k=self.k)
        cand = cand.reshape(len(w), -1)
        face = np.full(len(w), -1)
        bary = np.zeros((len(w), 3))
        best = np.full(len(w), -np.inf)
        for j in range(cand.shape[1]):
            b = self._bary(w, cand[:, j])
            mn = b.min(axis=1)
            better = (mn > best)
            best = np.where(better, mn, best)
            face = np.where(better, cand[:, j], face)
            bary = np.where(better[:, None], b, bary)
        ok = best >= -tol
        face[~ok] = -1
        return face, bary

    def locate(self, w, tol=1e-7):
        """``(face, bary, motion index)`` with ``motion(w)`` inside ``face``.

        Raises
        ------
        RegistrationError
            If a point is outside the extended layout.
        """
        w = np.asarray(w, dtype=complex).ravel()
        face = np.full(len(w), -1)
        bary = np.zeros((len(w), 3))
        which = np.full(len(w), -1)
        todo = np.arange(len(w))
        for mi, (_, m) in enumerate(self.motions):
            if not len(todo):
                break
            wm = m(w[todo])
            if self.generators.kind == MOBIUS:
                inside = np.abs(wm) < 1
                wm = np.where(inside, wm, 0)
            f, b = self._locate_local(wm, tol)
            if self.generators.kind == MOBIUS:
                f[~inside] = -1
            hit = f >= 0
            face[todo[hit]] = f[hit]
            bary[todo[hit]] = b[hit]
            which[todo[hit]] = mi
            todo = todo[~hit]
        if len(todo):
            raise RegistrationError("feature_transfer", f"{len(todo)} query points lie outside the extended layout "
                                                        f"(first {w[todo[0]]:.6g})")
        return face, bary, which

    def evaluate(self, w, names=None):
        """Values and complex gradients of the named fields at cover points ``w``."""
        w = np.asarray(w, dtype=complex)
        face, bary, which = self.locate(w)
        names = list(self.fields) if names is None else names
        deriv = np.ones(len(w), dtype=complex)
        for mi in np.unique(which):
            sel = which == mi
            deriv[sel] = self.motions[mi][1].derivative(w[sel])
        vals, grads = {}, {}
        for nme in names:
            v = self.fields[nme]
            vals[nme] = np.einsum("ij,ij->i", bary, v[self.faces[face]])
            grads[nme] = np.conj(deriv) * self.grads[nme][face]
        return vals, grads, (face, bary, which)


def transfer_features(target: Parameterization, fields, scale=None) -> FeatureTransfer:
    """Target fields copied onto the target layout (every copy gets its vertex value).

    ``scale`` optionally multiplies each named field.
    """
    sl = target.sliced
    vals = {}
    for name in fields:
        if name not in target.mesh.fields:
            raise RegistrationError("feature_transfer", f"target mesh has no field {name!r}")
        k = 1.0 if scale is None else scale.get(name, 1.0)
        vals[name] = k * np.asarray(target.mesh.fields[name], dtype=float)[sl.original]
    relation = None
    if target.generators.kind == MOBIUS:
        relation = base_relation(target.domain, target.generators)[1]
    return FeatureTransfer(target.domain.layout, sl.faces, vals, target.generators, relation)


# -- per-vertex closed-form update -------------------------------------------

def sherman_morrison_solve(r, u, v, mu):
    """Solve ``(mu^2 I + u u^T + v v^T) x = r`` per vertex in closed form.

    ``u``, ``v``, ``r`` and ``x`` are complex-encoded 2-vectors. With
    ``u' = u / mu`` and ``v' = v / mu`` the inverse is
    ``(1/mu^2) (I - (u'u'^T + v'v'^T + (u' x v')^2 I) / (1 + |u'|^2 + |v'|^2 + (u' x v')^2))``.
    """
    up, vp = u / mu, v / mu
    cross = (np.conj(up) * vp).imag
    den = 1 + np.abs(up) ** 2 + np.abs(vp) ** 2 + cross ** 2
    proj = up * (up.real * r.real + up.imag * r.imag) + vp * (vp.real * r.real + vp.imag * r.imag)
    return (r - (proj + cross ** 2 * r) / den) / mu ** 2


def sherman_morrison_step(d1, d2, u, v, mu):
    """Solve ``(mu^2 I + S^T S) x = S^T d`` with rows ``S = [u; v]`` and ``d = (d1, d2)``."""
    return sherman_morrison_solve(d1 * u + d2 * v, u, v, mu)


def single_feature_step(d1, u, mu, alpha):
    """The ``beta = 0`` form ``(H1 - H2) grad H2 / (mu^2 / alpha^2 + |grad H2|^2)``.

    Here ``d1 = alpha (H1 - H2)`` and ``u = alpha grad H2``.
    """
    g = u / alpha
    return (d1 / alpha) * g / (mu ** 2 / alpha ** 2 + np.abs(g) ** 2)


def feature_step(residuals, gradients, mu, extra=None):
    """Gauss-Newton displacement ``(mu^2 I + S^T S)^-1 (S^T d + extra)`` for k weighted features.

    ``residuals`` and ``gradients`` are lists of per-vertex arrays
    (already multiplied by their weights); ``extra`` is an optional
    complex-encoded right-hand side added to ``S^T d``.
    """
    r = sum(d * g for d, g in zip(residuals, gradients))
    if extra is not None:
        r = r + extra
    k = len(gradients)
    if k == 0:
        return r / mu ** 2
    if k <= 2:
        u = gradients[0]
        v = gradients[1] if k == 2 else np.zeros_like(u)
        return sherman_morrison_solve(r, u, v, mu)
    a11 = mu ** 2 + sum(g.real ** 2 for g in gradients)
    a22 = mu ** 2 + sum(g.imag ** 2 for g in gradients)
    a12 = sum(g.real * g.imag for g in gradients)
    det = a11 * a22 - a12 ** 2
    x = (a22 * r.real - a12 * r.imag) / det
    y = (a11 * r.imag - a12 * r.real) / det
    return x + 1j * y


# -- the registration problem ------------------------------------------------

@dataclass
class RegistrationState:
    g: np.ndarray
    h: np.ndarray
    energy_trace: list
    iteration: int = 0
    periodicity: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    g0: np.ndarray = None
    projected: list = field(default_factory=list)   # blend fraction of the projection per iteration


class RegistrationProblem:
    """Everything fixed during the iterations: layouts, operators, features."""

    def __init__(self, source: Parameterization, target: Parameterization, config: RegistrationConfig):
        if source.mesh.genus != target.mesh.genus:
            raise RegistrationError("input", "source and target genus differ")
        self.source, self.target, self.config = source, target, config
        if [s.label for s in source.sliced.segments] != [s.label for s in target.sliced.segments]:
            raise RegistrationError("initial_harmonic", "boundary words of source and target differ")
        d1 = source.domain
        self.n = source.sliced.n_original
        self.base = source.sliced.base_vertex
        self.base_value = complex(target.domain.layout[target.sliced.base_vertex])
        self.G2 = target.generators
        self.words = source.words
        self.S = cotan_stiffness(d1.layout, source.sliced.faces)
        # operator rows use the one-ring of each vertex in its own chart
        self.S_rows = chart_stiffness(d1, source.generators, self.words)
        p = d1.layout[source.sliced.faces]
        area = 0.5 * np.abs((np.conj(p[:, 1] - p[:, 0]) * (p[:, 2] - p[:, 0])).imag)
        self.mean_area = float(area.mean())
        self.mass = np.bincount(source.sliced.original[source.sliced.faces].ravel(),
                                weights=np.repeat(area / 3, 3), minlength=self.n)
        self.all_weights = config.feature_weights()
        self.field_names = [nme for nme, _ in self.all_weights]
        self.weights = [(nme, w) for nme, w in self.all_weights if w > 0]
        for nme in self.field_names:
            if nme not in source.mesh.fields:
                raise RegistrationError("features", f"source mesh has no field {nme!r}")
        # features are compared in units of their source spread so that the
        # weights are dimensionless
        self.feature_scale = {}
        for nme in self.field_names:
            f = np.asarray(source.mesh.fields[nme][: self.n], dtype=float)
            mean = np.sum(self.mass * f) / np.sum(self.mass)
            sd = np.sqrt(np.sum(self.mass * (f - mean) ** 2) / np.sum(self.mass))
            self.feature_scale[nme] = 1.0 / sd if sd > 1e-12 else 1.0
        self.src_features = {nme: self.feature_scale[nme] * np.asarray(source.mesh.fields[nme][: self.n], dtype=float)
                             for nme in self.field_names}
        self.transfer = transfer_features(target, self.field_names, self.feature_scale)
        self.harmonic_system = assemble(d1, self.G2, self.S_rows, {self.base: self.base_value}, words=self.words)

    # helpers
    def expand(self, g):
        return self.harmonic_system.expand(g)

    def solve(self, system, initial):
        if system.kind == TRANSLATION:
            return solve_linear(system)
        return solve_newton(system, initial, tol=self.config.newton_tol)

    def harmonic_energy(self, g):
        gc = self.expand(g)[self.source.sliced.faces]
        e = 0.0
        for a, b in ((0, 1), (1, 2), (2, 0)):
            e += np.sum(self.S[:, a, b] * np.abs(gc[:, a] - gc[:, b]) ** 2)
        return 0.5 * float(e)

    def feature_residuals(self, g):
        vals, grads, _ = self.transfer.evaluate(g, [nme for nme, _ in self.weights])
        res = {nme: self.src_features[nme] - vals[nme] for nme, _ in self.weights}
        return res, grads

    def mismatch_terms(self, g):
        """Per-field ``1/2 int (F1 - F2 o g)^2`` over the source layout."""
        vals, _, _ = self.transfer.evaluate(g, self.field_names)
        return {n: 0.5 * float(np.sum(self.mass * (self.src_features[n] - vals[n]) ** 2))
                for n in self.field_names}

    def coupling_energy(self, g, h):
        return 0.5 * self.config.mu_penalty ** 2 * float(np.sum(self.mass * np.abs(g - h) ** 2))

    def weighted_mismatch(self, terms):
        return sum(w * w * terms[n] for n, w in self.all_weights)

    def energy(self, g, h=None):
        """``(harmonic, mismatch, total)`` of the split energy at ``(g, h)``.

        ``total = 1/2 int |grad g|^2 + mu^2/2 int |g - h|^2 + sum w^2 E_F(h)``
        with ``E_F(h) = 1/2 int (F1 - F2 o h)^2``; ``h`` defaults to ``g``,
        where the split energy equals the registration energy of ``g``.
        ``mismatch`` reports the unweighted ``sum E_F(g)`` of the map
        itself so that runs with different weights (including zero) can
        be compared.
        """
        hm = self.harmonic_energy(g)
        tg = self.mismatch_terms(g)
        if h is None:
            return hm, sum(tg.values()), hm + self.weighted_mismatch(tg)
        th = self.mismatch_terms(h)
        return hm, sum(tg.values()), hm + self.coupling_energy(g, h) + self.weighted_mismatch(th)

    # stages
    def boundary_map(self):
        """Arc-length correspondence of equally labeled boundary segments."""
        z1, z2 = self.source.domain.layout, self.target.domain.layout
        hyp = self.source.domain.background == HYPERBOLIC
        vals = {}
        for s1, s2 in zip(self.source.sliced.segments, self.target.sliced.segments):
            p, q = z1[s1.copies], z2[s2.copies]
            t1 = _arclength(p, hyp)
            t2 = _arclength(q, hyp)
            x = np.interp(t1, t2, np.arange(len(q)))
            i = np.minimum(np.floor(x).astype(int), len(q) - 2)
            fr = x - i
            pts = (1 - fr) * q[i] + fr * q[i + 1]
            for c, w in zip(s1.copies, pts):
                vals[int(c)] = w
        return vals

    def initial_harmonic(self):
        """Harmonic map on the cover seeded by the arc-length boundary map.

        The Dirichlet problem with the boundary correspondence gives the
        starting point; the returned map is the deck-equivariant harmonic
        map with the base point pinned.
        """
        bvals = self.boundary_map()
        n = self.n
        pinned = {c: v for c, v in bvals.items() if c < n}
        pinned[self.base] = self.base_value
        system = assemble(self.source.domain, self.G2, self.S_rows, pinned, words=self.words)
        start = self._start()
        for c, v in pinned.items():
            start[c] = v
        g0 = _stage("initial_harmonic", self.solve, system, start)
        return _stage("initial_harmonic", self.solve, self.harmonic_system, g0)

    def _start(self):
        z = self.source.domain.layout[: self.n].copy()
        if self.G2.kind == MOBIUS:
            z = z * 0.999
        return z

    def update_h(self, g, at=None):
        """Closed-form minimizer of the linearized ``h`` sub-problem.

        Features are linearized about ``at`` (default ``g``, which gives
        ``h = g + (mu^2 I + S^T S)^-1 S^T d``).
        """
        p = g if at is None else at
        if not self.weights:
            return g.copy()
        res, grads = self.feature_residuals(p)
        r = [w * res[n] for n, w in self.weights]
        s = [w * grads[n] for n, w in self.weights]
        mu = self.config.mu_penalty
        extra = None if at is None else mu ** 2 * (g - p)
        return p + feature_step(r, s, mu, extra)

    def screened_system(self, h) -> CoverSystem:
        mu2 = self.config.mu_penalty ** 2
        base = self.harmonic_system
        keep = np.ones(self.n)
        keep[self.base] = 0
        A = base.A - sparse.diags(mu2 * self.mass * keep)
        b = base.b - mu2 * self.mass * keep * h
        return CoverSystem(A.tocsr(), base.rows, base.cols, base.weights, base.motions, b, base.pinned,
                           base.kind, base.words, base.generators, base.original)

    def update_g(self, h, initial):
        return _stage("update_g", self.solve, self.screened_system(h), initial)

    def projected_coefficient(self, g) -> BeltramiField:
        """Clamped and smoothed Beltrami coefficient of ``g`` on the source domain."""
        mu = beltrami_of_map(self.source.domain, self.expand(g))
        mu = clamp_coefficient(mu, self.config.eps_clamp)
        lam = self.config.lam / self.mean_area
        mu = smooth_coefficient(mu, lam, self.source.generators, self.words)
        return clamp_coefficient(mu, self.config.eps_clamp)

    def reconstruct(self, coef: BeltramiField, initial):
        return _stage("enforce_bijectivity", reconstruct_map, coef, self.G2, {self.base: self.base_value},
                      initial=initial, words=self.words, tol=self.config.newton_tol)

    def enforce_bijectivity(self, g):
        return self.reconstruct(self.projected_coefficient(g), g)

    def flipped_faces(self, g):
        img = self.expand(g)[self.source.sliced.faces]
        det = (np.conj(img[:, 1] - img[:, 0]) * (img[:, 2] - img[:, 0])).imag
        return int(np.sum(det <= 0))

    def max_mu(self, g):
        return beltrami_of_map(self.source.domain, self.expand(g)).max_abs()

    def periodicity_residual(self, g):
        """max over paired segments of |phi_x(g(x)) - g(x^-1)| on the target cover."""
        gc = self.expand(g)
        worst = 0.0
        for seg in self.source.sliced.segments:
            if seg.inverse:
                continue
            tw = self.source.sliced.segments[seg.twin]
            m = self.G2[seg.name]
            worst = max(worst, float(np.max(np.abs(m(gc[seg.copies]) - gc[tw.copies[::-1]]))))
        return worst

    def h_objective(self, g, h):
        return self.coupling_energy(g, h) + self.weighted_mismatch(self.mismatch_terms(h))

    def step_h(self, g, h_prev):
        """Safeguarded Gauss-Newton step on the ``h`` sub-problem.

        Linearizing about ``h_prev`` gives a descent direction, so halving
        the step until the sub-objective decreases terminates; if even
        the smallest step fails, ``h_prev`` is kept.
        """
        if not self.weights:
            return g.copy(), 0.0
        d = self.update_h(g, at=h_prev) - h_prev
        phi0 = self.h_objective(g, h_prev)
        step = 1.0
        while step >= self.config.min_step:
            h = h_prev + step * d
            try:
                if self.h_objective(g, h) <= phi0:
                    return h, step
            except RegistrationError:
                pass
            step *= 0.5
        return h_prev, 0.0

    def run(self, g0=None, callback=None):
        """Alternate the ``h``, ``g`` and bijectivity steps until the energy settles."""
        cfg = self.config
        g = self.initial_harmonic() if g0 is None else np.asarray(g0, dtype=complex)
        h = g.copy()
        E = self.energy(g, h)
        state = RegistrationState(g, h, [(0, *E)], 0, [self.periodicity_residual(g)], [0.0], g.copy(), [0.0])
        scale = max(abs(E[2]), 1e-300)
        while state.iteration < cfg.max_iters:
            it = state.iteration + 1
            g_prev = g
            h, step = self.step_h(g, h)
            g = self.update_g(h, g)
            projected = 0.0
            if it % cfg.project_every == 0:
                g, projected, E_new = self._project(g, h, g_prev, E[2])
            else:
                E_new = self.energy(g, h)
            dE = E[2] - E_new[2]
            E = E_new
            state.g, state.h, state.iteration = g, h, it
            state.energy_trace.append((it, *E))
            state.periodicity.append(self.periodicity_residual(g))
            state.steps.append(step)
            state.projected.append(projected)
            logger.info("iteration %d: harmonic %.6g mismatch %.6g total %.6g h-step %.3g",
                        it, E[0], E[1], E[2], step)
            if callback is not None:
                callback(state)
            if abs(dE) < cfg.eps_stop * scale:
                break
        return state

    def _project(self, g, h, g_prev, E_prev):
        """Bijectivity projection safeguarded against energy increase.

        Returns ``(map, t, energy)``. The projected map is used if it does
        not raise the energy above ``E_prev``; failing that, the
        coefficient is blended as ``(1 - t) mu_prev + t mu_new`` with
        ``t`` halved down to ``min_step``. Blends of coefficients bounded
        by ``1 - eps`` stay bounded, so every candidate is a bijection,
        and ``t -> 0`` recovers ``g_prev`` whose energy at the new ``h``
        does not exceed ``E_prev``.
        """
        cfg = self.config
        coef = self.projected_coefficient(g)
        gp = self.reconstruct(coef, g)
        Ep = self.energy(gp, h)
        if Ep[2] <= E_prev or self.flipped_faces(g_prev) > 0:
            return gp, 1.0, Ep
        mu_prev = beltrami_of_map(self.source.domain, self.expand(g_prev)).mu
        t = 0.5
        while t >= cfg.min_step:
            blend = BeltramiField((1 - t) * mu_prev + t * coef.mu, coef.domain)
            gt = self.reconstruct(blend, g_prev)
            Et = self.energy(gt, h)
            if Et[2] <= E_prev:
                return gt, t, Et
            t *= 0.5
        return g_prev, 0.0, self.energy(g_prev, h)

    # output
    def pullback(self, g):
        """Target face, barycentric coordinates and 3D point for every source vertex."""
        face, bary, _ = self.transfer.locate(g)
        tsl = self.target.sliced
        orig_face = tsl.original[tsl.faces[face]]
        xyz = np.einsum("ij,ijk->ik", bary, self.target.mesh.vertices[orig_face])
        return face, bary, xyz


def _arclength(p, hyperbolic):
    if hyperbolic:
        d = 2 * np.arctanh(np.abs((p[1:] - p[:-1]) / (1 - p[1:] * np.conj(p[:-1]))))
    else:
        d = np.abs(np.diff(p))
    t = np.concatenate([[0.0], np.cumsum(d)])
    return t / t[-1]


@dataclass
class RegistrationResult:
    problem: RegistrationProblem
    state: RegistrationState
    g: np.ndarray
    target_face: np.ndarray
    bary: np.ndarray
    positions: np.ndarray
    flipped: int
    max_mu: float
    timings: dict

    @property
    def energy_trace(self):
        return self.state.energy_trace

    @property
    def iterations(self):
        return self.state.iteration

    def feature_error(self, name, g=None):
        """Area-weighted ``int (F1 - F2 o f)^2`` of a matched field, in the field's own units.

        ``g`` defaults to the final map.
        """
        p = self.problem
        vals, _, _ = p.transfer.evaluate(self.g if g is None else g, [name])
        k = p.feature_scale[name]
        return float(np.sum(p.mass * (p.src_features[name] - vals[name]) ** 2)) / k ** 2

    @property
    def initial_feature_error(self):
        """``feature_error`` of every matched field at the initial harmonic map."""
        return {n: self.feature_error(n, self.state.g0) for n in self.problem.field_names}

    def target_field(self, name):
        """Source field carried to the target vertices through the inverse map.

        Target vertices are located in the image of the source domain
        (a fundamental domain of the target cover, since the map is
        deck equivariant) and the source values are interpolated there.
        """
        p = self.problem
        if name not in p.source.mesh.fields:
            raise RegistrationError("export", f"source mesh has no field {name!r}")
        sl1 = p.source.sliced
        image = p.expand(self.g)
        vals = {name: np.asarray(p.source.mesh.fields[name], dtype=float)[sl1.original]}
        relation = None
        if p.G2.kind == MOBIUS:
            relation = base_relation(p.target.domain, p.G2)[1]
        ft = FeatureTransfer(image, sl1.faces, vals, p.G2, relation)
        n2 = p.target.sliced.n_original
        out, _, _ = ft.evaluate(p.target.domain.layout[:n2], [name])
        return out[name]

    def save_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "harmonic", "mismatch", "total"])
            for row in self.energy_trace:
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])

    def save_map_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src_vertex", "tgt_face", "bary1", "bary2", "bary3", "x", "y", "z"])
            for i in range(len(self.g)):
                w.writerow([i, int(self.target_face[i])] + [repr(float(b)) for b in self.bary[i]]
                           + [repr(float(x)) for x in self.positions[i]])


def ensure_curvature_fields(mesh: TriangleMesh) -> TriangleMesh:
    if "mean_curvature" in mesh.fields and "gauss_curvature" in mesh.fields:
        return mesh
    return with_curvature_fields(mesh)


def parameterize_pair(source: TriangleMesh, target: TriangleMesh, config: RegistrationConfig):
    """Parameterize both surfaces with corresponding cuts.

    When the two meshes share connectivity and no explicit target base is
    given, the source cut is reused on the target so that equal labels
    denote corresponding loops.
    """
    if source.genus != target.genus:
        raise RegistrationError("input", f"genus mismatch: {source.genus} vs {target.genus}")
    P1 = parameterize(source, config.base_src)
    same = (source.n_vertices == target.n_vertices and source.faces.shape == target.faces.shape
            and np.array_equal(source.faces, target.faces))
    if same and config.base_tgt in (None, P1.basis.base_vertex):
        basis2 = _stage("topology", transfer_cut, P1.basis, target)
        P2 = parameterize(target, basis=basis2)
    else:
        P2 = parameterize(target, config.base_tgt)
    return P1, P2


def register(source: TriangleMesh, target: TriangleMesh, config: RegistrationConfig = None,
             pair=None, callback=None) -> RegistrationResult:
    """Register ``source`` onto ``target``; see the module docstring."""
    config = (config or RegistrationConfig()).validate()
    timings = {}
    t0 = time.perf_counter()
    source = ensure_curvature_fields(source)
    target = ensure_curvature_fields(target)
    P1, P2 = pair if pair is not None else parameterize_pair(source, target, config)
    if pair is not None:
        P1.mesh, P2.mesh = source, target
    timings["parameterize"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    problem = RegistrationProblem(P1, P2, config)
    state = problem.run(callback=callback)
    timings["iterate"] = time.perf_counter() - t0
    face, bary, xyz = problem.pullback(state.g)
    return RegistrationResult(problem, state, state.g, face, bary, xyz, problem.flipped_faces(state.g),
                              problem.max_mu(state.g), timings)
