"""Rigid motions of the universal cover, deck generators and copy resolution.

Rigid motions are stored as 2x2 complex matrices acting by linear
fractional transformation: translations ``[[1, t], [0, 1]]`` in the plane
and disk automorphisms ``[[a, b], [conj(b), conj(a)]]`` with
``|a|^2 - |b|^2 = 1`` in the Poincare disk. A disk automorphism in the
form ``exp(i*theta) * (z - z0) / (1 - conj(z0) * z)`` has
``z0 = -b / a`` and ``exp(i*theta) = a / conj(a)``.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .mesh import MeshError
from .uniformize import HYPERBOLIC, FundamentalDomain

logger = logging.getLogger(__name__)

TRANSLATION = "translation"
MOBIUS = "mobius"


class CoveringError(MeshError):
    """Inconsistent boundary identification or invalid disk points."""


def _check_disk(*zs):
    for z in zs:
        if np.any(np.abs(np.asarray(z)) >= 1):
            raise CoveringError("point on or outside the unit circle")


class RigidMotion:
    """Translation of the plane or orientation-preserving isometry of the disk."""

    __slots__ = ("kind", "matrix")

    def __init__(self, kind, matrix):
        if kind not in (TRANSLATION, MOBIUS):
            raise ValueError(f"unknown motion kind {kind!r}")
        m = np.asarray(matrix, dtype=complex).reshape(2, 2)
        if kind == MOBIUS:
            # project back onto SU(1,1) to control drift
            a, b = m[0, 0], m[0, 1]
            det = abs(a) ** 2 - abs(b) ** 2
            if det <= 0:
                raise CoveringError("matrix does not preserve the unit disk")
            a, b = a / np.sqrt(det), b / np.sqrt(det)
            m = np.array([[a, b], [np.conj(b), np.conj(a)]])
        else:
            m = np.array([[1, m[0, 1] / m[1, 1]], [0, 1]], dtype=complex)
        self.kind = kind
        self.matrix = m
        self.matrix.setflags(write=False)

    # constructors
    @classmethod
    def identity(cls, kind=MOBIUS):
        return cls(kind, np.eye(2))

    @classmethod
    def translation(cls, t):
        return cls(TRANSLATION, [[1, complex(t)], [0, 1]])

    @classmethod
    def mobius(cls, theta, z0):
        """``exp(i*theta) * (z - z0) / (1 - conj(z0) * z)``."""
        _check_disk(z0)
        h = np.exp(0.5j * theta)
        return cls(MOBIUS, [[h, -h * z0], [-np.conj(z0) / h, 1 / h]])

    # parameters
    @property
    def theta(self):
        a = self.matrix[0, 0]
        return float(np.angle(a / np.conj(a)) % (2 * np.pi))

    @property
    def z0(self):
        return complex(-self.matrix[0, 1] / self.matrix[0, 0])

    @property
    def vector(self):
        return complex(self.matrix[0, 1])

    # action
    def __call__(self, z):
        (a, b), (c, d) = self.matrix
        z = np.asarray(z, dtype=complex)
        return (a * z + b) / (c * z + d)

    def derivative(self, z):
        """Complex derivative ``1 / (c z + d)^2`` (determinant one)."""
        (a, b), (c, d) = self.matrix
        return 1.0 / (c * np.asarray(z, dtype=complex) + d) ** 2

    def __matmul__(self, other):
        """Composition: ``(self @ other)(z) = self(other(z))``."""
        if self.kind != other.kind:
            raise CoveringError("cannot compose motions of different kinds")
        return RigidMotion(self.kind, self.matrix @ other.matrix)

    def inverse(self):
        (a, b), (c, d) = self.matrix
        return RigidMotion(self.kind, [[d, -b], [-c, a]])

    def distance_to_identity(self):
        """Max-entry distance of the normalized matrix to +-identity."""
        m = self.matrix
        return float(min(np.abs(m - np.eye(2)).max(), np.abs(m + np.eye(2)).max()))

    def is_identity(self, tol=1e-10):
        return self.distance_to_identity() < tol

    def to_dict(self):
        if self.kind == TRANSLATION:
            return {"kind": TRANSLATION, "vector": [self.vector.real, self.vector.imag]}
        z0 = self.z0
        return {"kind": MOBIUS, "theta": self.theta, "z0": [z0.real, z0.imag]}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == TRANSLATION:
            return cls.translation(complex(*d["vector"]))
        return cls.mobius(d["theta"], complex(*d["z0"]))

    def __repr__(self):
        if self.kind == TRANSLATION:
            return f"RigidMotion(translation {self.vector:.6g})"
        return f"RigidMotion(mobius theta={self.theta:.6g}, z0={self.z0:.6g})"


def hyperbolic_distance(z, w):
    """``artanh |(z - w) / (1 - z conj(w))|`` for points of the open unit disk.

    This is half the distance of the curvature -1 metric ``4|dz|^2/(1-|z|^2)^2``.
    """
    _check_disk(z, w)
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    return np.arctanh(np.abs((z - w) / (1 - z * np.conj(w))))


def _normalizer(r, s):
    """Motion sending r to 0 and s to the positive real axis."""
    rho1 = RigidMotion(MOBIUS, [[1, -r], [-np.conj(r), 1]])
    theta = np.angle(rho1(s))
    rho2 = RigidMotion.mobius(-theta, 0)
    return rho2 @ rho1


def mobius_from_segments(r, s, r2, s2, tol=1e-6):
    """Disk isometry M with M(r) = r2 and M(s) = s2.

    Raises
    ------
    CoveringError
        When r = s or the two segments have different hyperbolic lengths.
    """
    _check_disk(r, s, r2, s2)
    if abs(r - s) < 1e-15 or abs(r2 - s2) < 1e-15:
        raise CoveringError("segment endpoints coincide")
    d1, d2 = hyperbolic_distance(r, s), hyperbolic_distance(r2, s2)
    if abs(d1 - d2) > tol * max(1.0, d1):
        raise CoveringError(f"segments are not isometric ({d1:.9g} vs {d2:.9g})")
    return _normalizer(r2, s2).inverse() @ _normalizer(r, s)


def translation_from_segments(r, s, r2, s2, tol=1e-6):
    """Translation T with T(r) = r2 and T(s) = s2."""
    t1, t2 = r2 - r, s2 - s
    if abs(t1 - t2) > tol * max(1.0, abs(s - r)):
        raise CoveringError("segments are not related by a translation")
    return RigidMotion.translation(0.5 * (t1 + t2))


@dataclass
class FuchsianGenerators:
    """Deck generators keyed by loop label ("a1", "b1", ...).

    ``motions[x]`` maps the layout of segment ``x`` onto the layout of
    segment ``x^-1`` (first vertex of x to last vertex of x^-1).
    """

    motions: dict
    kind: str

    @property
    def genus(self):
        return len(self.motions) // 2

    def __getitem__(self, name):
        return self.motions[name]

    def names(self):
        return list(self.motions)

    def word_motion(self, word):
        """Motion of a word ``[(name, +-1), ...]``; the first letter is applied last."""
        out = RigidMotion.identity(self.kind)
        for name, sign in word:
            m = self.motions[name]
            out = out @ (m if sign > 0 else m.inverse())
        return out

    def to_json(self):
        return json.dumps({k: v.to_dict() for k, v in self.motions.items()}, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        motions = {k: RigidMotion.from_dict(v) for k, v in d.items()}
        kinds = {m.kind for m in motions.values()}
        return cls(motions, kinds.pop() if kinds else MOBIUS)


def _pairs(sliced):
    """(name, forward segment, inverse segment) for every identified pair."""
    out = []
    for seg in sliced.segments:
        if not seg.inverse:
            out.append((seg.name, seg, sliced.segments[seg.twin]))
    return out


def compute_generators(domain: FundamentalDomain, tol=1e-8) -> FuchsianGenerators:
    """Deck generators from the layout of paired boundary segments.

    Each motion is fixed by the two endpoints of its segment and then
    checked on every vertex of the segment.
    """
    z = domain.layout
    hyp = domain.background == HYPERBOLIC
    kind = MOBIUS if hyp else TRANSLATION
    motions = {}
    for name, fwd, inv in _pairs(domain.sliced):
        src, dst = z[fwd.copies], z[inv.copies[::-1]]
        if hyp:
            m = mobius_from_segments(src[0], src[-1], dst[0], dst[-1], tol=max(tol, 1e-6))
        else:
            m = translation_from_segments(src[0], src[-1], dst[0], dst[-1], tol=max(tol, 1e-6))
        err = float(np.max(np.abs(m(src) - dst)))
        if err > tol:
            raise CoveringError(f"generator {name} misses its segment by {err:.3e}")
        motions[name] = m
    return FuchsianGenerators(motions, kind)


def copy_links(sliced):
    """Identifications between copies: triples (c_from, c_to, (name, sign)).

    ``layout[c_to] = motion(layout[c_from])`` for the signed generator.
    """
    links = []
    for name, fwd, inv in _pairs(sliced):
        for ca, cb in zip(fwd.copies, inv.copies[::-1]):
            links.append((int(ca), int(cb), (name, 1)))
            links.append((int(cb), int(ca), (name, -1)))
    return links


def copy_words(sliced):
    """Word ``W_c`` for every sliced vertex with ``layout[c] = W_c(layout[rep])``.

    Representatives (sliced ids below ``n_original``) get the empty word.
    Found by breadth-first search over segment identifications, so words
    are shortest in the number of cut crossings.
    """
    n = sliced.n_original
    adj = {}
    for a, b, letter in copy_links(sliced):
        adj.setdefault(a, []).append((b, letter))
    words = {c: () for c in range(n)}
    q = deque(c for c in range(n) if c in adj)
    while q:
        c = q.popleft()
        for d, letter in adj.get(c, ()):
            if d not in words:
                words[d] = (letter,) + words[c]
                q.append(d)
    missing = [c for c in range(sliced.n_vertices) if c not in words]
    if missing:
        raise CoveringError(f"copies {missing[:5]} are not linked to their representative")
    return [words[c] for c in range(sliced.n_vertices)]


def resolve_copy(copy, domain: FundamentalDomain, generators: FuchsianGenerators, words=None, tol=1e-6):
    """Motion carrying the representative of ``copy`` onto ``copy``.

    Interior vertices resolve to the identity. The result is checked
    against the layout.
    """
    sliced = domain.sliced
    words = copy_words(sliced) if words is None else words
    m = generators.word_motion(words[copy])
    rep = int(sliced.original[copy])
    err = abs(complex(m(domain.layout[rep])) - domain.layout[copy])
    if err > tol:
        raise CoveringError(f"copy {copy}: word {words[copy]} misses by {err:.3e}")
    return m


def base_relation(domain: FundamentalDomain, generators: FuchsianGenerators):
    """Composite motion around the cycle of base-point corners and its word.

    The 4g copies of the base vertex are linked in one cycle by the
    segment identifications; composing the signed generators around it
    gives the defining relation of the group, which must be the identity.
    """
    sliced = domain.sliced
    base = sliced.base_vertex
    corners = {int(c) for c in np.flatnonzero(sliced.original == base)}
    adj = {}
    for a, b, letter in copy_links(sliced):
        if a in corners and b in corners:
            adj.setdefault(a, []).append((b, letter))
    start = min(corners)
    word, prev, cur = [], None, start
    m = RigidMotion.identity(generators.kind)
    for _ in range(len(corners)):
        options = [(b, lt) for b, lt in adj.get(cur, []) if (b, lt) != prev]
        if not options:
            raise CoveringError("base corners do not form a cycle")
        b, lt = options[0]
        m = generators.word_motion([lt]) @ m
        word.insert(0, lt)
        prev = (cur, (lt[0], -lt[1]))
        cur = b
        if cur == start:
            break
    if cur != start:
        raise CoveringError("base corner cycle did not close")
    return m, word
