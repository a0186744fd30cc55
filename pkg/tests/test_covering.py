import numpy as np
import pytest

from coverreg.covering import (MOBIUS, TRANSLATION, CoveringError, FuchsianGenerators, RigidMotion,
                               base_relation, copy_words, hyperbolic_distance, mobius_from_segments,
                               resolve_copy)


def test_hyperbolic_distance_values():
    assert abs(hyperbolic_distance(0, 0.5) - np.arctanh(0.5)) < 1e-15
    assert hyperbolic_distance(0.3 + 0.2j, 0.3 + 0.2j) == 0
    with pytest.raises(CoveringError):
        hyperbolic_distance(0, 1.2)


def test_distance_invariant_under_mobius():
    rng = np.random.default_rng(1)
    m = RigidMotion.mobius(0.7, 0.4 - 0.3j)
    z = 0.6 * rng.random(20) * np.exp(2j * np.pi * rng.random(20))
    w = 0.6 * rng.random(20) * np.exp(2j * np.pi * rng.random(20))
    assert np.max(np.abs(hyperbolic_distance(m(z), m(w)) - hyperbolic_distance(z, w))) < 1e-12


def test_mobius_from_segments_identity_and_rotation():
    m = mobius_from_segments(0.1 + 0.2j, -0.3j, 0.1 + 0.2j, -0.3j)
    assert m.is_identity(1e-12)
    rot = mobius_from_segments(0, 0.5, 0, 0.5j)
    assert abs(rot(0.5) - 0.5j) < 1e-14
    assert abs(rot(0.3) - 0.3j) < 1e-14
    with pytest.raises(CoveringError):
        mobius_from_segments(0, 0.5, 0, 0.7)


def test_motion_serialization():
    g = FuchsianGenerators({"a1": RigidMotion.mobius(0.3, 0.2j), "b1": RigidMotion.mobius(-1.0, 0.1)}, MOBIUS)
    back = FuchsianGenerators.from_json(g.to_json())
    z = np.array([0, 0.3 - 0.2j, -0.5j])
    for k in g.names():
        assert np.allclose(back[k](z), g[k](z), atol=1e-15)


def test_generators_match_segments(eight_pipe):
    z = eight_pipe.domain.layout
    sl = eight_pipe.sliced
    assert eight_pipe.generators.genus == 2
    for seg in sl.segments:
        if seg.inverse:
            continue
        m = eight_pipe.generators[seg.name]
        dst = z[sl.segments[seg.twin].copies[::-1]]
        assert np.max(np.abs(m(z[seg.copies]) - dst)) < 1e-8
        w = 0.5 * z[seg.copies]
        assert np.max(np.abs(m.inverse()(m(w)) - w)) < 1e-12


def test_resolve_copy(eight_pipe):
    dom, gens = eight_pipe.domain, eight_pipe.generators
    words = copy_words(dom.sliced)
    interior = next(c for c in range(dom.sliced.n_original) if not words[c])
    assert resolve_copy(interior, dom, gens, words).is_identity()
    for c in range(dom.sliced.n_original, dom.sliced.n_vertices):
        resolve_copy(c, dom, gens, words)


def test_base_relation_is_identity(torus_pipe, eight_pipe):
    for P, n in ((torus_pipe, 4), (eight_pipe, 8)):
        m, word = base_relation(P.domain, P.generators)
        assert len(word) == n
        assert m.distance_to_identity() < 1e-8


def test_torus_generators_are_translations(torus_pipe):
    gens = torus_pipe.generators
    assert gens.kind == TRANSLATION
    t1, t2 = gens["a1"].vector, gens["b1"].vector
    assert abs((np.conj(t1) * t2).imag) > 1e-3
    comm = gens.word_motion([("a1", 1), ("b1", 1), ("a1", -1), ("b1", -1)])
    assert abs(comm(0.3 + 0.1j) - (0.3 + 0.1j)) < 1e-12
