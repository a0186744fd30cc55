import numpy as np
import pytest
from scipy.sparse.linalg import splu

from coverreg.cover_solver import (SolverError, assemble_cotan, cotan_stiffness, solve_linear, solve_newton)


def _pinned(P):
    b = P.sliced.base_vertex
    return {b: P.domain.layout[b]}


def test_equilateral_cotan_weight():
    tri = np.array([0, 1, np.exp(1j * np.pi / 3)])
    S = cotan_stiffness(tri, np.array([[0, 1, 2]]))
    off = S[0][~np.eye(3, dtype=bool)]
    assert np.allclose(off, 0.5 / np.sqrt(3), atol=1e-15)
    assert np.allclose(S[0].sum(axis=1), 0)


def test_degenerate_face_rejected():
    with pytest.raises(SolverError):
        cotan_stiffness(np.array([0, 1, 2 + 0j]), np.array([[0, 1, 2]]))


def test_flat_layout_is_harmonic(torus_pipe):
    s = assemble_cotan(torus_pipe.domain, torus_pipe.generators, pinned=_pinned(torus_pipe))
    z = torus_pipe.domain.layout[:s.n]
    assert np.max(np.abs(s.residual(z))) < 1e-8
    free = assemble_cotan(torus_pipe.domain, torus_pipe.generators)
    # cut-crossing weights live in the motion terms; together every row sums to zero
    rows = free.A @ np.ones(free.n) + np.bincount(free.rows, weights=free.weights, minlength=free.n)
    assert np.max(np.abs(rows)) < 1e-12


def test_linear_solve_fixed_point_and_equivariance(torus_pipe):
    P = torus_pipe
    s = assemble_cotan(P.domain, P.generators, pinned=_pinned(P))
    z, info = solve_linear(s, return_info=True)
    assert info["residual"] < 1e-10
    assert np.max(np.abs(z - P.domain.layout[:s.n])) < 1e-8
    b = P.sliced.base_vertex
    shifted = assemble_cotan(P.domain, P.generators, pinned={b: P.domain.layout[b] + 0.25 - 0.1j})
    assert np.max(np.abs(solve_linear(shifted) - (z + 0.25 - 0.1j))) < 1e-10
    # copies are the deck images of their representatives
    assert np.max(np.abs(s.expand(z) - P.domain.layout)) < 1e-8


def test_linear_rejects_mobius(eight_pipe):
    with pytest.raises(SolverError):
        solve_linear(assemble_cotan(eight_pipe.domain, eight_pipe.generators, pinned=_pinned(eight_pipe)))


def test_newton_matches_linear_for_torus(torus_pipe):
    s = assemble_cotan(torus_pipe.domain, torus_pipe.generators, pinned=_pinned(torus_pipe))
    zl = solve_linear(s)
    z0 = np.full(s.n, torus_pipe.domain.layout[torus_pipe.sliced.base_vertex])
    zn, info = solve_newton(s, z0, return_info=True)
    assert np.max(np.abs(zl - zn)) < 1e-10
    _, info = solve_newton(s, zl, return_info=True)
    assert info["iterations"] == 0


def test_genus2_identity_is_harmonic(eight_pipe):
    s = assemble_cotan(eight_pipe.domain, eight_pipe.generators, pinned=_pinned(eight_pipe))
    # per-chart weights make the layout coordinates an exact solution
    assert np.max(np.abs(s.residual(eight_pipe.domain.layout[:s.n]))) < 1e-9


def test_genus2_newton(eight_pipe):
    s = assemble_cotan(eight_pipe.domain, eight_pipe.generators, pinned=_pinned(eight_pipe))
    z0 = eight_pipe.domain.layout[:s.n]
    z, info = solve_newton(s, z0, return_info=True)
    assert info["residual"] < 1e-10 and info["iterations"] <= 5
    assert np.max(np.abs(z)) < 1
    rng = np.random.default_rng(8)
    v = (rng.normal(size=s.n) + 1j * rng.normal(size=s.n)) * (1 - np.abs(z))
    v[eight_pipe.sliced.base_vertex] = 0
    _, info = solve_newton(s, z + 0.05 * v, return_info=True)
    assert info["iterations"] <= 5
    # one full Newton step from three perturbation scales: error after the step ~ eps^2
    eps = np.array([2e-2, 1e-2, 5e-3])
    after = []
    for e in eps:
        w = z + e * v
        w = w - splu(s.jacobian(w)).solve(s.residual(w))
        after.append(np.max(np.abs(s.residual(w))))
    order = np.polyfit(np.log(eps), np.log(after), 1)[0]
    assert order >= 1.8
