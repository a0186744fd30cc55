import numpy as np
import pytest

from coverreg.mesh import TriangleMesh, make_synthetic
from coverreg.topology import (HomotopyBasis, TopologyError, canonical_relabel, choose_base_vertex,
                               greedy_homotopy_basis, greedy_loops, intersection_parity, slice_along_basis,
                               transfer_cut)


@pytest.fixture(scope="module")
def torus():
    return make_synthetic("torus", resolution=24)


def _check_basis(mesh, basis):
    for loop in basis.loops:
        assert loop[0] == basis.base_vertex and loop[-1] == basis.base_vertex
        for a, b in zip(loop[:-1], loop[1:]):
            assert (int(a), int(b)) in mesh.halfedge_lookup


def test_torus_has_two_loops(torus):
    basis = choose_base_vertex(torus)
    assert len(basis.loops) == 2
    assert basis.canonical and basis.labels == ["a1", "b1"]
    _check_basis(torus, basis)


def test_two_base_vertices_both_valid(torus):
    counts = []
    for v in (0, torus.n_vertices // 2 + 5):
        basis = greedy_homotopy_basis(torus, v)
        _check_basis(torus, basis)
        sliced = slice_along_basis(torus, basis)
        assert sliced.euler_characteristic() == 1
        counts.append(len(basis.loops))
    assert counts == [2, 2]


def test_torus_slice_vertex_count(torus):
    basis = choose_base_vertex(torus)
    sliced = slice_along_basis(torus, basis)
    l1, l2 = (len(loop) - 1 for loop in basis.loops)
    assert sliced.n_vertices == torus.n_vertices + l1 + l2 + 1
    # independent count: the boundary cycle visits 2(l1 + l2) corners, the
    # cut graph has l1 + l2 - 1 distinct vertices
    n_boundary = len(sliced.boundary)
    assert n_boundary == 2 * (l1 + l2)
    assert sliced.n_vertices - torus.n_vertices == n_boundary - (l1 + l2 - 1)
    assert sliced.word == ["a1", "b1", "a1^-1", "b1^-1"]


def test_torus_intersection_form(torus):
    basis = choose_base_vertex(torus)
    a, b = basis.loops
    assert intersection_parity(torus, a, b) == 1
    assert intersection_parity(torus, a, a) == 0


def test_reglue_recovers_connectivity(torus):
    sliced = slice_along_basis(torus, choose_base_vertex(torus))
    glued = sliced.reglue()
    assert np.array_equal(glued, torus.faces)


def test_eight_canonical(eight_pipe):
    basis = eight_pipe.basis
    assert len(basis.loops) == 4 and basis.canonical
    sliced = eight_pipe.sliced
    assert sliced.word == ["a1", "b1", "a1^-1", "b1^-1", "a2", "b2", "a2^-1", "b2^-1"]
    assert sliced.euler_characteristic() == 1
    assert sliced.is_canonical()
    assert np.array_equal(sliced.reglue(), eight_pipe.mesh.faces)
    _check_basis(eight_pipe.mesh, basis)
    # loops meet only at the base vertex
    interiors = [set(map(int, loop[1:-1])) for loop in basis.loops]
    for i in range(4):
        for j in range(i + 1, 4):
            assert not interiors[i] & interiors[j]


def test_greedy_loops_count(eight_pipe):
    loops, hvec = greedy_loops(eight_pipe.mesh, eight_pipe.basis.base_vertex)
    assert len(loops) == 4
    assert hvec.shape == (eight_pipe.mesh.n_edges,)


def test_canonical_relabel():
    assert canonical_relabel(["c1", "c2", "c1^-1", "c2^-1"]) is not None
    assert canonical_relabel(["c1", "c1^-1", "c2", "c2^-1"]) is None


def test_basis_json_roundtrip(torus):
    basis = choose_base_vertex(torus)
    back = HomotopyBasis.from_json(basis.to_json())
    assert back.base_vertex == basis.base_vertex and back.labels == basis.labels
    assert all(np.array_equal(a, b) for a, b in zip(back.loops, basis.loops))


def test_transfer_cut_to_same_connectivity(torus):
    basis = choose_base_vertex(torus)
    moved = TriangleMesh(torus.vertices * 1.3, torus.faces)
    other = transfer_cut(basis, moved)
    assert slice_along_basis(moved, other).word == slice_along_basis(torus, basis).word


def test_transfer_cut_rejects_other_connectivity(torus):
    basis = choose_base_vertex(torus)
    with pytest.raises(TopologyError):
        transfer_cut(basis, make_synthetic("torus", resolution=16))
