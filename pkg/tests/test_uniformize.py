import numpy as np
import pytest

from coverreg.mesh import TriangleMesh, make_synthetic, torus_grid
from coverreg.registration import parameterize
from coverreg.uniformize import EUCLIDEAN, FlowError, face_angles, ricci_flow, vertex_deficits


def flat_torus(n=12):
    """Torus connectivity with the edge lengths of the unit-square lattice."""
    x, f = torus_grid(n, n)
    mesh = TriangleMesh(x, f)
    grid = np.array([(i, j) for i in range(n) for j in range(n)], float) / n
    d = grid[mesh.edges[:, 1]] - grid[mesh.edges[:, 0]]
    d -= np.round(d)
    return mesh, grid, np.linalg.norm(d, axis=1)


def cosine_law_deficits(mesh, lengths):
    """Independent deficit evaluation from edge lengths."""
    L = lengths[mesh.face_edges]
    ang = np.zeros(L.shape)
    for k in range(3):
        a, b, c = L[:, k], L[:, (k + 1) % 3], L[:, (k + 2) % 3]
        ang[:, k] = np.arccos((b * b + c * c - a * a) / (2 * b * c))
    total = np.zeros(mesh.n_vertices)
    np.add.at(total, mesh.faces, ang)
    return 2 * np.pi - total


def test_flat_lattice_is_fixed_point():
    mesh, _, lengths = flat_torus()
    metric = ricci_flow(mesh, lengths=lengths)
    assert metric.iterations <= 1
    assert metric.max_deficit < 1e-10


def test_bumped_torus_flow():
    mesh = make_synthetic("torus", bumps=[((0.5, 1.2), 0.12, 0.25), ((3.0, 4.0), 0.12, 0.25)], resolution=48)
    metric = ricci_flow(mesh)
    assert np.max(np.abs(cosine_law_deficits(mesh, metric.edge_lengths))) < 1e-8
    assert all(abs(gb) < 1e-9 for _, gb in metric.history)
    assert np.all(np.diff(metric.energy) <= 1e-12)


def test_eight_flow(eight_pipe):
    mesh, metric = eight_pipe.mesh, eight_pipe.metric
    # Euclidean deficits of the embedding sum to 2 pi chi
    ang = face_angles(mesh.edge_lengths[mesh.face_edges], EUCLIDEAN)
    assert abs(vertex_deficits(mesh, ang).sum() - 2 * np.pi * (-2)) < 1e-9
    assert metric.max_deficit < 1e-8
    assert all(abs(gb) < 1e-9 for _, gb in metric.history)


def test_flow_rejects_wrong_target(eight_pipe):
    with pytest.raises(FlowError):
        ricci_flow(eight_pipe.mesh, target="flat")
    with pytest.raises(ValueError):
        ricci_flow(eight_pipe.mesh, target="spherical")


def test_unit_square_layout_congruent():
    mesh, grid, lengths = flat_torus()
    P = parameterize(mesh, lengths=lengths)
    z, sl = P.domain.layout, P.sliced
    g = grid[:, 0] + 1j * grid[:, 1]
    # edge vectors of the layout are a rotation of the lattice edge vectors
    a, b = sl.faces[:, 0], sl.faces[:, 1]
    ref = g[sl.original[b]] - g[sl.original[a]]
    ref = ref.real - np.round(ref.real) + 1j * (ref.imag - np.round(ref.imag))
    rot = (z[b[0]] - z[a[0]]) / ref[0]
    assert abs(abs(rot) - 1) < 1e-6
    assert np.max(np.abs(z[b] - z[a] - rot * ref)) < 1e-6
    t = [P.generators[k].vector for k in ("a1", "b1")]
    assert abs(abs(t[0]) - 1) < 1e-6 and abs(abs(t[1]) - 1) < 1e-6
    assert abs((np.conj(t[0]) * t[1]).real) < 1e-6


def test_layout_isometry(torus_pipe, eight_pipe):
    assert torus_pipe.domain.max_length_error() < 1e-6
    assert eight_pipe.domain.max_length_error() < 1e-6


def test_genus2_layout_in_disk(eight_pipe):
    assert np.max(np.abs(eight_pipe.domain.layout)) < 1
    assert len(eight_pipe.sliced.segments) == 8
    labels = eight_pipe.domain.boundary_segment_labels()
    assert {lab for lab in labels if lab} == {s.label for s in eight_pipe.sliced.segments}


def test_layout_csv(tmp_path, torus_pipe):
    path = tmp_path / "layout.csv"
    torus_pipe.domain.save_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "vertex_id,original_id,x,y,segment"
    assert len(rows) == torus_pipe.sliced.n_vertices + 1
