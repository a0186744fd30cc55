"""Greedy homotopy basis, cut graphs and slicing into a fundamental domain."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components, dijkstra

from .mesh import MeshError, TriangleMesh

logger = logging.getLogger(__name__)


class TopologyError(MeshError):
    pass


@dataclass
class HomotopyBasis:
    """2g closed vertex paths through ``base_vertex`` labeled a1, b1, ..., ag, bg.

    ``canonical`` is False when the loops could not be made pairwise
    disjoint away from the base vertex; the labels are then c1, c2, ...
    and the cut is still a valid disk-producing cut graph.
    """

    base_vertex: int
    loops: list
    labels: list
    canonical: bool = True

    @property
    def genus(self):
        return len(self.loops) // 2

    def loop_lengths(self, mesh, lengths=None):
        lengths = mesh.edge_lengths if lengths is None else lengths
        out = []
        for loop in self.loops:
            he = [mesh.halfedge_lookup[(int(a), int(b))] for a, b in zip(loop[:-1], loop[1:])]
            out.append(float(np.sum(lengths[mesh.halfedge_edge[he]])))
        return out

    def cut_edges(self):
        cut = set()
        for loop in self.loops:
            for a, b in zip(loop[:-1], loop[1:]):
                cut.add((min(a, b), max(a, b)))
        return cut

    def to_json(self):
        return json.dumps({"base_vertex": int(self.base_vertex),
                           "canonical": bool(self.canonical),
                           "loops": [{"label": lab, "path": [int(v) for v in loop]}
                                     for lab, loop in zip(self.labels, self.loops)]}, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["base_vertex"], [np.array(l["path"]) for l in d["loops"]],
                   [l["label"] for l in d["loops"]], d["canonical"])


@dataclass
class Segment:
    label: str              # e.g. "a1" or "a1^-1"
    copies: np.ndarray      # sliced-vertex ids in boundary order
    twin: int = -1

    @property
    def inverse(self):
        return self.label.endswith("^-1")

    @property
    def name(self):
        return self.label[:-3] if self.inverse else self.label


@dataclass
class SlicedMesh:
    """Disk-topology mesh obtained by cutting along a cut graph.

    Sliced vertices ``0..n-1`` are the representatives of the original
    vertices; extra copies of cut vertices are appended after them.
    """

    faces: np.ndarray
    original: np.ndarray
    boundary: np.ndarray
    segments: list
    base_vertex: int
    genus: int
    cut_edges: set = field(default_factory=set)

    @property
    def n_vertices(self):
        return len(self.original)

    @property
    def n_original(self):
        return int(self.original.max()) + 1

    @property
    def word(self):
        return [s.label for s in self.segments]

    @property
    def pair_names(self):
        """Pair names in first-appearance order along the boundary."""
        seen = []
        for s in self.segments:
            if s.name not in seen:
                seen.append(s.name)
        return seen

    def segment(self, label):
        for s in self.segments:
            if s.label == label:
                return s
        raise KeyError(label)

    def euler_characteristic(self):
        he = np.stack([self.faces, np.roll(self.faces, -1, axis=1)], axis=2).reshape(-1, 2)
        n_edges = len(np.unique(np.sort(he, axis=1), axis=0))
        return self.n_vertices - n_edges + len(self.faces)

    def reglue(self):
        """Faces expressed in original vertex ids (inverse of slicing)."""
        return self.original[self.faces]

    def is_canonical(self):
        return canonical_relabel([s.label for s in self.segments]) is not None


# -- greedy basis --------------------------------------------------------

def _graph(mesh, lengths, blocked=None):
    e = mesh.edges
    w = np.asarray(lengths, dtype=float)
    keep = np.ones(len(e), dtype=bool)
    if blocked is not None and len(blocked):
        b = np.zeros(mesh.n_vertices, dtype=bool)
        b[list(blocked)] = True
        keep = ~(b[e[:, 0]] | b[e[:, 1]])
    n = mesh.n_vertices
    g = sparse.coo_matrix((w[keep], (e[keep, 0], e[keep, 1])), shape=(n, n))
    return (g + g.T).tocsr()


def _path(pred, target):
    path = [int(target)]
    while pred[path[-1]] >= 0:
        path.append(int(pred[path[-1]]))
    return path[::-1]


def greedy_loops(mesh: TriangleMesh, base_vertex: int, lengths=None):
    """Greedy system of loops through ``base_vertex`` from a tree-cotree decomposition.

    Returns ``(loops, hvec)``: the 2g loops sorted by length, each being
    the shortest-path-tree path to u, a leftover edge (u, v) and the tree
    path back; and per-edge Z2 homology vectors (int bitmasks) in the
    basis of those loops, from the tree-cotree decomposition.
    """
    lengths = mesh.edge_lengths if lengths is None else np.asarray(lengths)
    if np.any(lengths <= 0):
        raise TopologyError("edge lengths must be positive")
    if mesh.n_components != 1:
        raise TopologyError("mesh is disconnected")
    g = mesh.genus
    if g < 1:
        raise TopologyError("genus must be >= 1 for a homotopy basis")
    dist, pred = dijkstra(_graph(mesh, lengths), indices=base_vertex, return_predecessors=True)
    pred = np.where(pred < 0, -1, pred)
    e = mesh.edges
    tree = np.zeros(len(e), dtype=bool)
    lookup = mesh.halfedge_lookup
    for a in np.flatnonzero(pred >= 0):
        tree[mesh.halfedge_edge[lookup[(int(a), int(pred[a]))]]] = True
    sigma = dist[e[:, 0]] + lengths + dist[e[:, 1]]
    face_of_he = np.arange(3 * mesh.n_faces) // 3
    side = np.full((len(e), 2), -1)
    filled = np.zeros(len(e), dtype=int)
    for h, ed in enumerate(mesh.halfedge_edge):
        side[ed, filled[ed]] = face_of_he[h]
        filled[ed] += 1
    # maximum spanning tree of the dual graph over non-tree edges
    parent = list(range(mesh.n_faces))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    cand = np.flatnonzero(~tree)
    order = cand[np.lexsort((cand, -sigma[cand]))]
    leftover, cotree = [], []
    for ed in order:
        ra, rb = find(side[ed, 0]), find(side[ed, 1])
        if ra == rb:
            leftover.append(int(ed))
        else:
            parent[ra] = rb
            cotree.append(int(ed))
    if len(leftover) != 2 * g:
        raise TopologyError(f"greedy construction found {len(leftover)} loops, expected {2 * g}")
    leftover.sort(key=lambda ed: (sigma[ed], ed))
    hvec = np.zeros(len(e), dtype=np.int64)
    for k, ed in enumerate(leftover):
        hvec[ed] = 1 << k
    # cotree edge values from face relations, peeling dual-tree leaves
    fe = mesh.face_edges
    unknown = np.zeros(len(e), dtype=bool)
    unknown[cotree] = True
    n_unknown = unknown[fe].sum(axis=1)
    stack = list(np.flatnonzero(n_unknown == 1))
    while stack:
        f = stack.pop()
        if n_unknown[f] != 1:
            continue
        eds = fe[f]
        (target,) = [x for x in eds if unknown[x]]
        hvec[target] = np.bitwise_xor.reduce(hvec[[x for x in eds if x != target]])
        unknown[target] = False
        for ff in side[target]:
            n_unknown[ff] -= 1
            if n_unknown[ff] == 1:
                stack.append(ff)
    if unknown.any():
        raise TopologyError("cotree homology propagation failed")
    loops = [np.array(_path(pred, e[ed, 0]) + _path(pred, e[ed, 1])[::-1]) for ed in leftover]
    return loops, hvec


def _rotation(mesh, v):
    """Neighbors of ``v`` in counterclockwise order."""
    faces = mesh.faces
    lookup = mesh.halfedge_lookup
    f0 = int(np.argwhere(faces == v)[0][0])
    out = []
    f = f0
    while True:
        k = int(np.flatnonzero(faces[f] == v)[0])
        out.append(int(faces[f, (k + 1) % 3]))
        f = lookup[(v, int(faces[f, (k + 2) % 3]))] // 3
        if f == f0:
            return out


def intersection_parity(mesh, alpha, beta):
    """Z2 algebraic intersection number of two closed edge paths.

    ``alpha`` is pushed off to its left; the result is the parity of the
    number of ``beta`` edges the push-off crosses.
    """
    count = {}
    for a, b in zip(beta[:-1], beta[1:]):
        key = (min(a, b), max(a, b))
        count[key] = count.get(key, 0) + 1
    total = 0
    m = len(alpha) - 1
    for i in range(m):
        y = int(alpha[i])
        x = int(alpha[i - 1]) if i > 0 else int(alpha[m - 1])
        z = int(alpha[i + 1])
        rot = _rotation(mesh, y)
        iz = rot.index(z)
        j = (iz + 1) % len(rot)
        while rot[j] != x:
            total += count.get((min(y, rot[j]), max(y, rot[j])), 0)
            j = (j + 1) % len(rot)
    return total % 2


def _class_loops(mesh, lengths, hvec, base, n_bits, blocked, out_nbrs=None, in_nbrs=None):
    """Shortest simple loops through ``base`` in every Z2 class.

    One Dijkstra on the 2^n_bits-sheeted homology cover, with the base
    vertex acting only as a source on sheet 0 and as a sink on the other
    sheets; vertices in ``blocked`` are removed. ``out_nbrs`` and
    ``in_nbrs`` restrict the first and last edge of the loop. Returns a dict mapping a
    class bitmask to ``(length, loop)`` for classes whose shortest loop
    is simple.
    """
    n = mesh.n_vertices
    e = mesh.edges
    w = np.asarray(lengths, dtype=float)
    bad = np.zeros(n, dtype=bool)
    bad[list(blocked)] = True
    bad[base] = False
    keep = ~(bad[e[:, 0]] | bad[e[:, 1]])
    a, b, h, w = e[keep, 0], e[keep, 1], hvec[keep], w[keep]
    at_base = (a == base) | (b == base)
    size = 1 << n_bits
    rows, cols, vals = [], [], []
    ia, ib, ih, iw = a[~at_base], b[~at_base], h[~at_base], w[~at_base]
    for s in range(size):
        rows += [ia + s * n, ib + (s ^ ih) * n]
        cols += [ib + (s ^ ih) * n, ia + s * n]
        vals += [iw, iw]
    other = np.where(a[at_base] == base, b[at_base], a[at_base])
    hb, wb = h[at_base], w[at_base]
    src = np.ones(len(other), dtype=bool) if out_nbrs is None else np.isin(other, list(out_nbrs))
    dst = np.ones(len(other), dtype=bool) if in_nbrs is None else np.isin(other, list(in_nbrs))
    rows.append(np.full(int(src.sum()), base))
    cols.append(other[src] + hb[src] * n)
    vals.append(wb[src])
    for c in range(1, size):
        rows.append(other[dst] + (c ^ hb[dst]) * n)
        cols.append(np.full(int(dst.sum()), base + c * n))
        vals.append(wb[dst])
    graph = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(size * n, size * n))
    d, pr = dijkstra(graph, indices=base, return_predecessors=True)
    pr = np.where(pr < 0, -1, pr)
    out = {}
    for c in range(1, size):
        target = base + c * n
        if not np.isfinite(d[target]):
            continue
        loop = np.array(_path(pr, target)) % n
        if len(set(loop[:-1].tolist())) == len(loop) - 1:
            out[c] = (float(d[target]), loop)
    return out


def _arcs(rotation, ends):
    """Open arcs of the cyclic neighbor list between the given end vertices."""
    if not ends:
        return [list(rotation)]
    idx = sorted(rotation.index(v) for v in ends)
    m = len(rotation)
    arcs = []
    for i, j in zip(idx, idx[1:] + [idx[0] + m]):
        arc = [rotation[k % m] for k in range(i + 1, j)]
        if arc:
            arcs.append(arc)
    return arcs


def _search_symplectic(mesh, lengths, hvec, base, n_bits, form, placed, blocked, state, width=3):
    """Depth-first search for disjoint simple loop pairs forming a symplectic basis.

    Each new pair (x, y) starts in a single arc of the base vertex fan
    left free by earlier loops; x leaves and returns inside that arc and
    y crosses x at the base vertex, so handles never interleave there.
    """
    if 2 * len(placed) == n_bits:
        state["tries"] += 1
        loops = [lp for pair in placed for lp in pair[1]]
        return _canonical_basis(mesh, base, loops)
    if state["tries"] >= state["max_tries"]:
        return None
    used = [c for pair in placed for c in pair[0]]
    rotation = state["rotation"]
    ends = [int(v) for pair in placed for lp in pair[1] for v in (lp[1], lp[-2])]

    def admissible(found):
        return sorted((v[0], c) for c, v in found.items() if all(not form(c, u) for u in used))

    options = []
    for arc in _arcs(rotation, ends):
        found = _class_loops(mesh, lengths, hvec, base, n_bits, blocked, arc, arc)
        options += [(ln, x, arc, found[x][1]) for ln, x in admissible(found)]
    options.sort(key=lambda t: (t[0], t[1]))
    for _, x, arc, lx in options[:width]:
        i, j = sorted((arc.index(int(lx[1])), arc.index(int(lx[-2]))))
        mid, outer = arc[i + 1:j], arc[:i] + arc[j + 1:]
        if not mid or not outer:
            continue
        inner = blocked | set(lx[1:-1].tolist())
        partner = _class_loops(mesh, lengths, hvec, base, n_bits, inner, mid, outer)
        ys = [y for _, y in admissible(partner) if form(x, y)]
        for y in ys[:2]:
            ly = partner[y][1]
            more = inner | set(ly[1:-1].tolist())
            res = _search_symplectic(mesh, lengths, hvec, base, n_bits, form,
                                     placed + [((x, y), (lx, ly))], more, state, width)
            if res is not None:
                return res
            if state["tries"] >= state["max_tries"]:
                return None
    return None


def canonical_relabel(word):
    """Relabel a cyclic boundary word into a1 b1 a1^-1 b1^-1 ... blocks.

    ``word`` is a list of labels "x" / "x^-1". Returns a dict mapping old
    pair names to ``(new_name, flipped)`` or None if no rotation of the
    word has canonical form.
    """
    n = len(word)
    if n % 4:
        return None
    parsed = [(w[:-3], True) if w.endswith("^-1") else (w, False) for w in word]
    for r in range(n):
        rot = parsed[r:] + parsed[:r]
        mapping = {}
        ok = True
        for blk in range(n // 4):
            (x, ix), (y, iy), (x2, ix2), (y2, iy2) = rot[4 * blk:4 * blk + 4]
            if x == y or x2 != x or y2 != y or ix2 == ix or iy2 == iy or x in mapping or y in mapping:
                ok = False
                break
            mapping[x] = (f"a{blk + 1}", ix)
            mapping[y] = (f"b{blk + 1}", iy)
        if ok:
            return mapping
    return None


def greedy_homotopy_basis(mesh: TriangleMesh, base_vertex: int, lengths=None) -> HomotopyBasis:
    """Canonical homotopy basis through ``base_vertex`` seeded by the greedy system.

    The greedy loops give a homology basis and its Z2 intersection form;
    a symplectic basis is extracted and each class is realized by the
    shortest simple loop through the base vertex that avoids the loops
    already placed. When that fails, or the cut polygon is not in
    canonical form, the raw greedy system is returned with
    ``canonical=False`` (it still cuts the surface into a disk).
    """
    lengths = mesh.edge_lengths if lengths is None else np.asarray(lengths)
    loops, hvec = greedy_loops(mesh, base_vertex, lengths)
    n_bits = len(loops)
    imat = [[intersection_parity(mesh, a, b) for b in loops] for a in loops]

    def form(x, y):
        t = 0
        for i in range(n_bits):
            if x >> i & 1:
                for j in range(n_bits):
                    if y >> j & 1:
                        t ^= imat[i][j]
        return t

    state = {"tries": 0, "max_tries": 8, "rotation": _rotation(mesh, base_vertex)}
    basis = _search_symplectic(mesh, lengths, hvec, base_vertex, n_bits, form, [], set(), state)
    if basis is not None:
        return basis
    logger.debug("base vertex %d: no canonical basis found; using the raw greedy cut graph", base_vertex)
    return HomotopyBasis(base_vertex, loops, [f"c{i + 1}" for i in range(len(loops))], False)


def _canonical_basis(mesh, base_vertex, loops):
    provisional = HomotopyBasis(base_vertex, loops, [f"c{i + 1}" for i in range(len(loops))], False)
    try:
        sliced = slice_along_basis(mesh, provisional)
    except TopologyError:
        return None
    mapping = canonical_relabel(sliced.word)
    if mapping is None:
        return None
    new_loops, new_labels = [], []
    for lab, loop in zip(provisional.labels, loops):
        name, flipped = mapping[lab]
        new_loops.append(loop[::-1] if flipped else loop)
        new_labels.append(name)
    order = sorted(range(len(new_labels)), key=lambda i: (int(new_labels[i][1:]), new_labels[i][0]))
    return HomotopyBasis(base_vertex, [new_loops[i] for i in order], [new_labels[i] for i in order], True)


def farthest_point_samples(mesh, k, lengths=None, start=0, mask=None):
    lengths = mesh.edge_lengths if lengths is None else lengths
    graph = _graph(mesh, lengths)
    allowed = np.ones(mesh.n_vertices, dtype=bool) if mask is None else mask
    if not allowed[start]:
        start = int(np.flatnonzero(allowed)[0])
    picks = [start]
    dmin = dijkstra(graph, indices=start)
    for _ in range(k - 1):
        cand = np.where(allowed, dmin, -1)
        nxt = int(np.argmax(cand))
        if cand[nxt] <= 0:
            break
        picks.append(nxt)
        dmin = np.minimum(dmin, dijkstra(graph, indices=nxt))
    return picks


def choose_base_vertex(mesh: TriangleMesh, lengths=None, n_candidates=8, max_extra=40):
    """Pick the base vertex with the shortest canonical greedy basis.

    Candidates are farthest-point samples among vertices with valence
    above 4g (2g loops meeting only at the base vertex use 4g distinct
    edges there, and slack in the fan makes disjoint loops far easier to
    find). If none of them admits a canonical basis, further high-valence
    vertices are tried until one does; failing that, the shortest
    non-canonical basis is returned.
    """
    lengths = mesh.edge_lengths if lengths is None else lengths
    g = mesh.genus
    valence = np.asarray(mesh.adjacency.sum(axis=1)).ravel()
    mask = valence > 4 * g
    if not mask.any():
        mask = valence >= min(4 * g, valence.max())
    best = None
    tried = set()

    def consider(cand):
        nonlocal best
        tried.add(cand)
        try:
            basis = greedy_homotopy_basis(mesh, cand, lengths)
        except TopologyError:
            return
        key = (not basis.canonical, sum(basis.loop_lengths(mesh, lengths)), cand)
        if best is None or key < best[0]:
            best = (key, basis)

    for cand in farthest_point_samples(mesh, n_candidates, lengths, start=int(np.argmax(mask)), mask=mask):
        consider(int(cand))
    if best is None or not best[1].canonical:
        extra = [int(v) for v in np.argsort(-valence, kind="stable") if valence[v] >= 4 * g and int(v) not in tried]
        for cand in extra[:max_extra]:
            consider(cand)
            if best[1].canonical:
                break
    if best is None:
        raise TopologyError("no valid base vertex found")
    if not best[1].canonical:
        logger.warning("no canonical homotopy basis found; falling back to a non-canonical cut")
    return best[1]


# -- slicing ---------------------------------------------------------------

def _core(cut, n):
    """Iteratively strip degree-1 vertices from the cut graph."""
    cut = set(cut)
    deg = np.zeros(n, dtype=int)
    nbrs = {}
    for a, b in cut:
        deg[a] += 1
        deg[b] += 1
        nbrs.setdefault(a, set()).add(b)
        nbrs.setdefault(b, set()).add(a)
    stack = [v for v in nbrs if deg[v] == 1]
    while stack:
        v = stack.pop()
        if deg[v] != 1:
            continue
        (w,) = [x for x in nbrs[v] if (min(v, x), max(v, x)) in cut]
        cut.discard((min(v, w), max(v, w)))
        deg[v] -= 1
        deg[w] -= 1
        if deg[w] == 1:
            stack.append(w)
    return cut, deg


def slice_along_basis(mesh: TriangleMesh, basis: HomotopyBasis) -> SlicedMesh:
    """Cut ``mesh`` open along the basis loops into a topological disk."""
    n = mesh.n_vertices
    lookup = mesh.halfedge_lookup
    for loop in basis.loops:
        for a, b in zip(loop[:-1], loop[1:]):
            if (int(a), int(b)) not in lookup:
                raise TopologyError(f"basis loop {basis.labels} uses non-edge ({a}, {b})")
    cut, deg = _core(basis.cut_edges(), n)
    if not cut:
        raise TopologyError("empty cut graph")
    faces = mesh.faces
    corner = np.array(faces)  # corner copy ids, filled below
    he_face = lambda h: h // 3  # noqa: E731
    # corner position of v in face f
    extra = []
    cut_vertices = np.flatnonzero(deg > 0)
    vertex_faces = {}
    for f, tri in enumerate(faces):
        for k, v in enumerate(tri):
            if deg[v] > 0:
                vertex_faces.setdefault(int(v), []).append((f, k))
    next_id = n
    for v in cut_vertices:
        v = int(v)
        fan = vertex_faces[v]
        pos = {f: k for f, k in fan}
        # rotate around v: face f -> face across edge (v, f[k+2])
        order, crossing = [], []
        f0 = fan[0][0]
        f = f0
        while True:
            k = pos[f]
            w = int(faces[f, (k + 2) % 3])
            order.append(f)
            crossing.append((min(v, w), max(v, w)) in cut)
            f = he_face(lookup[(v, w)])
            if f == f0:
                break
        if len(order) != len(fan):
            raise TopologyError(f"vertex {v} is not a manifold vertex")
        # start right after a cut crossing
        start = crossing.index(True) + 1
        m = len(order)
        copy = v
        for i in range(m):
            f = order[(start + i) % m]
            corner[f, pos[f]] = copy
            if crossing[(start + i) % m] and i < m - 1:
                copy = next_id
                extra.append(v)
                next_id += 1
    original = np.concatenate([np.arange(n), np.array(extra, dtype=int)])
    # boundary halfedges: no twin in the sliced connectivity
    he = np.stack([corner, np.roll(corner, -1, axis=1)], axis=2).reshape(-1, 2)
    keys = set(map(tuple, he.tolist()))
    nxt = {}
    for a, b in he.tolist():
        if (b, a) not in keys:
            if a in nxt:
                raise TopologyError("cut mesh boundary is not a single simple loop")
            nxt[a] = b
    if not nxt:
        raise TopologyError("cut produced no boundary")
    # start the boundary walk at a copy of a branch vertex
    branch = deg >= 3
    starts = sorted(c for c in nxt if branch[original[c]])
    if not starts:
        raise TopologyError("cut graph has no branch vertex")
    pref = [c for c in starts if original[c] == basis.base_vertex]
    s0 = pref[0] if pref else starts[0]
    boundary = [s0]
    while True:
        c = nxt[boundary[-1]]
        if c == s0:
            break
        boundary.append(c)
        if len(boundary) > len(nxt):
            raise TopologyError("boundary walk did not close")
    if len(boundary) != len(nxt):
        raise TopologyError("cut mesh has more than one boundary loop")
    boundary = np.array(boundary)
    # split into segments at branch copies
    cuts_at = [i for i, c in enumerate(boundary) if branch[original[c]]]
    segs = []
    for j, i0 in enumerate(cuts_at):
        i1 = cuts_at[(j + 1) % len(cuts_at)]
        idx = list(range(i0, i1 + 1)) if i1 > i0 else list(range(i0, len(boundary))) + list(range(0, i1 + 1))
        segs.append(boundary[idx])
    # pair by reversed original paths
    by_end = {}
    for j, s in enumerate(segs):
        o = original[s]
        by_end[(int(o[-2]), int(o[-1]))] = j
    twins = []
    for j, s in enumerate(segs):
        o = original[s]
        t = by_end.get((int(o[1]), int(o[0])))
        if t is None or t == j or not np.array_equal(original[segs[t]][::-1], o):
            raise TopologyError("boundary segment without a matching twin")
        twins.append(t)
    # labels: match basis loops when the segment is a whole loop, else c#
    loop_keys = {}
    for lab, loop in zip(basis.labels, basis.loops):
        loop_keys[tuple(int(x) for x in loop)] = lab
    segments = []
    counter = 0
    names = {}
    for j, s in enumerate(segs):
        o = tuple(int(x) for x in original[s])
        if o in loop_keys:
            label = loop_keys[o]
        elif o[::-1] in loop_keys:
            label = loop_keys[o[::-1]] + "^-1"
        elif twins[j] in names:
            label = names[twins[j]] + "^-1"
        else:
            counter += 1
            label = f"c{counter}"
            while label in basis.labels:
                counter += 1
                label = f"c{counter}"
            names[j] = label
        segments.append(Segment(label, np.asarray(s), twins[j]))
    # a pair labeled from loops may have both sides named; make them consistent
    for seg in segments:
        tw = segments[seg.twin]
        if seg.name != tw.name or seg.inverse == tw.inverse:
            raise TopologyError("inconsistent segment labels")
    # rotate so that the word starts with a1 when the basis is labeled
    first = next((k for k, seg in enumerate(segments) if seg.label == "a1"), 0)
    if first:
        m = len(segments)
        segments = [Segment(sg.label, sg.copies, (sg.twin - first) % m) for sg in segments[first:] + segments[:first]]
        start = int(np.flatnonzero(boundary == segments[0].copies[0])[0])
        boundary = np.roll(boundary, -start)
    sliced = SlicedMesh(corner, original, boundary, segments, int(basis.base_vertex), mesh.genus, cut)
    if sliced.euler_characteristic() != 1:
        raise TopologyError(f"cut mesh has Euler characteristic {sliced.euler_characteristic()}, expected 1")
    comp = connected_components(_face_graph(corner, sliced.n_vertices), directed=False)[0]
    if comp != 1:
        raise TopologyError("cut mesh is disconnected")
    return sliced


def _face_graph(faces, n):
    he = np.stack([faces, np.roll(faces, -1, axis=1)], axis=2).reshape(-1, 2)
    g = sparse.coo_matrix((np.ones(len(he)), (he[:, 0], he[:, 1])), shape=(n, n))
    return g.tocsr()


def transfer_cut(basis: HomotopyBasis, mesh: TriangleMesh) -> HomotopyBasis:
    """Reuse a basis on a mesh with identical connectivity."""
    for loop in basis.loops:
        for a, b in zip(loop[:-1], loop[1:]):
            if (int(a), int(b)) not in mesh.halfedge_lookup:
                raise TopologyError("basis does not fit the target connectivity")
    return HomotopyBasis(basis.base_vertex, [np.array(l) for l in basis.loops], list(basis.labels), basis.canonical)
