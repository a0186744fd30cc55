"""Acceptance criteria 1-10, one test per criterion.

Each test records ``(ok, detail)`` in the session report; the terminal
summary prints one PASS/FAIL line per criterion.
"""
import json
import time

import numpy as np
import pytest

from coverreg.beltrami import BeltramiField, affine_parts, jacobian_determinant, reconstruct_map
from coverreg.cli import EXAMPLES, main
from coverreg.cover_solver import assemble_cotan, expand_values, solve_linear, solve_newton
from coverreg.covering import base_relation, hyperbolic_distance
from coverreg.mesh import make_synthetic
from coverreg.registration import RegistrationConfig, parameterize, register, sherman_morrison_step
from coverreg.uniformize import HYPERBOLIC

TORUS_BUMPS = [((0.5, 1.2), 0.12, 0.25), ((3.0, 4.0), 0.12, 0.25)]
EIGHT_BUMPS = [((-1.0, 1.0, 0.4), 0.12, 0.25), ((1.0, -1.0, 0.4), 0.12, 0.25)]


def record(report, key, ok, detail):
    report[key] = (bool(ok), detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def large():
    """Parameterized fixtures of 5k-20k vertices."""
    out = {}
    for name, kind, res, bumps in (("torus", "torus", 128, TORUS_BUMPS),
                                   ("genus2", "genus2_eight", 64, EIGHT_BUMPS)):
        mesh = make_synthetic(kind, bumps=bumps, resolution=res)
        out[name] = parameterize(mesh)
    return out


@pytest.fixture(scope="module")
def examples(tmp_path_factory):
    runs = {}
    for name in sorted(EXAMPLES):
        out = tmp_path_factory.mktemp(name)
        t0 = time.perf_counter()
        code = main(["example", name, "--out", str(out)])
        runs[name] = {"code": code, "dir": out, "time": time.perf_counter() - t0,
                      "manifest": json.loads((out / "manifest.json").read_text()) if code == 0 else None}
    return runs


def _trace(run, label):
    return np.loadtxt(run["dir"] / f"{label}_energy.csv", delimiter=",", skiprows=1, ndmin=2)


def _deficits(mesh, lengths, hyperbolic):
    L = lengths[mesh.face_edges]
    ang = np.zeros(L.shape)
    for k in range(3):
        a, b, c = L[:, k], L[:, (k + 1) % 3], L[:, (k + 2) % 3]
        if hyperbolic:
            cos = (np.cosh(b) * np.cosh(c) - np.cosh(a)) / (np.sinh(b) * np.sinh(c))
        else:
            cos = (b * b + c * c - a * a) / (2 * b * c)
        ang[:, k] = np.arccos(np.clip(cos, -1, 1))
    total = np.zeros(mesh.n_vertices)
    np.add.at(total, mesh.faces, ang)
    return 2 * np.pi - total


def test_criterion_1_ricci_flow(large, acceptance_report):
    parts, ok = [], True
    for name, P in large.items():
        m = P.metric
        hyp = P.domain.background == HYPERBOLIC
        dev = np.max(np.abs(_deficits(P.mesh, m.edge_lengths, hyp)))
        gb = max(abs(r) for _, r in m.history)
        t = P.timings["ricci_flow"]
        ok &= dev < 1e-8 and gb < 1e-9 and t < 60 and 5000 <= P.mesh.n_vertices <= 20000
        parts.append(f"{name} V={P.mesh.n_vertices} deficit={dev:.1e} GB={gb:.1e} t={t:.1f}s")
    record(acceptance_report, "1", ok, "; ".join(parts))


def test_criterion_2_layout(large, acceptance_report):
    parts, ok = [], True
    for name, P in large.items():
        mesh, sl, z = P.mesh, P.sliced, P.domain.layout
        hyp = P.domain.background == HYPERBOLIC
        index = {tuple(e): i for i, e in enumerate(np.sort(mesh.edges, axis=1).tolist())}
        a = np.concatenate([sl.faces[:, k] for k in range(3)])
        b = np.concatenate([sl.faces[:, (k + 1) % 3] for k in range(3)])
        oa, ob = np.minimum(sl.original[a], sl.original[b]), np.maximum(sl.original[a], sl.original[b])
        ref = P.metric.edge_lengths[[index[(int(x), int(y))] for x, y in zip(oa, ob)]]
        got = 2 * hyperbolic_distance(z[a], z[b]) if hyp else np.abs(z[a] - z[b])
        err = np.max(np.abs(got - ref) / ref)
        ok &= err < 1e-6
        msg = f"{name} edge rel err={err:.1e}"
        if hyp:
            r = np.max(np.abs(z))
            ok &= r < 1
            msg += f" max|z|={r:.4f}"
        parts.append(msg)
    record(acceptance_report, "2", ok, "; ".join(parts))


def test_criterion_3_generators(large, acceptance_report):
    parts, ok = [], True
    for name, P in large.items():
        z, sl = P.domain.layout, P.sliced
        end_err = 0.0
        for seg in sl.segments:
            if seg.inverse:
                continue
            m = P.generators[seg.name]
            dst = sl.segments[seg.twin].copies[::-1]
            for i in (0, -1):
                end_err = max(end_err, abs(complex(m(z[seg.copies[i]])) - z[dst[i]]))
        rel, word = base_relation(P.domain, P.generators)
        p = z[sl.base_vertex]
        ret = abs(complex(rel(p)) - p)
        ok &= end_err < 1e-8 and ret < 1e-4 and len(word) == 4 * P.generators.genus
        parts.append(f"{name} endpoint err={end_err:.1e} relation return={ret:.1e}")
    record(acceptance_report, "3", ok, "; ".join(parts))


def test_criterion_4_newton(large, acceptance_report):
    P = large["genus2"]
    b = P.sliced.base_vertex
    s = assemble_cotan(P.domain, P.generators, pinned={b: P.domain.layout[b]})
    _, info = solve_newton(s, P.domain.layout[:s.n], tol=1e-10, return_info=True)
    T = large["torus"]
    bt = T.sliced.base_vertex
    st = assemble_cotan(T.domain, T.generators, pinned={bt: T.domain.layout[bt]})
    zl = solve_linear(st)
    zn = solve_newton(st, np.full(st.n, T.domain.layout[bt]), tol=1e-12)
    diff = float(np.max(np.abs(zl - zn)))
    ok = info["residual"] < 1e-10 and info["iterations"] <= 5 and diff < 1e-10
    record(acceptance_report, "4", ok, f"genus-2 Newton {info['iterations']} iterations residual "
                                       f"{info['residual']:.1e}; torus linear vs Newton {diff:.1e}")


def test_criterion_5_sherman_morrison(acceptance_report):
    rng = np.random.default_rng(2024)
    n = 1000
    worst = 0.0
    for mu in (0.1, 1.0, 30.0):
        u = rng.normal(size=n) + 1j * rng.normal(size=n)
        v = rng.normal(size=n) + 1j * rng.normal(size=n)
        d1, d2 = rng.normal(size=n), rng.normal(size=n)
        x = sherman_morrison_step(d1, d2, u, v, mu)
        for i in range(n):
            S = np.array([[u[i].real, u[i].imag], [v[i].real, v[i].imag]])
            ref = np.linalg.solve(mu * mu * np.eye(2) + S.T @ S, S.T @ np.array([d1[i], d2[i]]))
            worst = max(worst, abs(x[i] - (ref[0] + 1j * ref[1])) / max(1.0, np.linalg.norm(ref)))
    record(acceptance_report, "5", worst < 1e-10, f"max deviation from normal equations {worst:.1e} on {n} vertices")


def _round_trip(res):
    P = parameterize(make_synthetic("torus", resolution=res))
    d, sl = P.domain, P.sliced
    z = d.layout
    t1, t2 = P.generators["a1"].vector, P.generators["b1"].vector
    # s = Re(beta z) changes by 0 along t1 and by 1 along t2, so f is deck equivariant
    beta = -1j * np.conj(t1) / (np.conj(t1) * t2).imag
    c = 0.25 / (np.pi * abs(beta))

    def f(w):
        return w + c * np.sin(2 * np.pi * (beta * w).real)

    zc = z[sl.faces].mean(axis=1)
    k = c * np.pi * np.cos(2 * np.pi * (beta * zc).real)
    mu = k * np.conj(beta) / (1 + k * beta)
    b = sl.base_vertex
    w = reconstruct_map(BeltramiField(mu, d), P.generators, {b: f(z[b])})
    W = expand_values(w, P.words, P.generators, sl.original)
    return float(np.max(np.abs(W - f(z)))), P


def test_criterion_6_beltrami(acceptance_report):
    errs, P = {}, None
    for res in (32, 64, 128):
        errs[res], P = _round_trip(res)
    z, faces = P.domain.layout, P.sliced.faces
    rng = np.random.default_rng(6)
    w = z + 0.1 * np.sin(3 * z.real) + 0.05j * np.cos(2 * z.imag) + 1e-3 * rng.normal(size=len(z))
    fz, fzb = affine_parts(z, w, faces)
    J = jacobian_determinant(z, w, faces)
    jac = float(np.max(np.abs(J - np.abs(fz) ** 2 * (1 - np.abs(fzb / fz) ** 2))))
    ok = errs[64] < 0.05 and errs[32] > errs[64] > errs[128] and jac < 1e-10
    record(acceptance_report, "6", ok, "round-trip Linf " + " ".join(f"{r}:{e:.2e}" for r, e in errs.items())
           + f"; Jacobian identity {jac:.1e}")


def test_criterion_7_monotone(examples, acceptance_report):
    windows = {"ex2_torus_bumps": (15, 45), "ex4_genus2_bumps": (10, 30)}
    parts, ok = [], True
    for name, (lo, hi) in windows.items():
        run = examples[name]
        assert run["code"] == 0
        tot = _trace(run, "with_matching")[:, 3]
        rise = float(np.max((tot[1:] - tot[:-1]) / np.abs(tot[:-1])))
        iters = len(tot) - 1
        ok &= rise <= 1e-8 and lo <= iters <= hi
        parts.append(f"{name} iterations={iters} (window {lo}-{hi}) max relative rise={rise:.1e}")
    record(acceptance_report, "7", ok, "; ".join(parts))


def test_criterion_8_bijectivity(examples, acceptance_report):
    parts, ok = [], True
    for name, run in examples.items():
        assert run["code"] == 0
        for label, r in run["manifest"]["results"].items():
            good = r["flipped_faces"] == 0 and r["max_abs_mu"] < 1 and r["max_periodicity_residual"] < 1e-6
            ok &= good
            if not good or label == "with_matching":
                parts.append(f"{name}/{label} flips={r['flipped_faces']} max|mu|={r['max_abs_mu']:.3f} "
                             f"periodicity={r['max_periodicity_residual']:.1e}")
    record(acceptance_report, "8", ok, "; ".join(parts))


def test_criterion_9_matching(examples, acceptance_report):
    parts, ok = [], True
    for name in ("ex2_torus_bumps", "ex4_genus2_bumps"):
        res = examples[name]["manifest"]["results"]
        w, wo = res["with_matching"]["final_mismatch"], res["without_matching"]["final_mismatch"]
        ok &= w < wo
        parts.append(f"{name} mismatch with={w:.4g} without={wo:.4g}")
    for kind, bumps in (("torus", TORUS_BUMPS), ("genus2_eight", EIGHT_BUMPS)):
        m = make_synthetic(kind, bumps=bumps, resolution=32)
        e0 = register(m, m, RegistrationConfig(max_iters=0)).energy_trace[0][2]
        ok &= e0 < 1e-8
        parts.append(f"identity {kind} mismatch={e0:.1e}")
    record(acceptance_report, "9", ok, "; ".join(parts))


def test_criterion_10_determinism(examples, tmp_path, acceptance_report):
    first = examples["ex2_torus_bumps"]["dir"]
    assert main(["example", "ex2_torus_bumps", "--out", str(tmp_path)]) == 0
    files = sorted(p.name for p in first.glob("*.csv"))
    same = [f for f in files if (first / f).read_bytes() == (tmp_path / f).read_bytes()]
    ok = len(files) > 0 and len(same) == len(files)
    total = sum(r["time"] for r in examples.values())
    record(acceptance_report, "10", ok, f"{len(same)}/{len(files)} CSVs bitwise identical across two runs; "
                                        f"example runs took {total:.0f} s")
