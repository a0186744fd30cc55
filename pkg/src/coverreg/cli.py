"""Command-line entry point: ``coverreg parameterize | register | example``.

Exit codes: 0 success, 2 input error, 3 numerical failure. Every output
goes under ``--out`` together with ``manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .mesh import MeshError, TriangleMesh, load_mesh, make_synthetic, save_mesh, torus_point
from .registration import (RegistrationConfig, RegistrationError, ensure_curvature_fields, parameterize,
                           parameterize_pair, register)

logger = logging.getLogger("coverreg")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    """Bad arguments or unreadable / unsuitable input meshes."""


# -- synthetic example pairs -------------------------------------------------

def intensity_blobs(mesh: TriangleMesh, centers, width=0.4):
    """Sum of Gaussian blobs in 3D distance, a smooth per-vertex intensity."""
    x = mesh.vertices
    out = np.zeros(mesh.n_vertices)
    for c in centers:
        out += np.exp(-np.sum((x - np.asarray(c, dtype=float)) ** 2, axis=1) / (2 * width * width))
    return out


_TORUS_SRC = [(0.5, 1.2), (3.0, 4.0)]
_TORUS_TGT = [(0.65, 1.5), (3.2, 4.2)]
_EIGHT_SRC = [(-1.0, 1.0, 0.4), (1.0, -1.0, 0.4)]
_EIGHT_TGT = [(-0.8, 1.05, 0.38), (1.2, -0.95, 0.38)]

EXAMPLES = {
    "ex1_torus_intensity": dict(kind="torus", feature="intensity", resolution=64),
    "ex2_torus_bumps": dict(kind="torus", feature="curvature", resolution=64),
    "ex3_genus2_intensity": dict(kind="genus2_eight", feature="intensity", resolution=48),
    "ex4_genus2_bumps": dict(kind="genus2_eight", feature="curvature", resolution=48),
}

# weights used by the example reproductions (the library defaults are alpha = beta = 1)
EXAMPLE_CONFIG = dict(alpha=10.0, beta=10.0, mu_penalty=30.0)


def example_pair(name, resolution=None):
    """Source and target meshes of a named example.

    Bump examples place two Gaussian bumps (height 0.12, width 0.25) at
    nearby but different locations; intensity examples keep the geometry
    and move two intensity blobs instead.
    """
    if name not in EXAMPLES:
        raise InputError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}")
    info = EXAMPLES[name]
    kind = info["kind"]
    res = resolution or info["resolution"]
    if kind == "torus":
        src = [torus_point(*c) for c in _TORUS_SRC]
        tgt = [torus_point(*c) for c in _TORUS_TGT]
    else:
        src, tgt = _EIGHT_SRC, _EIGHT_TGT
    if info["feature"] == "curvature":
        s = make_synthetic(kind, bumps=[(c, 0.12, 0.25) for c in src], resolution=res)
        t = make_synthetic(kind, bumps=[(c, 0.12, 0.25) for c in tgt], resolution=res)
    else:
        base = make_synthetic(kind, resolution=res)
        s = base.with_fields(intensity=intensity_blobs(base, src))
        t = base.with_fields(intensity=intensity_blobs(base, tgt))
    return ensure_curvature_fields(s), ensure_curvature_fields(t)


# -- helpers -----------------------------------------------------------------

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _gnuplot_script(path, trace_files):
    with open(path, "w") as fh:
        fh.write("set datafile separator ','\nset key autotitle columnhead\n")
        fh.write("set xlabel 'iteration'\nset ylabel 'energy'\n")
        plots = []
        for label, csv_path in trace_files:
            name = os.path.basename(csv_path)
            plots += [f"'{name}' using 1:2 with linespoints title '{label} harmonic'",
                      f"'{name}' using 1:3 with linespoints title '{label} mismatch'",
                      f"'{name}' using 1:4 with linespoints title '{label} total'"]
        fh.write("plot " + ", \\\n     ".join(plots) + "\n")


def _load(path):
    try:
        return load_mesh(path)
    except (OSError, MeshError) as exc:
        raise InputError(str(exc)) from exc


def _config_from_args(args, base: RegistrationConfig) -> RegistrationConfig:
    mapping = {"alpha": "alpha", "beta": "beta", "mu_penalty": "mu_penalty", "lam": "lam",
               "eps_clamp": "eps_clamp", "eps_stop": "eps_stop", "max_iters": "max_iters",
               "feature": "feature", "base_src": "base_src", "base_tgt": "base_tgt",
               "project_every": "project_every"}
    updates = {k: getattr(args, a) for a, k in mapping.items() if getattr(args, a, None) is not None}
    cfg = replace(base, **updates)
    try:
        return cfg.validate()
    except ValueError as exc:
        raise InputError(str(exc)) from exc


class _Manifest:
    def __init__(self, command, out, inputs, config=None):
        self.data = {"command": command, "inputs": inputs, "output_dir": os.path.abspath(out),
                     "config": config, "timings": {}, "outputs": [], "results": {},
                     "version": __version__}
        self.out = out

    def output(self, path):
        self.data["outputs"].append(os.path.relpath(path, self.out))
        return path

    def write(self):
        missing = [p for p in self.data["outputs"]
                   if not os.path.exists(os.path.join(self.out, p)) or os.path.getsize(os.path.join(self.out, p)) == 0]
        if missing:
            raise RuntimeError(f"manifest outputs missing or empty: {missing}")
        _write_json(os.path.join(self.out, "manifest.json"), self.data)


# -- commands ----------------------------------------------------------------

def cmd_parameterize(args):
    mesh = _load(args.mesh)
    os.makedirs(args.out, exist_ok=True)
    man = _Manifest("parameterize", args.out, {"mesh": os.path.abspath(args.mesh)},
                    {"base_vertex": args.base_src})
    t0 = time.perf_counter()
    P = parameterize(mesh, args.base_src)
    man.data["timings"] = dict(P.timings, total=time.perf_counter() - t0)
    P.domain.save_csv(man.output(os.path.join(args.out, "layout.csv")))
    with open(man.output(os.path.join(args.out, "generators.json")), "w") as fh:
        fh.write(P.generators.to_json() + "\n")
    with open(man.output(os.path.join(args.out, "ricci_flow.csv")), "w") as fh:
        fh.write("iter,energy\n")
        for i, e in enumerate(P.metric.energy):
            fh.write(f"{i},{float(e)!r}\n")
    with open(man.output(os.path.join(args.out, "basis.json")), "w") as fh:
        fh.write(P.basis.to_json() + "\n")
    sl = P.sliced
    man.data["results"] = {
        "genus": int(mesh.genus), "n_vertices": int(mesh.n_vertices), "n_sliced_vertices": int(sl.n_vertices),
        "boundary_word": " ".join(sl.word), "n_segments": len(sl.segments), "base_vertex": int(sl.base_vertex),
        "ricci_iterations": int(P.metric.iterations), "max_deficit": float(P.metric.max_deficit),
        "max_layout_error": float(P.domain.max_length_error()),
        "max_abs_z": float(np.max(np.abs(P.domain.layout))),
    }
    man.write()
    return man.data


def _write_registration(result, out, man, prefix=""):
    trace = man.output(os.path.join(out, f"{prefix}energy.csv"))
    result.save_trace_csv(trace)
    result.save_map_csv(man.output(os.path.join(out, f"{prefix}map.csv")))
    target = result.problem.target.mesh
    fields = {}
    for name in result.problem.field_names:
        fields[f"source_{name}"] = result.target_field(name)
    colored = target.with_fields(**fields)
    path = man.output(os.path.join(out, f"{prefix}target_transferred.ply"))
    save_mesh(colored, path)
    man.output(path + ".fields.csv")
    return trace


def _summary(result):
    tr = result.energy_trace
    return {"iterations": int(result.iterations), "flipped_faces": int(result.flipped),
            "max_abs_mu": float(result.max_mu), "initial_total": float(tr[0][3]), "final_total": float(tr[-1][3]),
            "initial_mismatch": float(tr[0][2]), "final_mismatch": float(tr[-1][2]),
            "max_periodicity_residual": float(max(result.state.periodicity)),
            "feature_error_initial": {n: float(v) for n, v in result.initial_feature_error.items()},
            "feature_error_final": {n: float(result.feature_error(n)) for n in result.problem.field_names}}


def cmd_register(args):
    source, target = _load(args.source), _load(args.target)
    if source.genus != target.genus:
        raise InputError(f"genus mismatch: source {source.genus}, target {target.genus}")
    cfg = _config_from_args(args, RegistrationConfig())
    os.makedirs(args.out, exist_ok=True)
    man = _Manifest("register", args.out, {"source": os.path.abspath(args.source),
                                          "target": os.path.abspath(args.target)}, cfg.to_dict())
    t0 = time.perf_counter()
    result = register(source, target, cfg)
    man.data["timings"] = dict(result.timings, total=time.perf_counter() - t0)
    trace = _write_registration(result, args.out, man)
    _gnuplot_script(man.output(os.path.join(args.out, "energy.gnuplot")), [("registration", trace)])
    man.data["results"] = _summary(result)
    man.write()
    return man.data


def cmd_example(args):
    np.random.seed(args.seed)
    base = RegistrationConfig(**EXAMPLE_CONFIG, feature=EXAMPLES.get(args.name, {}).get("feature", "curvature"))
    if base.feature == "intensity":
        base = replace(base, beta=0.0)
    cfg = _config_from_args(args, base)
    source, target = example_pair(args.name, args.resolution)
    os.makedirs(args.out, exist_ok=True)
    man = _Manifest("example", args.out, {"example": args.name, "resolution": args.resolution, "seed": args.seed},
                    cfg.to_dict())
    save_mesh(source, man.output(os.path.join(args.out, "source.ply")))
    man.output(os.path.join(args.out, "source.ply.fields.csv"))
    save_mesh(target, man.output(os.path.join(args.out, "target.ply")))
    man.output(os.path.join(args.out, "target.ply.fields.csv"))
    t0 = time.perf_counter()
    pair = parameterize_pair(source, target, cfg)
    man.data["timings"]["parameterize"] = time.perf_counter() - t0
    traces, results = [], {}
    plain = replace(cfg, alpha=0.0, beta=0.0)
    for label, c in (("with_matching", cfg), ("without_matching", plain)):
        t0 = time.perf_counter()
        result = register(source, target, c, pair=pair)
        man.data["timings"][label] = time.perf_counter() - t0
        traces.append((label, _write_registration(result, args.out, man, prefix=f"{label}_")))
        results[label] = _summary(result)
    _gnuplot_script(man.output(os.path.join(args.out, "energy.gnuplot")), traces)
    man.data["results"] = results
    man.write()
    return man.data


# -- argument parsing --------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--alpha", type=float, help="weight of the first feature (mean curvature or intensity)")
    p.add_argument("--beta", type=float, help="weight of the Gauss curvature feature")
    p.add_argument("--mu-penalty", dest="mu_penalty", type=float, help="coupling weight between g and h")
    p.add_argument("--lambda", dest="lam", type=float, help="Beltrami smoothing weight (per mean face area)")
    p.add_argument("--eps-clamp", dest="eps_clamp", type=float, help="keep |mu| <= 1 - eps")
    p.add_argument("--eps-stop", dest="eps_stop", type=float, help="relative energy-change stopping threshold")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--project-every", dest="project_every", type=int, help="bijectivity projection period")
    p.add_argument("--feature", choices=["curvature", "intensity", "both"])
    p.add_argument("--base-tgt", dest="base_tgt", type=int, help="target base vertex")


def build_parser():
    parser = argparse.ArgumentParser(prog="coverreg", description="High-genus surface registration on universal covers")
    parser.add_argument("--version", action="version", version=f"coverreg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parameterize", help="uniformize a mesh and lay out its fundamental domain")
    p.add_argument("mesh")
    p.add_argument("--base-src", dest="base_src", type=int, help="base vertex")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_parameterize)

    p = sub.add_parser("register", help="register a source mesh onto a target mesh")
    p.add_argument("source")
    p.add_argument("target")
    p.add_argument("--base-src", dest="base_src", type=int, help="source base vertex")
    _add_config_flags(p)
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("example", help="reproduce a synthetic example with and without feature matching")
    p.add_argument("name", choices=sorted(EXAMPLES))
    p.add_argument("--resolution", type=int)
    p.add_argument("--base-src", dest="base_src", type=int, help="source base vertex")
    _add_config_flags(p)
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(args.seed)
    try:
        args.func(args)
    except InputError as exc:
        print(f"coverreg: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RegistrationError as exc:
        print(f"coverreg: {exc}", file=sys.stderr)
        return EXIT_INPUT if exc.stage == "input" else EXIT_NUMERIC
    except (MeshError, RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"coverreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
