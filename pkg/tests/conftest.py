import time

import numpy as np
import pytest

from coverreg.mesh import TriangleMesh, make_synthetic
from coverreg.registration import parameterize

_START = time.perf_counter()
SUITE_BUDGET = 15 * 60.0


@pytest.fixture(scope="session")
def torus_pipe():
    return parameterize(make_synthetic("torus", resolution=32))


@pytest.fixture(scope="session")
def eight_pipe():
    return parameterize(make_synthetic("genus2_eight", resolution=32))


@pytest.fixture(scope="session")
def acceptance_report(request):
    report = {}
    request.config._acceptance_report = report
    return report


def icosphere(level=4, radius=1.0):
    """Subdivided icosahedron projected to a sphere."""
    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4), (11, 10, 2),
         (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9), (4, 9, 5), (2, 4, 11),
         (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(level):
        cache, new = {}, []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(radius * np.array(verts), np.array(faces))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    report = getattr(config, "_acceptance_report", None)
    elapsed = time.perf_counter() - _START
    if report is None:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(report, key=lambda k: (int(k.split(".")[0]), k)):
        ok, detail = report[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
    ok = elapsed < SUITE_BUDGET
    terminalreporter.write_line(f"criterion 10.runtime: {'PASS' if ok else 'FAIL'}  "
                                f"suite wall time {elapsed:.1f} s (budget {SUITE_BUDGET:.0f} s)")
