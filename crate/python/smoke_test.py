"""Smoke test for the stopsurf_py extension module.

Build the module first:

    cargo build --release -p stopsurf-py

then run either `python3 python/smoke_test.py` or `pytest python/smoke_test.py`.
Set STOPSURF_PY_LIB to point at a specific shared library.
"""

import importlib.util
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def _find_library():
    explicit = os.environ.get("STOPSURF_PY_LIB")
    if explicit:
        return Path(explicit)
    for profile in ("release", "debug"):
        for name in ("libstopsurf_py.so", "libstopsurf_py.dylib", "stopsurf_py.dll"):
            p = ROOT / "target" / profile / name
            if p.exists():
                return p
    sys.exit("stopsurf_py not built; run `cargo build --release -p stopsurf-py`")


def _import():
    lib = _find_library()
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    tmp = Path(tempfile.mkdtemp(prefix="stopsurf_py_"))
    target = tmp / f"stopsurf_py{suffix}"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("stopsurf_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


ss = _import()


def _put_solution():
    problem = ss.load(str(FIXTURES / "put.prob"))
    return problem, problem.solve(nt=41, nx=81)


def test_module_metadata():
    assert isinstance(ss.__version__, str)
    assert len(ss.CATALOG) == 16


def test_put_solve_matches_benchmark_roughly():
    problem, sol = _put_solution()
    assert sol.converged
    nt, nx, ny = sol.shape
    assert (nt, nx, ny) == (41, 81, 7)
    v = np.asarray(sol.value()).reshape(nt, nx, ny)
    x = np.asarray(sol.x)
    gain = np.maximum(100.0 - x, 0.0)
    assert np.all(v >= gain[None, :, None] - 1e-9)
    # Coarse grid: within 5% of the binomial reference 4.65556.
    assert abs(sol.value_at(0.0, 100.0, 0.5) - 4.65556) < 0.05 * 4.65556
    mask = np.asarray(sol.mask()).reshape(nt, nx, ny)
    # Far out of the money v and g both sit inside the activation band, so
    # only the region near the strike is informative.
    assert mask[0, x < 60].all() and not mask[0, (x > 100) & (x < 130)].any()


def test_put_check_and_boundary():
    problem, sol = _put_solution()
    report = sol.check(window=(0.0, 0.4, 60.0, 95.0, 0.34, 0.66))
    status = {item["id"]: item["status"] for item in report["items"]}
    assert status["A3.1.ii-beta2pos"] == "unverifiable"
    assert "fail" not in status.values()

    surface = sol.extract()
    b = np.asarray(surface["b"], dtype=object)
    finite = np.array([[isinstance(v, float) for v in row] for row in b])
    assert finite[0].all()
    assert all(60.0 <= v <= 100.0 for v in b[0])
    diag = sol.boundary_report()
    assert diag["continuity"]["t"]["violations"] == 0


def test_synthetic_catalog_passes():
    problem = ss.load(str(FIXTURES / "synthetic.prob"))
    sol = problem.solve()
    report = sol.check()
    assert not [i["id"] for i in report["items"] if i["status"] == "fail"]
    assert report["delta"] > 0.0


def test_simulation_is_seeded():
    _, sol = _put_solution()
    a = sol.simulate((0.0, 100.0, 0.5), n_paths=400, seed=3, lsm_degree=2)
    b = sol.simulate((0.0, 100.0, 0.5), n_paths=400, seed=3, lsm_degree=2)
    assert a == b
    assert abs(a["policy"]["mean"] - a["pde_value"]) < 4.0 * a["policy"]["std_err"] + 0.2


def test_errors_are_python_exceptions():
    try:
        ss.Problem.from_toml("horizon = 1.0\n[coefficients]\nalpha1 = \"x +\"\n")
    except ValueError:
        pass
    else:
        raise AssertionError("malformed problem accepted")
    _, sol = _put_solution()
    try:
        sol.simulate((0.0, 100.0, 0.5), n_paths=10)
    except ValueError:
        pass
    else:
        raise AssertionError("n_paths=10 accepted")


if __name__ == "__main__":
    tests = [(name, fn) for name, fn in sorted(globals().items()) if name.startswith("test_")]
    for name, fn in tests:
        fn()
        print(f"ok  {name}")
    print(f"{len(tests)} passed")
