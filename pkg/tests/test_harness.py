import math

import numpy as np
import pytest

from incremin import harness
from incremin.errors import DimensionMismatch, NoConvergence
from incremin.gallery import (ExactSolution, counterexample_problem, locally_convex_problem,
                              pde_problem, quadratic_toy_problem)
from incremin.harness import (REPORT_HEADER, bifurcation_scan, classify_branch, compute_eoc,
                              run_convergence_study, sup_error)

# terminal branch of the counterexample per tau, pinned after the first verified run
GOLDEN_BRANCHES = {0.2: "branch-2", 0.1: "branch-1", 0.05: "branch-2",
                   0.02: "branch-1", 0.01: "branch-2", 0.005: "branch-2"}


def _const(c, T=1.0):
    return ExactSolution(lambda t: np.array([c]), (0.0, T), f"const{c}")


def test_eoc_arithmetic():
    eoc = compute_eoc([0.4, 0.2, 0.1], [4.0, 2.0, 1.0])
    assert eoc[0] is None
    assert eoc[1] == pytest.approx(1.0) and eoc[2] == pytest.approx(1.0)
    assert compute_eoc([0.2, 0.1], [4.0, 1.0])[1] == pytest.approx(2.0)
    assert compute_eoc([0.2, 0.1], [0.0, 1.0])[1] is None
    assert compute_eoc([0.2, 0.1], [math.nan, 1.0])[1] is None


def test_sup_error_basics():
    p = quadratic_toy_problem()
    a, b = _const(0.25), _const(-0.5)
    assert sup_error(a, b, p) == pytest.approx(0.75)
    assert sup_error(a, b, p) == sup_error(b, a, p)
    assert sup_error(a, a, p, "V") == 0.0
    with pytest.raises(ValueError):
        sup_error(a, b, p, "L2")
    with pytest.raises(DimensionMismatch):
        sup_error(a, b, pde_problem(4))


def test_sample_times_include_breakpoints():
    a = ExactSolution(lambda t: np.array([t]), (0, 1), "x", breakpoints=(0.3,))
    ts = harness.sample_times(a, _const(0.0), (0.0, 1.0))
    assert 0.3 in ts and ts[0] == 0.0 and ts[-1] == 1.0
    assert len(ts) == harness.N_UNIFORM + 1


def test_study_validates_taus():
    p = quadratic_toy_problem()
    for bad in ([], [0.1, 0.2], [0.1, 0.1]):
        with pytest.raises(ValueError):
            run_convergence_study(p, "local", bad, _const(0.0))
    with pytest.raises(ValueError):
        harness.run_scheme(p, "implicit", 0.1)


def test_single_tau_row():
    r = run_convergence_study(quadratic_toy_problem(ell=0.5), "local", [0.1], _const(0.0))
    assert len(r.rows) == 1 and r.rows[0].eoc is None
    assert r.rows[0].sup_error_Z == 0.0


def test_locally_convex_golden_error():
    p = locally_convex_problem()
    r = run_convergence_study(p, "local", [0.025, 0.0125], "analytic", (0.0, 1.9))
    assert r.errors[1] == pytest.approx(0.003120071014705239, rel=1e-9)
    assert r.eocs[1] == pytest.approx(1.0, abs=0.05)
    assert r.reference.startswith("analytic")


def test_self_reference_fallback():
    r = run_convergence_study(counterexample_problem(), "local", [0.1, 0.05], "self",
                              threads=1)
    assert r.reference == "self:tau_ref=0.003125"


def test_csv_byte_identical_without_timing(tmp_path):
    p = locally_convex_problem()
    paths = []
    for i, threads in enumerate((1, 3)):
        r = run_convergence_study(p, "local", [0.1, 0.05, 0.025], "analytic", timing=False,
                                  threads=threads)
        paths.append(tmp_path / f"r{i}.csv")
        r.write_csv(paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    lines = paths[0].read_text().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert lines[1].split(",")[3] == ""


def test_plot_csv(tmp_path):
    r = run_convergence_study(locally_convex_problem(), "local", [0.1, 0.05], "analytic")
    path = tmp_path / "plot.csv"
    r.write_plot_csv(path)
    rows = [line.split(",") for line in path.read_text().splitlines()]
    assert rows[0] == ["tau", "error", "slope1"]
    assert float(rows[2][2]) == pytest.approx(float(rows[1][1]) / 2)


def test_failed_row_is_reported(monkeypatch, tmp_path):
    real = harness.run_local

    def flaky(p, tau, opts=None):
        if tau < 0.06:
            raise NoConvergence("forced")
        return real(p, tau, opts)

    monkeypatch.setattr(harness, "run_local", flaky)
    r = run_convergence_study(locally_convex_problem(), "local", [0.1, 0.05], "analytic",
                              threads=1)
    assert r.rows[1].failed.startswith("NoConvergence")
    assert r.rows[1].eoc is None
    r.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[2].split(",")[1] == ""


def test_compare_schemes_csv(tmp_path):
    cmp = harness.compare_schemes(locally_convex_problem(), 0.05)
    cmp.write_csv(tmp_path / "c.csv")
    header, row = (tmp_path / "c.csv").read_text().splitlines()
    assert header.startswith("tau,local_sup_err_Z")
    assert float(row.split(",")[2]) == cmp.global_error


def test_classify_branch():
    assert classify_branch(-0.34) == "branch-1"
    assert classify_branch(0.79) == "branch-2"
    assert classify_branch(0.0) == "other"


def test_bifurcation_golden_map(tmp_path):
    entries = bifurcation_scan(counterexample_problem(), list(GOLDEN_BRANCHES))
    assert {e.tau: e.branch for e in entries} == GOLDEN_BRANCHES
    harness.write_branch_csv(entries, tmp_path / "b.csv")
    assert (tmp_path / "b.csv").read_text().startswith("tau,z_T,branch")
    with pytest.raises(ValueError):
        bifurcation_scan(pde_problem(4), [0.1])


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("RIS_THREADS", "2")
    assert harness.thread_count() == 2
    monkeypatch.delenv("RIS_THREADS")
    assert harness.thread_count() >= 1
