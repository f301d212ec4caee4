from __future__ import annotations

import math

import pytest

from maxent_pomdp.convex_backend import (
    ConvexSubproblem,
    EntropyTerm,
    LinRow,
    QuadTerm,
    dump_subproblem,
    kkt_check,
    solve_subproblem,
)

INV_LN2 = 1.0 / math.log(2.0)


def simplex_entropy_problem(dim: int) -> ConvexSubproblem:
    """max -(1/ln 2) sum t_i  s.t.  sum x = 1, x_i ln x_i <= t_i, x in [0,1]."""
    names = [f"x{i}" for i in range(dim)] + [f"t{i}" for i in range(dim)]
    lower = [0.0] * dim + [-10.0] * dim
    upper = [1.0] * dim + [10.0] * dim
    rows = (LinRow(coeffs={i: 1.0 for i in range(dim)}, sense="==", rhs=1.0),)
    ents = tuple(
        EntropyTerm(x_coeffs={i: 1.0}, x_const=0.0, t=dim + i) for i in range(dim)
    )
    objective = {dim + i: -INV_LN2 for i in range(dim)}
    return ConvexSubproblem(
        names=tuple(names),
        lower=tuple(lower),
        upper=tuple(upper),
        objective=objective,
        objective_const=0.0,
        rows=rows,
        entropy_terms=ents,
        quad_terms=(),
    )


def test_uniform_maximizes_simplex_entropy():
    sol = solve_subproblem(simplex_entropy_problem(2))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert sol.values["x0"] == pytest.approx(0.5, abs=1e-5)
    assert sol.values["x1"] == pytest.approx(0.5, abs=1e-5)

    sol3 = solve_subproblem(simplex_entropy_problem(3))
    assert sol3.objective == pytest.approx(math.log2(3.0), abs=1e-6)


def test_entropy_epigraph_is_tight_at_fixed_point():
    sp = ConvexSubproblem(
        names=("x", "t"),
        lower=(0.0, -10.0),
        upper=(1.0, 10.0),
        objective={1: -1.0},
        objective_const=0.0,
        rows=(LinRow(coeffs={0: 1.0}, sense="==", rhs=0.7),),
        entropy_terms=(EntropyTerm(x_coeffs={0: 1.0}, x_const=0.0, t=1),),
        quad_terms=(),
    )
    sol = solve_subproblem(sp)
    assert sol.status == "optimal"
    assert sol.values["t"] == pytest.approx(0.7 * math.log(0.7), abs=1e-6)


def test_zero_times_log_zero_is_zero():
    sp = ConvexSubproblem(
        names=("x", "t"),
        lower=(0.0, -10.0),
        upper=(1.0, 10.0),
        objective={1: -1.0},
        objective_const=0.0,
        rows=(LinRow(coeffs={0: 1.0}, sense="==", rhs=0.0),),
        entropy_terms=(EntropyTerm(x_coeffs={0: 1.0}, x_const=0.0, t=1),),
        quad_terms=(),
    )
    sol = solve_subproblem(sp)
    assert sol.status == "optimal"
    assert sol.values["t"] == pytest.approx(0.0, abs=1e-6)
    assert sol.objective == pytest.approx(0.0, abs=1e-6)


def test_quadratic_term_tightens_row():
    # (x - 3)^2 <= s with x capped at 2 forces s >= 1
    sp = ConvexSubproblem(
        names=("x", "s"),
        lower=(0.0, 0.0),
        upper=(2.0, 100.0),
        objective={1: -1.0},
        objective_const=0.0,
        rows=(LinRow(coeffs={1: -1.0}, sense="<=", rhs=0.0),),
        entropy_terms=(),
        quad_terms=(QuadTerm(row=0, x_coeffs={0: 1.0}, x_const=-3.0, weight=1.0),),
    )
    sol = solve_subproblem(sp)
    assert sol.status == "optimal"
    assert sol.values["x"] == pytest.approx(2.0, abs=1e-5)
    assert sol.objective == pytest.approx(-1.0, abs=1e-5)


def test_objective_constant_carried():
    sp = ConvexSubproblem(
        names=("x",),
        lower=(0.0,),
        upper=(1.0,),
        objective={0: 1.0},
        objective_const=2.5,
        rows=(),
        entropy_terms=(),
        quad_terms=(),
    )
    sol = solve_subproblem(sp)
    assert sol.objective == pytest.approx(3.5, abs=1e-7)


def test_infeasible_reports_failed():
    sp = ConvexSubproblem(
        names=("x",),
        lower=(0.0,),
        upper=(1.0,),
        objective={0: 1.0},
        objective_const=0.0,
        rows=(
            LinRow(coeffs={0: 1.0}, sense=">=", rhs=2.0),
        ),
        entropy_terms=(),
        quad_terms=(),
    )
    sol = solve_subproblem(sp)
    assert sol.status == "failed"


def test_solve_is_deterministic():
    sp = simplex_entropy_problem(3)
    a = solve_subproblem(sp)
    b = solve_subproblem(sp)
    assert a.values == b.values
    assert a.objective == b.objective


def test_pwl_fallback_close_to_conic():
    sp = simplex_entropy_problem(2)
    conic = solve_subproblem(sp)
    pwl = solve_subproblem(sp, backend="pwl")
    assert pwl.status in ("optimal", "near_optimal")
    assert pwl.objective == pytest.approx(conic.objective, abs=5e-3)
    with pytest.raises(ValueError):
        solve_subproblem(sp, backend="nope")


def test_kkt_check_on_optimum():
    sp = simplex_entropy_problem(2)
    sol = solve_subproblem(sp)
    report = kkt_check(sp, sol)
    assert report.ok
    assert report.max_violation <= 1e-8

    failed = solve_subproblem(
        ConvexSubproblem(
            names=("x",),
            lower=(0.0,),
            upper=(1.0,),
            objective={0: 1.0},
            objective_const=0.0,
            rows=(LinRow(coeffs={0: 1.0}, sense=">=", rhs=2.0),),
            entropy_terms=(),
            quad_terms=(),
        )
    )
    with pytest.raises(ValueError):
        kkt_check(sp, failed)


def test_dump_format_is_stable():
    sp = simplex_entropy_problem(2)
    text = dump_subproblem(sp)
    assert text == dump_subproblem(sp)
    lines = text.splitlines()
    assert lines[0] == "SUBPROBLEM maximize"
    assert "VARS 4" in lines
    assert any(line.startswith("V 0 x0 ") for line in lines)
    assert any(line.startswith("R 0 == ") for line in lines)
    assert any(line.startswith("E 0 2 ") for line in lines)
    assert lines[-1] == "END"
