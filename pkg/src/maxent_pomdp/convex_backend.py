"""Neutral representation and solution of convex subproblems.

The synthesis loop emits subproblems in a small intermediate form: boxed
variables, a linear objective (maximized), affine rows, entropy epigraph
terms ``x ln x <= t`` (x affine and nonnegative, honoring 0 ln 0 = 0), and
convex squares ``weight * (affine)^2`` that tighten the left-hand side of
specific ``<=`` rows.  The default backend lowers this to an exponential-
plus second-order-cone program and solves it with Clarabel through cvxpy;
a piecewise-linear fallback (``backend="pwl"``) replaces every entropy
epigraph with an N-chord upper envelope of x ln x on [0, 1], with per-term
error O(1/N^2) away from 0, and is used only when explicitly requested.

The subproblems seen here are small (hundreds of variables), so the
backend builds a fresh conic program from constant data on every call;
construction is a small fraction of solve time at these sizes, and
constant data keeps the solver front end on its fast path.

Subproblems can be dumped to a line-oriented text format for external
cross-checking; see ``dump_subproblem``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping

import cvxpy as cp
import numpy as np

__all__ = [
    "LinRow",
    "EntropyTerm",
    "QuadTerm",
    "ConvexSubproblem",
    "SubproblemSolution",
    "KktReport",
    "solve_subproblem",
    "kkt_check",
    "dump_subproblem",
]

#: Default primal feasibility tolerance of the backend contract.
DEFAULT_TOL = 1e-8

#: Chord count of the piecewise-linear fallback.
PWL_PIECES = 64


@dataclass(frozen=True)
class LinRow:
    """Affine row: sum(coeffs * v) REL rhs, REL in {"<=", ">=", "=="}."""

    coeffs: dict[int, float]
    sense: str
    rhs: float


@dataclass(frozen=True)
class EntropyTerm:
    """Epigraph of x ln x: the affine expression x (in natural units) must
    satisfy x >= 0 and x ln x <= variable t."""

    x_coeffs: dict[int, float]
    x_const: float
    t: int


@dataclass(frozen=True)
class QuadTerm:
    """Convex square ``weight * (x_const + x_coeffs . v)^2`` added to the
    left-hand side of row ``row`` (which must be a "<=" row)."""

    row: int
    x_coeffs: dict[int, float]
    x_const: float
    weight: float


@dataclass(frozen=True)
class ConvexSubproblem:
    names: tuple[str, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    objective: dict[int, float]
    objective_const: float
    rows: tuple[LinRow, ...]
    entropy_terms: tuple[EntropyTerm, ...]
    quad_terms: tuple[QuadTerm, ...]


@dataclass(frozen=True)
class SubproblemSolution:
    """``values`` maps variable names to the solved point; ``objective`` is
    recomputed from the point, not read from the solver.  ``duals`` keeps
    the row and box multipliers for diagnostics (None when the backend did
    not produce them)."""

    values: dict[str, float]
    objective: float
    status: str  # optimal | near_optimal | failed
    max_violation: float
    duals: dict[str, tuple[float, ...]] | None = None


@dataclass(frozen=True)
class KktReport:
    max_violation: float
    comp_slack_residual: float
    ok: bool


def _dense_rows(terms: Mapping[int, float], n: int) -> np.ndarray:
    out = np.zeros(n)
    for i, c in terms.items():
        out[i] = c
    return out


class _Built:
    """One conic program assembled from a subproblem's constant data."""

    def __init__(self, sp: ConvexSubproblem):
        n = len(sp.names)
        nrows = len(sp.rows)
        self.v = cp.Variable(n)
        self.le_idx = [i for i, r in enumerate(sp.rows) if r.sense == "<="]
        self.ge_idx = [i for i, r in enumerate(sp.rows) if r.sense == ">="]
        self.eq_idx = [i for i, r in enumerate(sp.rows) if r.sense == "=="]
        for q in sp.quad_terms:
            if sp.rows[q.row].sense != "<=":
                raise ValueError("convex squares may only tighten <= rows")

        amat = np.zeros((nrows, n))
        rhs = np.zeros(nrows)
        for i, r in enumerate(sp.rows):
            for j, cval in r.coeffs.items():
                amat[i, j] = cval
            rhs[i] = r.rhs

        constraints = []
        lower = np.array(sp.lower)
        upper = np.array(sp.upper)
        lo_idx = np.where(np.isfinite(lower))[0]
        hi_idx = np.where(np.isfinite(upper))[0]
        self.box_lo = None
        self.box_hi = None
        if lo_idx.size:
            self.box_lo = self.v[lo_idx] >= lower[lo_idx]
            constraints.append(self.box_lo)
        if hi_idx.size:
            self.box_hi = self.v[hi_idx] <= upper[hi_idx]
            constraints.append(self.box_hi)
        self.lo_idx, self.hi_idx = lo_idx, hi_idx

        quad_by_row = None
        if sp.quad_terms:
            qmat = np.vstack([_dense_rows(q.x_coeffs, n) for q in sp.quad_terms])
            qconst = np.array([q.x_const for q in sp.quad_terms])
            weights = np.array([q.weight for q in sp.quad_terms])
            rowsel = np.zeros((nrows, len(sp.quad_terms)))
            for j, q in enumerate(sp.quad_terms):
                rowsel[q.row, j] = 1.0
            squares = cp.multiply(weights, cp.square(qmat @ self.v + qconst))
            quad_by_row = rowsel @ squares

        self.con_le = self.con_ge = self.con_eq = None
        if self.le_idx:
            lhs = amat[self.le_idx] @ self.v
            if quad_by_row is not None:
                lhs = lhs + quad_by_row[self.le_idx]
            self.con_le = lhs <= rhs[self.le_idx]
            constraints.append(self.con_le)
        if self.ge_idx:
            self.con_ge = amat[self.ge_idx] @ self.v >= rhs[self.ge_idx]
            constraints.append(self.con_ge)
        if self.eq_idx:
            self.con_eq = amat[self.eq_idx] @ self.v == rhs[self.eq_idx]
            constraints.append(self.con_eq)

        if sp.entropy_terms:
            emat = np.vstack([_dense_rows(t.x_coeffs, n) for t in sp.entropy_terms])
            econst = np.array([t.x_const for t in sp.entropy_terms])
            tsel = np.zeros((len(sp.entropy_terms), n))
            for j, t in enumerate(sp.entropy_terms):
                tsel[j, t.t] = 1.0
            x = emat @ self.v + econst
            constraints.append(-cp.entr(x) <= tsel @ self.v)

        c = _dense_rows(sp.objective, n)
        self.problem = cp.Problem(cp.Maximize(c @ self.v), constraints)


def _point_violation(sp: ConvexSubproblem, x: np.ndarray) -> float:
    worst = 0.0
    for i, (lo, hi) in enumerate(zip(sp.lower, sp.upper)):
        if math.isfinite(lo):
            worst = max(worst, lo - x[i])
        if math.isfinite(hi):
            worst = max(worst, x[i] - hi)
    quad_add = np.zeros(len(sp.rows))
    for q in sp.quad_terms:
        val = q.x_const + sum(c * x[i] for i, c in q.x_coeffs.items())
        quad_add[q.row] += q.weight * val * val
    for r_i, row in enumerate(sp.rows):
        lhs = sum(c * x[i] for i, c in row.coeffs.items()) + quad_add[r_i]
        if row.sense == "<=":
            worst = max(worst, lhs - row.rhs)
        elif row.sense == ">=":
            worst = max(worst, row.rhs - lhs)
        else:
            worst = max(worst, abs(lhs - row.rhs))
    for term in sp.entropy_terms:
        xv = term.x_const + sum(c * x[i] for i, c in term.x_coeffs.items())
        worst = max(worst, -xv)
        fval = xv * math.log(xv) if xv > 0 else 0.0
        worst = max(worst, fval - x[term.t])
    return float(worst)


def _objective_at(sp: ConvexSubproblem, x: np.ndarray) -> float:
    return sp.objective_const + sum(c * x[i] for i, c in sp.objective.items())


def _extract_duals(built: _Built) -> dict[str, tuple[float, ...]] | None:
    try:
        out: dict[str, tuple[float, ...]] = {}
        for label, con in (
            ("le", built.con_le),
            ("ge", built.con_ge),
            ("eq", built.con_eq),
            ("lo", built.box_lo),
            ("hi", built.box_hi),
        ):
            if con is not None and con.dual_value is not None:
                out[label] = tuple(np.atleast_1d(con.dual_value).tolist())
        return out or None
    except Exception:
        return None


def _failed(sp: ConvexSubproblem) -> SubproblemSolution:
    return SubproblemSolution(values={}, objective=math.nan, status="failed", max_violation=math.inf)


def _attempt(built: _Built, solver: str, **opts) -> np.ndarray | None:
    try:
        built.problem.solve(solver=solver, **opts)
    except cp.error.SolverError:
        return None
    if built.problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return None
    if built.v.value is None:
        return None
    return np.asarray(built.v.value, dtype=float)


def _solve_conic(sp: ConvexSubproblem, tol: float) -> SubproblemSolution:
    built = _Built(sp)
    with warnings.catch_warnings():
        # inaccurate-solution warnings are redundant with the explicit
        # violation check below
        warnings.simplefilter("ignore", UserWarning)
        # Each attempt is time-capped: a stalling solve is worth less to the
        # outer loop than moving on with the fallback's best iterate.
        x = _attempt(built, cp.CLARABEL, time_limit=5.0)
        if x is None:
            x = _attempt(
                built, cp.SCS, eps=1e-6, max_iters=25_000, time_limit_secs=5.0
            )
    if x is None:
        return _failed(sp)
    status = built.problem.status
    violation = _point_violation(sp, x)
    mapped = "optimal" if status == cp.OPTIMAL and violation <= tol else "near_optimal"
    return SubproblemSolution(
        values={name: float(x[i]) for i, name in enumerate(sp.names)},
        objective=_objective_at(sp, x),
        status=mapped,
        max_violation=violation,
        duals=_extract_duals(built),
    )


def _pwl_chords(pieces: int) -> list[tuple[float, float]]:
    """Chord coefficients (a, b) with t >= a x + b approximating x ln x from
    above on [0, 1]; chords of a convex function majorize it on each span."""
    def f(x: float) -> float:
        return x * math.log(x) if x > 0 else 0.0

    chords = []
    for i in range(pieces):
        x0, x1 = i / pieces, (i + 1) / pieces
        a = (f(x1) - f(x0)) / (x1 - x0)
        b = f(x0) - a * x0
        chords.append((a, b))
    return chords


def _solve_pwl(sp: ConvexSubproblem, tol: float, pieces: int) -> SubproblemSolution:
    n = len(sp.names)
    v = cp.Variable(n)
    constraints = []
    lower = np.array(sp.lower)
    upper = np.array(sp.upper)
    lo_idx = np.where(np.isfinite(lower))[0]
    hi_idx = np.where(np.isfinite(upper))[0]
    if lo_idx.size:
        constraints.append(v[lo_idx] >= lower[lo_idx])
    if hi_idx.size:
        constraints.append(v[hi_idx] <= upper[hi_idx])
    quad = {}
    for q in sp.quad_terms:
        expr = q.x_const + sum(c * v[i] for i, c in q.x_coeffs.items())
        quad.setdefault(q.row, []).append(q.weight * cp.square(expr))
    for r_i, row in enumerate(sp.rows):
        lhs = sum(c * v[i] for i, c in row.coeffs.items())
        for sq in quad.get(r_i, []):
            lhs = lhs + sq
        if row.sense == "<=":
            constraints.append(lhs <= row.rhs)
        elif row.sense == ">=":
            constraints.append(lhs >= row.rhs)
        else:
            constraints.append(lhs == row.rhs)
    chords = _pwl_chords(pieces)
    avec = np.array([a for a, _ in chords])
    bvec = np.array([b for _, b in chords])
    for term in sp.entropy_terms:
        x = term.x_const + sum(c * v[i] for i, c in term.x_coeffs.items())
        constraints.append(x >= 0)
        constraints.append(x <= 1)
        constraints.append(v[term.t] >= avec * x + bvec)
    objective = cp.Maximize(sum(c * v[i] for i, c in sp.objective.items()))
    problem = cp.Problem(objective, constraints)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return _failed(sp)
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or v.value is None:
        return _failed(sp)
    x = np.asarray(v.value, dtype=float)
    # the chord envelope's own gap is not counted as a violation
    return SubproblemSolution(
        values={name: float(x[i]) for i, name in enumerate(sp.names)},
        objective=_objective_at(sp, x),
        status="optimal" if problem.status == cp.OPTIMAL else "near_optimal",
        max_violation=_point_violation(sp, x),
    )


def solve_subproblem(
    sp: ConvexSubproblem,
    tol: float = DEFAULT_TOL,
    backend: str = "conic",
    pwl_pieces: int = PWL_PIECES,
) -> SubproblemSolution:
    """Solve to the backend contract: feasibility within ``tol`` and
    objective within 1e-6 of optimal; deterministic for fixed input.

    ``backend="pwl"`` swaps the exponential cones for the documented
    piecewise-linear majorant (pwl_pieces chords).
    """
    if backend == "conic":
        return _solve_conic(sp, tol)
    if backend == "pwl":
        return _solve_pwl(sp, tol, pwl_pieces)
    raise ValueError(f"unknown backend {backend!r}")


def kkt_check(sp: ConvexSubproblem, sol: SubproblemSolution, tol: float = DEFAULT_TOL) -> KktReport:
    """Independent primal feasibility check plus complementary-slackness
    residuals from the solver's multipliers (diagnostic only)."""
    if sol.status == "failed":
        raise ValueError("cannot check a failed solution")
    x = np.array([sol.values[name] for name in sp.names])
    violation = _point_violation(sp, x)
    comp = 0.0
    if sol.duals:
        quad_add = np.zeros(len(sp.rows))
        for q in sp.quad_terms:
            val = q.x_const + sum(c * x[i] for i, c in q.x_coeffs.items())
            quad_add[q.row] += q.weight * val * val
        le_idx = [i for i, r in enumerate(sp.rows) if r.sense == "<="]
        ge_idx = [i for i, r in enumerate(sp.rows) if r.sense == ">="]
        for label, idx in (("le", le_idx), ("ge", ge_idx)):
            duals = sol.duals.get(label)
            if duals is None:
                continue
            for dual, r_i in zip(duals, idx):
                row = sp.rows[r_i]
                lhs = sum(c * x[i] for i, c in row.coeffs.items()) + quad_add[r_i]
                comp = max(comp, abs(dual * (row.rhs - lhs)))
        lower = np.array(sp.lower)
        upper = np.array(sp.upper)
        lo_idx = np.where(np.isfinite(lower))[0]
        hi_idx = np.where(np.isfinite(upper))[0]
        for label, idx, bound in (("lo", lo_idx, lower), ("hi", hi_idx, upper)):
            duals = sol.duals.get(label)
            if duals is None:
                continue
            for dual, v_i in zip(duals, idx):
                comp = max(comp, abs(dual * (x[v_i] - bound[v_i])))
    return KktReport(
        max_violation=violation,
        comp_slack_residual=comp,
        ok=violation <= tol,
    )


def dump_subproblem(sp: ConvexSubproblem) -> str:
    """Line-oriented dump for external cross-checking.

    Format (whitespace-separated, floats in repr precision)::

        SUBPROBLEM maximize
        VARS <n>
        V <index> <name> <lower> <upper>
        OBJ <constant>
        C <index> <coeff>                 (one per objective term)
        ROWS <m>
        R <row> <sense> <rhs>
        A <row> <index> <coeff>           (one per row term)
        ENTROPY <count>                   (x ln x <= t, x affine)
        E <term> <t-index> <x-constant>
        EC <term> <index> <coeff>
        QUAD <count>                      (weight (x)^2 added to row LHS)
        Q <term> <row> <weight> <x-constant>
        QC <term> <index> <coeff>
        END
    """
    lines = ["SUBPROBLEM maximize", f"VARS {len(sp.names)}"]
    for i, name in enumerate(sp.names):
        lines.append(f"V {i} {name} {sp.lower[i]!r} {sp.upper[i]!r}")
    lines.append(f"OBJ {sp.objective_const!r}")
    for i in sorted(sp.objective):
        lines.append(f"C {i} {sp.objective[i]!r}")
    lines.append(f"ROWS {len(sp.rows)}")
    for r_i, row in enumerate(sp.rows):
        lines.append(f"R {r_i} {row.sense} {row.rhs!r}")
        for i in sorted(row.coeffs):
            lines.append(f"A {r_i} {i} {row.coeffs[i]!r}")
    lines.append(f"ENTROPY {len(sp.entropy_terms)}")
    for j, term in enumerate(sp.entropy_terms):
        lines.append(f"E {j} {term.t} {term.x_const!r}")
        for i in sorted(term.x_coeffs):
            lines.append(f"EC {j} {i} {term.x_coeffs[i]!r}")
    lines.append(f"QUAD {len(sp.quad_terms)}")
    for j, term in enumerate(sp.quad_terms):
        lines.append(f"Q {j} {term.row} {term.weight!r} {term.x_const!r}")
        for i in sorted(term.x_coeffs):
            lines.append(f"QC {j} {i} {term.x_coeffs[i]!r}")
    lines.append("END")
    return "\n".join(lines)
