"""Penalty convex-concave synthesis of maximum-entropy controllers.

The synthesis problem asks for decision parameters gamma maximizing the
process entropy nu(initial) of the induced product chain subject to an
expected-total-reward threshold.  Written with explicit value variables,
each product state contributes the non-convex constraint

    nu(s) <= L(s) + sum_s' x_ss' nu(s')                        (entropy)
    eta(s) <= R(s) + sum_s' x_ss' eta(s')                      (reward)

where x_ss' is affine in gamma, L(s) = -(1/ln 2) sum x ln x, and R(s) is
affine in gamma.  Moving everything left leaves two non-convex pieces: the
exact entropy term x ln x (convex, kept as an exponential-cone epigraph)
and the bilinear products -x nu(s').  Each bilinear term is split as a
difference of convex functions,

    -x y = 1/4 (x - y)^2 - 1/4 (x + y)^2,

and the concave part is linearized at the current iterate (xh, yh):

    -x y  ~>  1/4 (x - y)^2 - 1/2 (xh + yh)(x + y) + 1/4 (xh + yh)^2.

The replacement equals -xh yh at the iterate and overestimates -x y
everywhere (their difference is 1/4 ((x + y) - (xh + yh))^2 >= 0), so any
point feasible for the convexified constraints is feasible for the true
ones.  Violations are absorbed by penalty slacks psi >= 0 weighted by tau
in the objective; tau grows geometrically up to a cap, driving slacks to
zero.

Because the surrogate gap grows quadratically with the distance from the
expansion point, plain re-expansion at the subproblem solution can take
very short steps once tau is large.  Each iteration therefore runs a line
search along the step direction: candidate multiples of the step are
renormalized into genuine controllers and evaluated exactly by the linear
fixed-point evaluators, and the furthest candidate that is reward-feasible
and does not fall below the current penalized objective becomes the next
expansion point.  Expanding at an exactly evaluated point keeps every
convergence guarantee (the point is feasible for the next subproblem with
zero slack and value equal to its certified entropy, so the penalized
objective still cannot decrease), while restoring long steps.

Each restart draws fresh random decision rows, iterates to stationarity of
the penalized objective, and is certified by the exact evaluators on the
instantiated chain; the best certified reward-feasible restart wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import networkx as nx
import numpy as np

from .convex_backend import (
    ConvexSubproblem,
    EntropyTerm,
    LinRow,
    QuadTerm,
    solve_subproblem,
)
from .fsc import GammaParam, Instantiation
from .mc_analysis import evaluate_chain
from .model import to_fully_observable
from .product import AffineExpr, Pmc, ProductState, build_pmc, instantiate

__all__ = [
    "SynthesisProblem",
    "CcpConfig",
    "IterationRecord",
    "RestartRecord",
    "SynthesisResult",
    "initialize",
    "convexify",
    "synthesize",
]

INV_LN2 = 1.0 / math.log(2.0)

#: Certified rewards may fall short of the threshold by this much and the
#: run still counts as feasible.
FEAS_TOL = 1e-6

MODES = ("maxent", "feasibility", "mdp_bound")


@dataclass(frozen=True)
class SynthesisProblem:
    """A built product chain, a reward threshold, and a mode.

    Modes: ``maxent`` maximizes entropy under the threshold;
    ``feasibility`` replaces the objective with a constant, keeping all
    constraints, and serves as the no-entropy-pressure baseline;
    ``mdp_bound`` runs maxent with a 1-memory controller on the fully
    observable counterpart of the product's model, which upper-bounds the
    achievable entropy of any controller for the model itself.
    """

    pmc: Pmc
    gamma_threshold: float
    mode: str = "maxent"


@dataclass(frozen=True)
class CcpConfig:
    """Penalty-iteration knobs.

    ``nu_box``/``eta_box`` default (None) to |S| log2 |S| and |S| max R of
    the product being solved; both are safe ceilings for chains that are
    absorbed with probability one.  A constant penalty weight is obtained
    by setting tau0 = tau_max.
    """

    tau0: float = 0.05
    tau_mult: float = 2.0
    tau_max: float = 1e4
    max_iters: int = 100
    obj_tol: float = 1e-6
    slack_tol: float = 1e-6
    restarts: int = 10
    seed: int = 0
    nu_box: float | None = None
    eta_box: float | None = None

    def check(self) -> None:
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        if self.tau_mult <= 1:
            raise ValueError("tau_mult must exceed 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    """One penalty iteration: the weight in force, the solver's entropy
    variable at the initial state, the total slack, and the penalized
    objective value at that weight."""

    tau: float
    nu_initial: float
    slack_sum: float
    objective: float


@dataclass(frozen=True)
class RestartRecord:
    restart_index: int
    iterations: int
    converged: bool
    slack_final: float
    nu_initial: float
    certified_entropy: float
    certified_reward: float
    finite: bool
    instantiation: Instantiation
    trace: tuple[IterationRecord, ...]


@dataclass(frozen=True)
class SynthesisResult:
    """Best restart, certified by the exact evaluators.

    ``entropy_bits`` and ``expected_reward`` come from the linear fixed
    points of the instantiated chain, never from solver variables;
    ``nu_initial`` is the solver's entropy variable for comparison.
    ``history`` carries the full per-restart, per-iteration diagnostics.
    """

    best_u: Instantiation
    entropy_bits: float
    expected_reward: float
    nu_initial: float
    converged: bool
    iterations: int
    restart_index: int
    slack_final: float
    history: tuple[RestartRecord, ...] = field(default=(), repr=False)


def _strict_absorbing(pmc: Pmc) -> frozenset[ProductState]:
    # Only the last-memory copies of absorbing model states are self-loops
    # of the product; earlier copies still advance their memory.
    return frozenset(s for s in pmc.absorbing if s[1] == pmc.k)


def _default_boxes(pmc: Pmc, cfg: CcpConfig) -> tuple[float, float]:
    n = len(pmc.product_states)
    nu_box = cfg.nu_box if cfg.nu_box is not None else n * math.log2(n) if n > 1 else 1.0
    max_r = max(pmc.pomdp.rewards.values(), default=0.0)
    eta_box = cfg.eta_box if cfg.eta_box is not None else n * max_r
    return nu_box, eta_box


class _Layout:
    """Deterministic variable layout shared by all iterations on one
    product chain."""

    def __init__(self, pmc: Pmc, mode: str, nu_box: float, eta_box: float):
        self.pmc = pmc
        self.mode = mode
        self.nu_box = nu_box
        self.eta_box = eta_box
        strict = _strict_absorbing(pmc)
        self.strict = strict
        self.nu_row_states = [s for s in pmc.product_states if s not in strict]
        self.eta_row_states = list(pmc.product_states)
        self.names: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []

        def add(name: str, lo: float, hi: float) -> int:
            self.names.append(name)
            self.lower.append(lo)
            self.upper.append(hi)
            return len(self.names) - 1

        self.g_idx = {p: add(str(p), 0.0, 1.0) for p in pmc.params}
        self.nu_idx = {
            s: add(f"nu[{s[0]},{s[1]}]", 0.0, 0.0 if s in strict else nu_box)
            for s in pmc.product_states
        }
        self.eta_idx = {
            s: add(f"eta[{s[0]},{s[1]}]", 0.0, 0.0 if s in strict else eta_box)
            for s in pmc.product_states
        }
        self.psi_nu_idx = {
            s: add(f"psi_nu[{s[0]},{s[1]}]", 0.0, math.inf) for s in self.nu_row_states
        }
        self.psi_eta_idx = {
            s: add(f"psi_eta[{s[0]},{s[1]}]", 0.0, math.inf) for s in self.eta_row_states
        }
        self.psi_indices = list(self.psi_nu_idx.values()) + list(self.psi_eta_idx.values())

        # entropy epigraph variables, one per non-folding edge of a nu row
        self.edges: dict[ProductState, list[tuple[ProductState, AffineExpr, float | None]]] = {
            s: [] for s in pmc.product_states
        }
        for (src, dst), expr in pmc.trans.items():
            self.edges[src].append((dst, expr, pmc.folded_trans[(src, dst)]))
        self.t_idx: dict[tuple[ProductState, ProductState], int] = {}
        for s in self.nu_row_states:
            for dst, expr, folded in self.edges[s]:
                if folded is None:
                    self.t_idx[(s, dst)] = add(f"t[{s[0]},{s[1]}->{dst[0]}]", -1.0, math.inf)


def _build_layout(problem: SynthesisProblem, cfg: CcpConfig) -> _Layout:
    nu_box, eta_box = _default_boxes(problem.pmc, cfg)
    return _Layout(problem.pmc, problem.mode, nu_box, eta_box)


def convexify(
    problem: SynthesisProblem,
    iterate: tuple[dict[GammaParam, float], dict[ProductState, float], dict[ProductState, float]],
    tau: float,
    cfg: CcpConfig | None = None,
    _layout: _Layout | None = None,
) -> ConvexSubproblem:
    """Emit the convex subproblem for one penalty iteration.

    ``iterate`` is the linearization point (gamma values, entropy values,
    reward values).  Entropy rows are emitted for every product state that
    is not a product self-loop; reward rows for every product state; edge
    expressions that fold to constants under the simplex identities
    contribute exact constants instead of cones.
    """
    cfg = cfg or CcpConfig()
    layout = _layout or _build_layout(problem, cfg)
    pmc = layout.pmc
    u_hat, nu_hat, eta_hat = iterate

    rows: list[LinRow] = []
    quad_terms: list[QuadTerm] = []
    entropy_terms: list[EntropyTerm] = []

    def surrogate(
        coeffs: dict[int, float],
        expr: AffineExpr,
        value_idx: int,
        sig: float,
        row_index: int,
    ) -> float:
        """Append the convexified -x*y to ``coeffs``/quads; returns the
        constant contribution."""
        qcoeffs = {layout.g_idx[p]: c for p, c in expr.terms.items()}
        qcoeffs[value_idx] = qcoeffs.get(value_idx, 0.0) - 1.0
        quad_terms.append(QuadTerm(row_index, qcoeffs, expr.constant, 0.25))
        half = sig / 2.0
        for p, c in expr.terms.items():
            i = layout.g_idx[p]
            coeffs[i] = coeffs.get(i, 0.0) - half * c
        coeffs[value_idx] = coeffs.get(value_idx, 0.0) - half
        return sig * sig / 4.0 - half * expr.constant

    for s in layout.nu_row_states:
        row_index = len(rows)
        coeffs: dict[int, float] = {layout.nu_idx[s]: 1.0}
        const = 0.0
        for dst, expr, folded in layout.edges[s]:
            if folded is not None:
                if folded > 0.0:
                    const += folded * math.log2(folded)
                    i = layout.nu_idx[dst]
                    coeffs[i] = coeffs.get(i, 0.0) - folded
            else:
                t = layout.t_idx[(s, dst)]
                coeffs[t] = coeffs.get(t, 0.0) + INV_LN2
                entropy_terms.append(
                    EntropyTerm(
                        {layout.g_idx[p]: c for p, c in expr.terms.items()},
                        expr.constant,
                        t,
                    )
                )
                sig = expr.evaluate(u_hat) + nu_hat.get(dst, 0.0)
                const += surrogate(coeffs, expr, layout.nu_idx[dst], sig, row_index)
        i = layout.psi_nu_idx[s]
        coeffs[i] = coeffs.get(i, 0.0) - 1.0
        rows.append(LinRow({k: v for k, v in coeffs.items() if v != 0.0}, "<=", -const))

    for s in layout.eta_row_states:
        row_index = len(rows)
        coeffs = {layout.eta_idx[s]: 1.0}
        const = 0.0
        folded_r = pmc.folded_reward[s]
        if folded_r is not None:
            const -= folded_r
        else:
            r_expr = pmc.reward_expr[s]
            for p, c in r_expr.terms.items():
                i = layout.g_idx[p]
                coeffs[i] = coeffs.get(i, 0.0) - c
            const -= r_expr.constant
        for dst, expr, folded in layout.edges[s]:
            if folded is not None:
                if folded > 0.0:
                    i = layout.eta_idx[dst]
                    coeffs[i] = coeffs.get(i, 0.0) - folded
            else:
                sig = expr.evaluate(u_hat) + eta_hat.get(dst, 0.0)
                const += surrogate(coeffs, expr, layout.eta_idx[dst], sig, row_index)
        i = layout.psi_eta_idx[s]
        coeffs[i] = coeffs.get(i, 0.0) - 1.0
        rows.append(LinRow({k: v for k, v in coeffs.items() if v != 0.0}, "<=", -const))

    rows.append(LinRow({layout.eta_idx[pmc.initial]: 1.0}, ">=", problem.gamma_threshold))
    for q in range(1, pmc.k + 1):
        for z in pmc.observations:
            rows.append(
                LinRow(
                    {layout.g_idx[GammaParam(q, z, a)]: 1.0 for a in pmc.actions},
                    "==",
                    1.0,
                )
            )

    objective: dict[int, float] = {}
    if problem.mode != "feasibility":
        objective[layout.nu_idx[pmc.initial]] = 1.0
    for i in layout.psi_indices:
        objective[i] = -tau

    return ConvexSubproblem(
        names=tuple(layout.names),
        lower=tuple(layout.lower),
        upper=tuple(layout.upper),
        objective=objective,
        objective_const=0.0,
        rows=tuple(rows),
        entropy_terms=tuple(entropy_terms),
        quad_terms=tuple(quad_terms),
    )


def initialize(
    problem: SynthesisProblem, seed: int, restart_index: int = 0
) -> tuple[dict[GammaParam, float], dict[ProductState, float], dict[ProductState, float]]:
    """Random starting iterate: every decision row uniform on the simplex
    (flat Dirichlet), deterministic in (seed, restart_index); the entropy
    and reward linearization values come from exact evaluation of the
    instantiated chain so the first subproblem is expanded at a consistent
    point."""
    pmc = problem.pmc
    rng = np.random.default_rng([seed & (2**64 - 1), restart_index])
    u: dict[GammaParam, float] = {}
    for q in range(1, pmc.k + 1):
        for z in pmc.observations:
            row = rng.dirichlet(np.ones(len(pmc.actions)))
            for a, p in zip(pmc.actions, row):
                u[GammaParam(q, z, a)] = float(p)
    ev = evaluate_chain(instantiate(pmc, Instantiation(dict(u))))
    if ev.finite:
        nu0 = {s: ev.nu.get(s, 0.0) for s in pmc.product_states}
        eta0 = {s: ev.eta.get(s, 0.0) for s in pmc.product_states}
    else:
        nu0 = {s: 0.0 for s in pmc.product_states}
        eta0 = {s: 0.0 for s in pmc.product_states}
    return u, nu0, eta0


def _sanitize(pmc: Pmc, u_raw: dict[GammaParam, float]) -> Instantiation:
    """Clamp solver noise and renormalize rows into exact distributions."""
    values: dict[GammaParam, float] = {}
    for q in range(1, pmc.k + 1):
        for z in pmc.observations:
            row = {a: max(u_raw[GammaParam(q, z, a)], 0.0) for a in pmc.actions}
            total = sum(row.values())
            if total <= 1e-9:
                row = {a: 1.0 for a in pmc.actions}
                total = float(len(pmc.actions))
            for a, v in row.items():
                values[GammaParam(q, z, a)] = v / total
    return Instantiation(values)


class _BestSeen:
    """Best exactly certified reward-feasible point found by one restart."""

    def __init__(self, threshold: float):
        self.threshold = threshold
        self.entropy = -math.inf
        self.reward = -math.inf
        self.inst: Instantiation | None = None

    def offer(self, inst: Instantiation, entropy: float, reward: float, finite: bool) -> None:
        if not finite or not math.isfinite(entropy):
            return
        if reward >= self.threshold - FEAS_TOL and entropy > self.entropy:
            self.entropy = entropy
            self.reward = reward
            self.inst = inst


def _next_expansion(
    problem: SynthesisProblem,
    layout: _Layout,
    u_exp: dict[GammaParam, float],
    u_sol: dict[GammaParam, float],
    nu_sol: dict[ProductState, float],
    eta_sol: dict[ProductState, float],
    nu_init: float,
    slack: float,
    tau_next: float,
    best_seen: _BestSeen,
) -> tuple[dict[GammaParam, float], dict[ProductState, float], dict[ProductState, float]]:
    """Line search along the CCP step.

    Candidates are multiples of (u_sol - u_exp) clipped at the simplex
    boundary.  Each is sanitized into a genuine controller and evaluated
    exactly; a candidate may become the next expansion point only when it
    is reward-feasible and its certified value does not fall below what
    the current solution guarantees for the next subproblem (nu(initial)
    minus the next penalty on the current slack), which preserves the
    monotonicity of the penalized objective.  Falls back to plain
    re-expansion at the solver point.
    """
    pmc = problem.pmc
    gamma_t = problem.gamma_threshold
    feas_mode = problem.mode == "feasibility"
    raw = (u_sol, nu_sol, eta_sol)
    d = {p: u_sol[p] - u_exp[p] for p in pmc.params}
    if max((abs(v) for v in d.values()), default=0.0) < 1e-12:
        return raw

    theta_bnd = math.inf
    for p, dv in d.items():
        if dv < -1e-14:
            theta_bnd = min(theta_bnd, max(u_exp[p], 0.0) / -dv)
    thetas = [t for t in (1.0, 2.0, 4.0, 8.0, 16.0) if t <= theta_bnd]
    if not thetas:
        thetas = [min(1.0, theta_bnd)]
    if 1.0 < theta_bnd <= 1e3 and math.isfinite(theta_bnd):
        thetas.append(theta_bnd)

    floor = (0.0 if feas_mode else nu_init) - tau_next * slack
    best: tuple[float, float, Instantiation, object, float] | None = None
    for theta in thetas:
        w = {p: u_exp[p] + theta * d[p] for p in pmc.params}
        inst = _sanitize(pmc, w)
        ev = evaluate_chain(instantiate(pmc, inst))
        best_seen.offer(inst, ev.entropy_bits, ev.expected_reward, ev.finite)
        if not ev.finite:
            continue
        reward = ev.expected_reward
        # A candidate short of the threshold can still witness feasibility
        # of the next subproblem: scaling its reward values by
        # c = threshold / reward restores the threshold row exactly while
        # breaking each reward row by (c - 1) R(s), a slack whose penalty
        # is charged against the candidate below.
        if reward >= gamma_t - 1e-12:
            lift = 1.0
            lift_cost = 0.0
        elif reward >= max(gamma_t / 2.0, gamma_t - 1e-3) and reward > 0.0:
            lift = gamma_t / reward
            total_r = sum(
                pmc.folded_reward[s]
                if pmc.folded_reward[s] is not None
                else pmc.reward_expr[s].evaluate(inst.values)
                for s in pmc.product_states
            )
            lift_cost = tau_next * (lift - 1.0) * total_r
        else:
            continue
        value = (0.0 if feas_mode else ev.entropy_bits) - lift_cost
        if value < floor - 1e-12:
            continue
        if best is None or value > best[0] + 1e-15:
            best = (value, theta, inst, ev, lift)
    if best is None:
        return raw
    _, _, inst, ev, lift = best
    nu_w = {s: ev.nu.get(s, 0.0) for s in pmc.product_states}
    eta_w = {s: lift * ev.eta.get(s, 0.0) for s in pmc.product_states}
    if max(eta_w.values(), default=0.0) > layout.eta_box:
        return raw
    return dict(inst.values), nu_w, eta_w


class _FastChainEval:
    """Cheap screening evaluator for chains that absorb along a DAG.

    When the support graph of the product, excluding the terminal
    self-loops, is acyclic for every parameter value, the non-terminal part
    of any induced chain is transient by construction.  The entropy and
    reward fixed points then reduce to a single dense linear solve with no
    state classification, which is an order of magnitude faster than the
    full evaluator.  Only used to pre-screen candidate moves during local
    refinement; every accepted move is re-certified by the full evaluator,
    so a screening discrepancy can only make the search less greedy, never
    unsound.
    """

    def __init__(self, n, initial_index, edges, rewards):
        self.n = n
        self.initial_index = initial_index
        self.edges = edges
        self.rewards = rewards

    @staticmethod
    def build(pmc: Pmc) -> _FastChainEval | None:
        """Return an evaluator, or None when the structure does not allow one."""
        terminal = {s for s in pmc.absorbing if s[1] == pmc.k}
        inner = [s for s in pmc.product_states if s not in terminal]
        g = nx.DiGraph()
        g.add_nodes_from(inner)
        for src, dst in pmc.trans:
            if src not in terminal and dst not in terminal:
                g.add_edge(src, dst)
        if not nx.is_directed_acyclic_graph(g):
            return None
        for s in terminal:
            folded = pmc.folded_reward[s]
            if folded is None or abs(folded) > 1e-15:
                return None
        index = {s: i for i, s in enumerate(inner)}
        edges = []
        for (src, dst), expr in pmc.trans.items():
            if src in terminal:
                continue
            const = pmc.folded_trans[(src, dst)]
            edges.append((index[src], index.get(dst), const if const is not None else expr))
        rewards = []
        for s in inner:
            const = pmc.folded_reward[s]
            rewards.append(const if const is not None else pmc.reward_expr[s])
        return _FastChainEval(len(inner), index[pmc.initial], edges, rewards)

    def evaluate(self, values: dict[GammaParam, float]) -> tuple[float, float]:
        """Entropy and expected reward from the initial state, in one solve."""
        n = self.n
        amat = np.eye(n)
        rhs = np.zeros((n, 2))
        for src, tgt, entry in self.edges:
            p = entry if isinstance(entry, float) else entry.evaluate(values)
            if p <= 0.0:
                continue
            rhs[src, 0] -= p * math.log2(p)
            if tgt is not None:
                amat[src, tgt] -= p
        for i, entry in enumerate(self.rewards):
            rhs[i, 1] = entry if isinstance(entry, float) else entry.evaluate(values)
        sol = np.linalg.solve(amat, rhs)
        return float(sol[self.initial_index, 0]), float(sol[self.initial_index, 1])


def _ascend(
    pmc: Pmc,
    fast: _FastChainEval | None,
    u0: dict[GammaParam, float],
    gamma_threshold: float,
    budget: list[int],
) -> tuple[dict[GammaParam, float], float, float]:
    """Pairwise-transfer coordinate ascent on the exact entropy from ``u0``.

    Shifts decision mass between action pairs of one row at a time, keeping
    only moves that raise the exact entropy without dropping the exact
    reward below the threshold; the step shrinks geometrically once no move
    helps.  ``budget`` is a shared countdown of trial evaluations.  Returns
    the best point with its certified entropy and reward.  Deterministic:
    fixed scan order, strict improvement only.
    """
    u = dict(u0)
    ev = evaluate_chain(instantiate(pmc, Instantiation(dict(u))))
    best_h, best_r = ev.entropy_bits, ev.expected_reward
    if not ev.finite or best_r < gamma_threshold - FEAS_TOL:
        return u, best_h, best_r
    rows = [(q, z) for q in range(1, pmc.k + 1) for z in pmc.observations]
    acts = pmc.actions
    step = 0.25
    while step >= 1e-4 and budget[0] > 0:
        improved = False
        for q, z in rows:
            for a_from in acts:
                p_from = GammaParam(q, z, a_from)
                for a_to in acts:
                    if a_to == a_from:
                        continue
                    cur = u[p_from]
                    if cur <= 1e-12:
                        break
                    delta = min(step, cur)
                    trial = dict(u)
                    trial[p_from] = cur - delta
                    trial[GammaParam(q, z, a_to)] += delta
                    budget[0] -= 1
                    if fast is not None:
                        fh, fr = fast.evaluate(trial)
                        if fr < gamma_threshold - 1e-10 or fh <= best_h:
                            if budget[0] <= 0:
                                break
                            continue
                    tev = evaluate_chain(instantiate(pmc, Instantiation(trial)))
                    if (
                        tev.finite
                        and tev.expected_reward >= gamma_threshold - 1e-12
                        and tev.entropy_bits > best_h + 1e-12
                    ):
                        u = trial
                        best_h, best_r = tev.entropy_bits, tev.expected_reward
                        improved = True
                    if budget[0] <= 0:
                        break
                if budget[0] <= 0:
                    break
            if budget[0] <= 0:
                break
        if not improved:
            step /= 2.0
    return u, best_h, best_r


def _polish(
    pmc: Pmc,
    inst: Instantiation,
    gamma_threshold: float,
    max_evals: int = 60000,
) -> tuple[Instantiation, float, float]:
    """Exact local refinement of a synthesized controller.

    Two certified stages.  First, plain coordinate ascent from the
    incumbent.  Second, support exploration: one row at a time is reset to
    the uniform distribution over a subset of actions and the ascent is
    rerun from there; the outcome replaces the incumbent only when it
    certifies strictly higher entropy with the reward at the threshold.
    Resetting a row crosses the ridges single-row transfers cannot: when
    the reward sits a hair below the threshold because one row leaks mass,
    every transfer is blocked, while zeroing the leak exactly restores
    feasibility at a small entropy cost that other rows then repay.  The
    last memory row is tried first because it is the one played forever
    once memory saturates, so feasibility tends to force it to a vertex.
    Every accepted point is certified by the exact fixed-point evaluators,
    so the refinement cannot report anything the returned controller does
    not achieve.
    """
    budget = [max_evals]
    fast = _FastChainEval.build(pmc)
    u, best_h, best_r = _ascend(pmc, fast, dict(inst.values), gamma_threshold, budget)
    if not math.isfinite(best_h) or best_r < gamma_threshold - FEAS_TOL:
        return Instantiation(u), best_h, best_r
    acts = pmc.actions
    if 2 ** len(acts) - 1 <= 63:
        supports = [
            frozenset(c)
            for size in range(1, len(acts) + 1)
            for c in combinations(acts, size)
        ]
    else:
        supports = [frozenset((a,)) for a in acts]
    rows = [(q, z) for q in range(pmc.k, 0, -1) for z in pmc.observations]
    for q, z in rows:
        for support in supports:
            if budget[0] <= 0:
                return Instantiation(u), best_h, best_r
            start = dict(u)
            share = 1.0 / len(support)
            for a in acts:
                start[GammaParam(q, z, a)] = share if a in support else 0.0
            if fast is not None:
                budget[0] -= 1
                _, fr = fast.evaluate(start)
                if fr < gamma_threshold - 1e-8:
                    continue
            tu, th, tr = _ascend(pmc, fast, start, gamma_threshold, budget)
            if tr >= gamma_threshold - 1e-12 and th > best_h + 1e-12:
                u, best_h, best_r = tu, th, tr
    return Instantiation(u), best_h, best_r


def _run_restart(
    problem: SynthesisProblem,
    cfg: CcpConfig,
    layout: _Layout,
    restart_index: int,
) -> RestartRecord:
    pmc = problem.pmc
    u_exp, nu_exp, eta_exp = initialize(problem, cfg.seed, restart_index)
    tau = cfg.tau0
    trace: list[IterationRecord] = []
    prev: tuple[float, float] | None = None  # (nu_initial, slack)
    converged = False
    nu_init = math.nan
    slack = math.inf
    best_seen = _BestSeen(problem.gamma_threshold)

    for _ in range(cfg.max_iters):
        sp = convexify(problem, (u_exp, nu_exp, eta_exp), tau, cfg, _layout=layout)
        sol = solve_subproblem(sp)
        if sol.status == "failed":
            break
        values = sol.values
        u_sol = {p: values[layout.names[layout.g_idx[p]]] for p in pmc.params}
        nu_sol = {s: values[layout.names[i]] for s, i in layout.nu_idx.items()}
        eta_sol = {s: values[layout.names[i]] for s, i in layout.eta_idx.items()}
        nu_init = nu_sol[pmc.initial]
        slack = sum(max(values[layout.names[i]], 0.0) for i in layout.psi_indices)
        base = 0.0 if problem.mode == "feasibility" else nu_init
        penalized = base - tau * slack
        trace.append(IterationRecord(tau, nu_init, slack, penalized))
        if prev is not None:
            prev_base = 0.0 if problem.mode == "feasibility" else prev[0]
            prev_at_tau = prev_base - tau * prev[1]
            if abs(penalized - prev_at_tau) <= cfg.obj_tol and slack <= cfg.slack_tol:
                converged = True
                u_exp = u_sol
                break
        prev = (nu_init, slack)
        tau_next = min(tau * cfg.tau_mult, cfg.tau_max)
        u_exp, nu_exp, eta_exp = _next_expansion(
            problem, layout, u_exp, u_sol, nu_sol, eta_sol, nu_init, slack, tau_next, best_seen
        )
        tau = tau_next

    inst = _sanitize(pmc, u_exp)
    cert = evaluate_chain(instantiate(pmc, inst))
    entropy, reward, finite = cert.entropy_bits, cert.expected_reward, cert.finite
    # Prefer a reward-feasible point certified along the way when the final
    # iterate is worse or infeasible; certificates are exact either way.
    if best_seen.inst is not None:
        final_feasible = finite and reward >= problem.gamma_threshold - FEAS_TOL
        if not final_feasible or best_seen.entropy > entropy:
            inst, entropy, reward, finite = (
                best_seen.inst,
                best_seen.entropy,
                best_seen.reward,
                True,
            )
    return RestartRecord(
        restart_index=restart_index,
        iterations=len(trace),
        converged=converged,
        slack_final=slack if trace else math.inf,
        nu_initial=nu_init,
        certified_entropy=entropy,
        certified_reward=reward,
        finite=finite,
        instantiation=inst,
        trace=tuple(trace),
    )


def synthesize(problem: SynthesisProblem, cfg: CcpConfig | None = None) -> SynthesisResult:
    """Run ``cfg.restarts`` independent penalty iterations and certify.

    The returned instantiation is the reward-feasible restart of highest
    certified entropy (ties to the lowest restart index).  When no restart
    is both certified reward-feasible and slack-converged the result
    carries ``converged=False`` with the best effort found; a certified
    infinite entropy is reported as ``entropy_bits=inf``.
    """
    cfg = cfg or CcpConfig()
    cfg.check()
    if problem.mode not in MODES:
        raise ValueError(f"unknown mode {problem.mode!r}")
    if problem.gamma_threshold < 0:
        raise ValueError("the reward threshold must be nonnegative")

    if problem.mode == "mdp_bound":
        inner_pmc = build_pmc(to_fully_observable(problem.pmc.pomdp), 1)
        inner = SynthesisProblem(inner_pmc, problem.gamma_threshold, "maxent")
    else:
        inner = problem

    layout = _build_layout(inner, cfg)
    records = [
        _run_restart(inner, cfg, layout, r) for r in range(cfg.restarts)
    ]

    threshold = problem.gamma_threshold - FEAS_TOL
    feasible = [
        r
        for r in records
        if r.finite and math.isfinite(r.certified_entropy) and r.certified_reward >= threshold
    ]
    if feasible:
        best = max(feasible, key=lambda r: (r.certified_entropy, -r.restart_index))
        converged = best.converged
    else:
        finite = [r for r in records if r.finite]
        pool = finite or records
        best = max(pool, key=lambda r: (r.certified_reward, -r.restart_index))
        converged = False

    best_u = best.instantiation
    entropy = best.certified_entropy
    reward = best.certified_reward
    if (
        problem.mode != "feasibility"
        and best.finite
        and math.isfinite(entropy)
        and reward >= threshold
    ):
        polished_u, ph, pr = _polish(inner.pmc, best_u, inner.gamma_threshold)
        if ph > entropy:
            best_u, entropy, reward = polished_u, ph, pr

    return SynthesisResult(
        best_u=best_u,
        entropy_bits=entropy,
        expected_reward=reward,
        nu_initial=best.nu_initial,
        converged=converged,
        iterations=best.iterations,
        restart_index=best.restart_index,
        slack_final=best.slack_final,
        history=tuple(records),
    )
