"""Product of a POMDP with a chain-memory controller template.

Composing a POMDP with the k-memory chain template yields a parametric
Markov chain over product states <s, q>.  Because the memory update is the
fixed chain, every transition probability is affine (in fact linear) in the
decision parameters gamma(a | q, z):

    P(<s', q'> | <s, q>) = sum_a sum_z O(z | s) P(s' | s, a) gamma(a | q, z)

with q' forced to the chain successor of q.  Expected immediate rewards
attach to product states, again affinely:

    R(<s, q>) = sum_a R(s, a) sum_z O(z | s) gamma(a | q, z).

``build_pmc`` constructs the symbolic chain, ``instantiate`` evaluates it at
a parameter assignment into a concrete Markov chain with per-state local
entropy (base 2, with 0 log 0 = 0) and expected immediate reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable

from .fsc import Fsc, GammaParam, Instantiation, chain_successor, instantiation_of
from .model import ABSORBING_TOL, Pomdp, absorbing_states

__all__ = [
    "AffineExpr",
    "Pmc",
    "Mc",
    "build_pmc",
    "instantiate",
    "induced_chain",
    "mc_to_dot",
]

ProductState = tuple[str, int]

#: Tolerance on instantiated probability rows; worse sums are errors.
ROW_SUM_TOL = 1e-9

#: Instantiated entries below this are errors, in [-NEG_TOL, 0) they are
#: clamped to 0.
NEG_TOL = 1e-9


@dataclass(frozen=True)
class AffineExpr:
    """Affine expression ``constant + sum coeff * gamma_param``."""

    constant: float = 0.0
    terms: dict[GammaParam, float] = field(default_factory=dict)

    def evaluate(self, values: dict[GammaParam, float]) -> float:
        return self.constant + sum(c * values[p] for p, c in self.terms.items())

    def is_constant(self) -> bool:
        return not self.terms

    def scaled(self, factor: float) -> "AffineExpr":
        return AffineExpr(self.constant * factor, {p: c * factor for p, c in self.terms.items()})


def _add_term(acc: dict[GammaParam, float], param: GammaParam, coeff: float) -> None:
    if coeff == 0.0:
        return
    acc[param] = acc.get(param, 0.0) + coeff


def reduce_under_simplex(expr: AffineExpr, actions: tuple[str, ...]) -> float | None:
    """Fold an affine expression to a constant using the row identities
    ``sum_a gamma(a | q, z) = 1``, or return None when it will not fold.

    The arithmetic is exact: coefficients are compared as rationals, so a
    fold never silently absorbs rounding error.  An expression folds iff,
    for every (q, z) it touches, the coefficients across *all* actions are
    identical (absent actions count as coefficient 0).
    """
    groups: dict[tuple[int, str], dict[str, Fraction]] = {}
    for p, c in expr.terms.items():
        groups.setdefault((p.q, p.z), {})[p.a] = Fraction(c)
    total = Fraction(expr.constant)
    for row in groups.values():
        coeffs = {row.get(a, Fraction(0)) for a in actions}
        if len(coeffs) != 1:
            return None
        total += coeffs.pop()
    return float(total)


@dataclass(frozen=True)
class Pmc:
    """Parametric Markov chain induced by a POMDP and the k-chain template.

    ``trans`` holds the action-summed transition expressions, keyed by
    product-state pairs; ``trans_by_action`` keeps the per-action split.
    ``absorbing`` lists every <s, q> whose underlying POMDP state absorbs;
    of these only the ones with q = k are self-loops of the product (the
    rest step deterministically toward them while accruing nothing).
    ``folded_trans`` and ``folded_reward`` cache simplex reductions of the
    expressions; they are derived data, not independent fields.
    """

    product_states: tuple[ProductState, ...]
    initial: ProductState
    params: tuple[GammaParam, ...]
    trans: dict[tuple[ProductState, ProductState], AffineExpr]
    trans_by_action: dict[tuple[ProductState, str, ProductState], AffineExpr]
    reward_expr: dict[ProductState, AffineExpr]
    absorbing: frozenset[ProductState]
    pomdp: Pomdp
    k: int
    folded_trans: dict[tuple[ProductState, ProductState], float | None]
    folded_reward: dict[ProductState, float | None]

    @property
    def actions(self) -> tuple[str, ...]:
        return self.pomdp.actions

    @property
    def observations(self) -> tuple[str, ...]:
        return self.pomdp.observations

    def successors(self, s: ProductState) -> list[ProductState]:
        return [t for (src, t) in self.trans if src == s]


@dataclass(frozen=True)
class Mc:
    """Concrete Markov chain with per-state local entropy and reward.

    ``local_entropy`` is the entropy (bits) of the state's transition row;
    it is 0 at absorbing states.  ``trans`` keeps positive entries only.
    """

    states: tuple[Hashable, ...]
    initial: Hashable
    trans: dict[tuple[Hashable, Hashable], float]
    local_entropy: dict[Hashable, float]
    reward: dict[Hashable, float]
    absorbing: frozenset[Hashable]

    def row(self, s: Hashable) -> dict[Hashable, float]:
        return {t: p for (src, t), p in self.trans.items() if src == s}

    @staticmethod
    def from_rows(
        rows: dict[Hashable, dict[Hashable, float]],
        initial: Hashable,
        reward: dict[Hashable, float] | None = None,
        states: Iterable[Hashable] | None = None,
    ) -> "Mc":
        """Build a chain from explicit rows, deriving local entropy and the
        absorbing set (true self-loops).  Intended for tests and small
        hand-written chains."""
        state_list = tuple(states) if states is not None else tuple(rows)
        trans: dict[tuple[Hashable, Hashable], float] = {}
        local: dict[Hashable, float] = {}
        absorbing = set()
        for s in state_list:
            row = rows[s]
            total = sum(row.values())
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise ValueError(f"row for {s!r} sums to {total!r}")
            h = 0.0
            for t, p in row.items():
                if p < 0:
                    raise ValueError(f"negative probability on ({s!r}, {t!r})")
                if p > 0:
                    trans[(s, t)] = p
                    h -= p * math.log2(p)
            local[s] = 0.0 if h < 1e-15 else h
            if row.get(s, 0.0) >= 1.0 - ABSORBING_TOL:
                absorbing.add(s)
        return Mc(
            states=state_list,
            initial=initial,
            trans=trans,
            local_entropy=local,
            reward=dict(reward or {s: 0.0 for s in state_list}),
            absorbing=frozenset(absorbing),
        )


def build_pmc(m: Pomdp, k: int) -> Pmc:
    """Construct the induced parametric chain for memory count k.

    Product states are S x {1..k} in declaration order, the initial product
    state is <s_I, 1>, and the parameter set is one gamma(a | q, z) per
    memory state, observation, and action.  Rows are checked to sum to the
    constant 1 symbolically: after folding with the simplex identities the
    rational-exact row sum must equal 1 (within the model's own row-sum
    slack, for models written with inexact decimals).
    """
    if k < 1:
        raise ValueError(f"memory count must be >= 1, got {k}")
    states = tuple((s, q) for s in m.states for q in range(1, k + 1))
    params = tuple(
        GammaParam(q, z, a)
        for q in range(1, k + 1)
        for z in m.observations
        for a in m.actions
    )
    absorbing_base = absorbing_states(m)

    trans_by_action: dict[tuple[ProductState, str, ProductState], AffineExpr] = {}
    trans_terms: dict[tuple[ProductState, ProductState], dict[GammaParam, float]] = {}
    reward_terms: dict[ProductState, dict[GammaParam, float]] = {}
    for s in m.states:
        obs_row = m.obs_fn[s]
        for q in range(1, k + 1):
            src = (s, q)
            q_next = chain_successor(q, k)
            r_terms: dict[GammaParam, float] = {}
            for a in m.actions:
                a_terms: dict[ProductState, dict[GammaParam, float]] = {}
                for z, oz in obs_row.items():
                    if oz == 0.0:
                        continue
                    param = GammaParam(q, z, a)
                    for t, pt in m.transition[(s, a)].items():
                        if pt == 0.0:
                            continue
                        _add_term(a_terms.setdefault((t, q_next), {}), param, oz * pt)
                    r = m.reward(s, a)
                    if r != 0.0:
                        _add_term(r_terms, param, r * oz)
                for dst, terms in a_terms.items():
                    trans_by_action[(src, a, dst)] = AffineExpr(0.0, terms)
                    acc = trans_terms.setdefault((src, dst), {})
                    for p, c in terms.items():
                        _add_term(acc, p, c)
            reward_terms[src] = r_terms

    trans = {key: AffineExpr(0.0, terms) for key, terms in trans_terms.items()}
    reward_expr = {s: AffineExpr(0.0, terms) for s, terms in reward_terms.items()}
    folded_trans = {key: reduce_under_simplex(e, m.actions) for key, e in trans.items()}
    folded_reward = {s: reduce_under_simplex(e, m.actions) for s, e in reward_expr.items()}

    pmc = Pmc(
        product_states=states,
        initial=(m.initial, 1),
        params=params,
        trans=trans,
        trans_by_action=trans_by_action,
        reward_expr=reward_expr,
        absorbing=frozenset((s, q) for s in absorbing_base for q in range(1, k + 1)),
        pomdp=m,
        k=k,
        folded_trans=folded_trans,
        folded_reward=folded_reward,
    )
    _check_symbolic_stochasticity(pmc)
    return pmc


def symbolic_row_sum(pmc: Pmc, state: ProductState) -> Fraction | None:
    """Exact row sum of the outgoing expressions after simplex folding.

    Rational arithmetic throughout; None when some (q, z) group has
    non-uniform coefficients, which indicates a genuinely parametric row
    sum and a broken product.
    """
    groups: dict[tuple[int, str], dict[str, Fraction]] = {}
    const = Fraction(0)
    for (src, _), expr in pmc.trans.items():
        if src != state:
            continue
        const += Fraction(expr.constant)
        for p, c in expr.terms.items():
            row = groups.setdefault((p.q, p.z), {})
            row[p.a] = row.get(p.a, Fraction(0)) + Fraction(c)
    total = const
    for row in groups.values():
        coeffs = {row.get(a, Fraction(0)) for a in pmc.actions}
        if len(coeffs) != 1:
            return None
        total += coeffs.pop()
    return total


def _check_symbolic_stochasticity(pmc: Pmc) -> None:
    # Like symbolic_row_sum, but coefficients within one (q, z) group may
    # disagree by up to the model row slack: a model written with inexact
    # decimals passes its own row checks only within ROW_SUM_TOL, and that
    # drift is inherited multiplicatively by the product coefficients.
    for s in pmc.product_states:
        groups: dict[tuple[int, str], dict[str, Fraction]] = {}
        total = Fraction(0)
        for (src, _), expr in pmc.trans.items():
            if src != s:
                continue
            total += Fraction(expr.constant)
            for p, c in expr.terms.items():
                row = groups.setdefault((p.q, p.z), {})
                row[p.a] = row.get(p.a, Fraction(0)) + Fraction(c)
        for row in groups.values():
            coeffs = [row.get(a, Fraction(0)) for a in pmc.actions]
            if max(coeffs) - min(coeffs) > ROW_SUM_TOL:
                raise ValueError(f"product row for {s} does not fold to a constant")
            total += sum(coeffs) / len(coeffs)
        if abs(total - 1) > ROW_SUM_TOL * (len(groups) + 1):
            raise ValueError(f"product row for {s} sums to {float(total)!r}")


def _check_well_defined(pmc: Pmc, u: Instantiation) -> None:
    values = u.values
    missing = [p for p in pmc.params if p not in values]
    if missing:
        raise ValueError(f"instantiation misses parameters, e.g. {missing[0]}")
    for q in range(1, pmc.k + 1):
        for z in pmc.observations:
            row = [values[GammaParam(q, z, a)] for a in pmc.actions]
            if any(v < -NEG_TOL for v in row):
                raise ValueError(f"negative parameter value in row (q{q}, {z})")
            total = sum(row)
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise ValueError(f"row (q{q}, {z}) sums to {total!r}, expected 1")


def instantiate(pmc: Pmc, u: Instantiation) -> Mc:
    """Evaluate every expression at ``u`` and return the concrete chain.

    Entries in [-NEG_TOL, 0) are clamped to 0; rows are renormalized only
    within ``ROW_SUM_TOL`` slack.  Local entropies use base-2 logs with the
    0 log 0 = 0 convention.
    """
    _check_well_defined(pmc, u)
    values = u.values
    rows: dict[ProductState, dict[ProductState, float]] = {s: {} for s in pmc.product_states}
    for (src, dst), expr in pmc.trans.items():
        p = expr.evaluate(values)
        if p < -NEG_TOL:
            raise ValueError(f"transition {src} -> {dst} evaluates to {p!r}")
        if p > 0.0:
            rows[src][dst] = p

    trans: dict[tuple[ProductState, ProductState], float] = {}
    local: dict[ProductState, float] = {}
    for s, row in rows.items():
        total = sum(row.values())
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"instantiated row for {s} sums to {total!r}")
        h = 0.0
        for t, p in row.items():
            p /= total
            trans[(s, t)] = p
            h -= p * math.log2(p)
        local[s] = 0.0 if h < 1e-15 else h

    reward = {}
    for s in pmc.product_states:
        r = pmc.reward_expr[s].evaluate(values)
        reward[s] = 0.0 if abs(r) < 1e-15 else r

    return Mc(
        states=pmc.product_states,
        initial=pmc.initial,
        trans=trans,
        local_entropy=local,
        reward=reward,
        absorbing=pmc.absorbing,
    )


def induced_chain(m: Pomdp, controller: Fsc) -> Mc:
    """Product of a model and a concrete chain controller.

    Raises ValueError when the controller's alphabets do not match the
    model's.
    """
    if set(controller.observations()) - set(m.observations):
        raise ValueError("controller observations do not match the model")
    if set(controller.actions()) - set(m.actions):
        raise ValueError("controller actions do not match the model")
    for (q, z) in ((q, z) for q in range(1, controller.k + 1) for z in m.observations):
        if (q, z) not in controller.gamma:
            raise ValueError(f"controller misses decision row (q{q}, {z})")
    u = instantiation_of(controller)
    # Absent actions in a controller row mean probability 0.
    values = dict(u.values)
    for q in range(1, controller.k + 1):
        for z in m.observations:
            for a in m.actions:
                values.setdefault(GammaParam(q, z, a), 0.0)
    return instantiate(build_pmc(m, controller.k), Instantiation(values))


def mc_to_dot(c: Mc) -> str:
    """Render the chain as a DOT digraph (edge labels with 6 decimals)."""

    def node(s: Hashable) -> str:
        if isinstance(s, tuple):
            return '"' + ",".join(str(x) for x in s) + '"'
        return '"' + str(s) + '"'

    lines = ["digraph chain {"]
    for s in c.states:
        shape = "doublecircle" if s in c.absorbing else "circle"
        mark = ", style=bold" if s == c.initial else ""
        lines.append(f"  {node(s)} [shape={shape}{mark}];")
    for (s, t), p in sorted(c.trans.items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1]))):
        lines.append(f"  {node(s)} -> {node(t)} [label=\"{p:.6f}\"];")
    lines.append("}")
    return "\n".join(lines)
