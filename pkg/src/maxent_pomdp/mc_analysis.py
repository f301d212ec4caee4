"""Exact entropy and expected-total-reward evaluation of a Markov chain.

The entropy of the state process of an absorbing chain is the value at the
initial state of the unique fixed point of

    nu(s) = L(s) + sum_s' P(s' | s) nu(s')      (s transient)
    nu(s) = 0                                    (s recurrent)

where L is the local entropy in bits.  The expected total reward satisfies
the same system with L replaced by the expected immediate reward, again
with a zero boundary on recurrent states.  Both are solved as dense linear
systems over the reachable transient states; models here are desk scale.

The fixed point exists and is the process entropy precisely when every
positive-entropy state is transient, i.e. all entropy accrues before the
chain settles into a recurrent class.  Otherwise the process entropy
diverges and the evaluator reports ``finite=False`` instead of a number;
likewise for rewards on recurrent states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable

import networkx as nx
import numpy as np

from .product import Mc

__all__ = [
    "EvalResult",
    "classify_states",
    "entropy_fixed_point",
    "expected_total_reward",
    "evaluate_chain",
]

#: Residual bound for the linear solves.
RESIDUAL_TOL = 1e-10

#: Local entropy / reward mass below this is treated as zero when deciding
#: divergence on recurrent states.
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class EvalResult:
    """Joint result of the entropy and reward fixed points.

    ``finite`` is False when the requested quantity diverges; the offending
    value is reported as ``inf``.  ``nu`` and ``eta`` are zero on recurrent
    (in particular absorbing) states and on states unreachable from the
    initial state.
    """

    entropy_bits: float
    nu: dict[Hashable, float]
    expected_reward: float
    eta: dict[Hashable, float]
    finite: bool
    diagnostic: str = ""


def classify_states(c: Mc) -> tuple[frozenset[Hashable], frozenset[Hashable]]:
    """Split states into (transient, recurrent).

    Recurrent states are those in closed strongly connected classes of the
    subgraph reachable from the initial state.  Unreachable states are
    reported transient: they never influence the process.
    """
    g = nx.DiGraph()
    g.add_nodes_from(c.states)
    g.add_edges_from((s, t) for (s, t), p in c.trans.items() if p > 0)
    reachable = {c.initial} | nx.descendants(g, c.initial)
    recurrent: set[Hashable] = set()
    for scc in nx.strongly_connected_components(g.subgraph(reachable)):
        if all(t in scc for s in scc for t in g.successors(s)):
            recurrent |= scc
    transient = frozenset(s for s in c.states if s not in recurrent)
    return transient, frozenset(recurrent)


def _solve_system(
    c: Mc, source: dict[Hashable, float], transient: frozenset[Hashable], reachable: set[Hashable]
) -> dict[Hashable, float]:
    """Solve (I - P) x = source over reachable transient states, zero
    elsewhere.  Dense LU; residual refined once and then enforced."""
    solve_states = [s for s in c.states if s in transient and s in reachable]
    values = {s: 0.0 for s in c.states}
    if not solve_states:
        return values
    index = {s: i for i, s in enumerate(solve_states)}
    n = len(solve_states)
    a = np.eye(n)
    b = np.zeros(n)
    for i, s in enumerate(solve_states):
        b[i] = source.get(s, 0.0)
    for (s, t), p in c.trans.items():
        i = index.get(s)
        j = index.get(t)
        if i is not None and j is not None:
            a[i, j] -= p
    x = np.linalg.solve(a, b)
    residual = np.abs(a @ x - b).max()
    if residual > RESIDUAL_TOL:
        x = x + np.linalg.solve(a, b - a @ x)
        residual = np.abs(a @ x - b).max()
        if residual > RESIDUAL_TOL:
            raise ArithmeticError(f"fixed-point residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    for s, i in index.items():
        values[s] = float(x[i])
    return values


def _reachable(c: Mc) -> set[Hashable]:
    g = nx.DiGraph()
    g.add_nodes_from(c.states)
    g.add_edges_from((s, t) for (s, t), p in c.trans.items() if p > 0)
    return {c.initial} | nx.descendants(g, c.initial)


def entropy_fixed_point(c: Mc) -> EvalResult:
    """Process entropy in bits via the linear fixed point.

    ``finite=False`` (entropy inf) when a reachable recurrent state has
    positive local entropy: the chain then keeps generating uncertainty
    forever and the joint entropies diverge.
    """
    transient, recurrent = classify_states(c)
    bad = sorted((str(s) for s in recurrent if c.local_entropy.get(s, 0.0) > ZERO_TOL))
    if bad:
        return EvalResult(
            entropy_bits=math.inf,
            nu={},
            expected_reward=0.0,
            eta={},
            finite=False,
            diagnostic=f"positive local entropy on recurrent states: {', '.join(bad)}",
        )
    reachable = _reachable(c)
    nu = _solve_system(c, c.local_entropy, transient, reachable)
    return EvalResult(
        entropy_bits=max(nu[c.initial], 0.0),
        nu=nu,
        expected_reward=0.0,
        eta={},
        finite=True,
    )


def expected_total_reward(c: Mc) -> EvalResult:
    """Expected total reward via the same linear system with a zero
    boundary on recurrent states; diverges (finite=False) when reward sits
    on a reachable recurrent state."""
    transient, recurrent = classify_states(c)
    bad = sorted((str(s) for s in recurrent if abs(c.reward.get(s, 0.0)) > ZERO_TOL))
    if bad:
        return EvalResult(
            entropy_bits=0.0,
            nu={},
            expected_reward=math.inf,
            eta={},
            finite=False,
            diagnostic=f"nonzero reward on recurrent states: {', '.join(bad)}",
        )
    reachable = _reachable(c)
    eta = _solve_system(c, c.reward, transient, reachable)
    return EvalResult(
        entropy_bits=0.0,
        nu={},
        expected_reward=eta[c.initial],
        eta=eta,
        finite=True,
    )


def evaluate_chain(c: Mc) -> EvalResult:
    """Entropy and reward in one result; finite iff both are."""
    ent = entropy_fixed_point(c)
    rew = expected_total_reward(c)
    return EvalResult(
        entropy_bits=ent.entropy_bits,
        nu=ent.nu,
        expected_reward=rew.expected_reward,
        eta=rew.eta,
        finite=ent.finite and rew.finite,
        diagnostic="; ".join(d for d in (ent.diagnostic, rew.diagnostic) if d),
    )
