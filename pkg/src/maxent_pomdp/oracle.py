"""Independent brute-force and closed-form references.

Everything here recomputes quantities from first principles so the linear
evaluators and the synthesis loop can be checked against arithmetic that
shares none of their code paths:

* ``finite_horizon_entropy``: the joint entropy H(X^T) of the first T
  states by explicit path enumeration.  Process entropy is the limit of
  these, and for chains absorbed by horizon T the limit is attained there.
* ``value_recursion``: the history-based backward recursion whose root
  value equals H(X^{T+1}); no Markov shortcut is taken.
* ``chain_rule_check``: both sides of H(X^n) = H(X^n_k | X^{k-1}) +
  H(X^{k-1}) computed separately.
* ``ex1_closed_form``: the known curve 1 + H_b(threshold) for the first
  builtin example.
* ``policy_grid_search``: exhaustive simplex grid over decision parameters
  with local refinement, certified by the exact evaluators.

Enumeration is capped at horizon 14; these are desk-scale tools by design.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Iterator

from .fsc import GammaParam, Instantiation
from .mc_analysis import evaluate_chain
from .model import Pomdp
from .product import Mc, build_pmc, instantiate

__all__ = [
    "HorizonEntropy",
    "finite_horizon_entropy",
    "chain_rule_check",
    "value_recursion",
    "ex1_closed_form",
    "policy_grid_search",
]

#: Hard cap on enumeration horizons.
MAX_HORIZON = 14

#: Total path probability must reach 1 within this slack.
LEAK_TOL = 1e-9


@dataclass(frozen=True)
class HorizonEntropy:
    """Joint entropy of the first ``horizon`` states."""

    horizon: int
    entropy_bits: float
    path_count: int
    absorbed_mass: float


def _rows(c: Mc) -> dict[Hashable, list[tuple[Hashable, float]]]:
    rows: dict[Hashable, list[tuple[Hashable, float]]] = {s: [] for s in c.states}
    for (s, t), p in c.trans.items():
        if p > 0:
            rows[s].append((t, p))
    return rows


def _self_loops(c: Mc) -> set[Hashable]:
    return {s for s in c.states if c.trans.get((s, s), 0.0) >= 1.0 - 1e-15}


def _check_horizon(t: int) -> None:
    if t < 1:
        raise ValueError(f"horizon must be >= 1, got {t}")
    if t > MAX_HORIZON:
        raise ValueError(f"horizon {t} exceeds the enumeration cap {MAX_HORIZON}")


def _enumerate_paths(c: Mc, horizon: int) -> Iterator[tuple[tuple[Hashable, ...], float]]:
    """Yield every positive-probability state sequence of the given length
    together with its probability."""
    rows = _rows(c)
    stack: list[tuple[tuple[Hashable, ...], float]] = [((c.initial,), 1.0)]
    while stack:
        path, p = stack.pop()
        if len(path) == horizon:
            yield path, p
            continue
        for t, q in rows[path[-1]]:
            stack.append((path + (t,), p * q))


def finite_horizon_entropy(
    c: Mc,
    horizon: int,
    project: Callable[[Hashable], Hashable] | None = None,
) -> HorizonEntropy:
    """H(X^T) in bits by path enumeration.

    With ``project`` the entropy of the projected sequence process is
    computed instead (paths aggregated by their projected images); this is
    how the product-state process is compared against its model-state
    marginal.  Paths that hit a true self-loop are not expanded further:
    the remaining suffix is deterministic, so the sequence and its mass are
    already decided.
    """
    _check_horizon(horizon)
    rows = _rows(c)
    loops = _self_loops(c)
    total = 0.0
    absorbed = 0.0
    entropy = 0.0
    count = 0
    masses: dict[tuple[Hashable, ...], float] = {}
    stack: list[tuple[tuple[Hashable, ...], float]] = [((c.initial,), 1.0)]
    while stack:
        path, p = stack.pop()
        s = path[-1]
        if len(path) == horizon or s in loops:
            # pad the forced suffix of an absorbed path
            if len(path) < horizon:
                path = path + (s,) * (horizon - len(path))
            total += p
            if s in loops:
                absorbed += p
            if project is None:
                count += 1
                if p > 0:
                    entropy -= p * math.log2(p)
            else:
                key = tuple(project(x) for x in path)
                masses[key] = masses.get(key, 0.0) + p
            continue
        for t, q in rows[s]:
            stack.append((path + (t,), p * q))
    if abs(total - 1.0) > LEAK_TOL:
        raise ArithmeticError(f"path probabilities sum to {total!r}; the chain leaks mass")
    if project is not None:
        count = len(masses)
        entropy = -sum(p * math.log2(p) for p in masses.values() if p > 0)
    return HorizonEntropy(
        horizon=horizon,
        entropy_bits=max(entropy, 0.0),
        path_count=count,
        absorbed_mass=absorbed,
    )


def chain_rule_check(c: Mc, n: int, k: int) -> float:
    """|H(X^n) - (H(X^n_k | X^{k-1}) + H(X^{k-1}))|, all three terms
    computed independently from the path distribution."""
    _check_horizon(n)
    if not 1 <= k <= n:
        raise ValueError(f"k must satisfy 1 <= k <= n, got k={k}, n={n}")
    paths = dict(_enumerate_paths(c, n))
    total = sum(paths.values())
    if abs(total - 1.0) > LEAK_TOL:
        raise ArithmeticError(f"path probabilities sum to {total!r}")
    joint = -sum(p * math.log2(p) for p in paths.values() if p > 0)
    prefixes: dict[tuple[Hashable, ...], float] = {}
    for path, p in paths.items():
        pre = path[: k - 1]
        prefixes[pre] = prefixes.get(pre, 0.0) + p
    prefix_entropy = -sum(p * math.log2(p) for p in prefixes.values() if p > 0)
    conditional = 0.0
    for path, p in paths.items():
        if p > 0:
            conditional -= p * math.log2(p / prefixes[path[: k - 1]])
    return abs(joint - (conditional + prefix_entropy))


def value_recursion(c: Mc, horizon: int) -> float:
    """Backward value recursion over explicit histories.

    V(history ending at time t) = H(next state | this history) + expected
    V one step later, stopping after ``horizon`` decision epochs.  The root
    value equals H(X^{horizon+1}) because the initial state is unique.
    The recursion deliberately keys on whole histories, not on states.
    """
    _check_horizon(horizon)
    rows = _rows(c)

    def local_bits(s: Hashable) -> float:
        return -sum(p * math.log2(p) for _, p in rows[s] if p > 0)

    def value(history: tuple[Hashable, ...]) -> float:
        if len(history) > horizon:
            return 0.0
        s = history[-1]
        acc = local_bits(s)
        for t, p in rows[s]:
            acc += p * value(history + (t,))
        return acc

    return value((c.initial,))


def _binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def ex1_closed_form(gamma_threshold: float) -> float:
    """Constrained maximum entropy of the first builtin example.

    For thresholds in [0.5, 1] the optimum is 1 + H_b(threshold): one full
    bit from the first branch plus a binary choice whose reward-earning
    probability is pinned to the threshold.
    """
    if not 0.5 <= gamma_threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0.5, 1], got {gamma_threshold}")
    return 1.0 + _binary_entropy(gamma_threshold)


def _simplex_grid(dim: int, steps: int) -> Iterator[tuple[float, ...]]:
    """All points of the dim-simplex with coordinates i/steps."""
    if dim == 1:
        yield (1.0,)
        return

    def rec(remaining: int, parts: int) -> Iterator[tuple[int, ...]]:
        if parts == 1:
            yield (remaining,)
            return
        for head in range(remaining + 1):
            for tail in rec(remaining - head, parts - 1):
                yield (head,) + tail

    for combo in rec(steps, dim):
        yield tuple(c / steps for c in combo)


def policy_grid_search(
    m: Pomdp,
    k: int,
    gamma_threshold: float,
    resolution: float = 0.02,
) -> tuple[float, Instantiation]:
    """Exhaustive grid search over decision parameters.

    Every decision row ranges over the simplex grid of the given
    resolution; every grid point is certified with the exact evaluators,
    and the best feasible point is refined by 20 rounds of coordinate
    descent with a shrinking step.  Guarded to at most 6 free parameters.
    """
    pmc = build_pmc(m, k)
    row_keys = [(q, z) for q in range(1, k + 1) for z in m.observations]
    n_actions = len(m.actions)
    free = len(row_keys) * (n_actions - 1)
    if free > 6:
        raise ValueError(f"{free} free parameters exceed the grid-search cap of 6")
    steps = max(1, round(1.0 / resolution))

    def assemble(rows: list[tuple[float, ...]]) -> Instantiation:
        values: dict[GammaParam, float] = {}
        for (q, z), row in zip(row_keys, rows):
            for a, p in zip(m.actions, row):
                values[GammaParam(q, z, a)] = p
        return Instantiation(values)

    def certify(rows: list[tuple[float, ...]]) -> tuple[float, float]:
        result = evaluate_chain(instantiate(pmc, assemble(rows)))
        if not result.finite:
            return -math.inf, -math.inf
        return result.entropy_bits, result.expected_reward

    grid_points = list(_simplex_grid(n_actions, steps))
    best_rows: list[tuple[float, ...]] | None = None
    best_entropy = -math.inf

    def search(idx: int, chosen: list[tuple[float, ...]]) -> None:
        nonlocal best_rows, best_entropy
        if idx == len(row_keys):
            entropy, reward = certify(chosen)
            if reward >= gamma_threshold - 1e-12 and entropy > best_entropy:
                best_entropy = entropy
                best_rows = list(chosen)
            return
        for point in grid_points:
            chosen.append(point)
            search(idx + 1, chosen)
            chosen.pop()

    search(0, [])
    if best_rows is None:
        raise ValueError(f"no grid point satisfies the reward threshold {gamma_threshold}")

    # local refinement: shift mass between action pairs with a shrinking step
    step = resolution
    for _ in range(20):
        improved = False
        for r in range(len(best_rows)):
            for i in range(n_actions):
                for j in range(n_actions):
                    if i == j:
                        continue
                    row = list(best_rows[r])
                    if row[i] < step:
                        continue
                    row[i] -= step
                    row[j] += step
                    candidate = best_rows[:r] + [tuple(row)] + best_rows[r + 1 :]
                    entropy, reward = certify(candidate)
                    if reward >= gamma_threshold - 1e-12 and entropy > best_entropy + 1e-12:
                        best_entropy = entropy
                        best_rows = candidate
                        improved = True
        if not improved:
            step /= 2.0
    return best_entropy, assemble(best_rows)
