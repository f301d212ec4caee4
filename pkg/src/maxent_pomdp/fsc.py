"""Finite-state controllers with chain memory updates.

A k-FSC carries memory states {1, ..., k} starting in 1, a decision
function gamma(a | q, z) choosing actions from memory state and current
observation, and a memory transition delta(q' | q, z, a).  This module
fixes delta to the deterministic chain

    1 -> 2 -> ... -> k -> k   (regardless of observation and action)

which keeps the induced product chain affine in the gamma parameters.  The
chain family is universal for entropy maximization in the following sense:
``lift`` embeds any chain k-FSC into k' > k memory states by repeating the
last decision row, and the induced state process (hence its entropy) is
unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, NamedTuple

__all__ = [
    "GammaParam",
    "Fsc",
    "Instantiation",
    "chain_delta",
    "is_chain_delta",
    "lift",
    "fsc_from_instantiation",
    "instantiation_of",
    "parse_controller",
    "serialize_controller",
]

#: Row sums of decision/memory distributions may deviate this much before
#: a controller is rejected.
ROW_SUM_TOL = 1e-9

#: Solver noise below this magnitude is clamped to zero, anything worse is
#: an error rather than a repair.
CLAMP_TOL = 1e-12


class GammaParam(NamedTuple):
    """Identifier of one decision probability gamma(a | q, z)."""

    q: int
    z: str
    a: str

    def __str__(self) -> str:  # used in solver dumps and error messages
        return f"gamma[q{self.q},{self.z},{self.a}]"


@dataclass(frozen=True)
class Fsc:
    """A k-FSC: decision rows ``gamma[(q, z)]`` and memory rows
    ``delta[(q, z, a)]``, both genuine probability distributions."""

    k: int
    gamma: dict[tuple[int, str], dict[str, float]]
    delta: dict[tuple[int, str, str], dict[int, float]]
    initial_memory: int = 1

    def observations(self) -> tuple[str, ...]:
        seen: list[str] = []
        for (_, z) in self.gamma:
            if z not in seen:
                seen.append(z)
        return tuple(seen)

    def actions(self) -> tuple[str, ...]:
        seen: list[str] = []
        for row in self.gamma.values():
            for a in row:
                if a not in seen:
                    seen.append(a)
        return tuple(seen)


@dataclass(frozen=True)
class Instantiation:
    """Assignment of reals to the free gamma parameters of a product chain.

    Well-defined when, for every (q, z), the values across actions sum to 1
    within ``ROW_SUM_TOL`` and no value lies below ``-CLAMP_TOL``.
    """

    values: dict[GammaParam, float]

    def __getitem__(self, p: GammaParam) -> float:
        return self.values[p]


def chain_delta(
    k: int, observations: Iterable[str], actions: Iterable[str]
) -> dict[tuple[int, str, str], dict[int, float]]:
    """Deterministic chain memory update: q advances by one until it parks
    at k.  Every memory state has exactly one successor across all (z, a),
    so the controller memory is deterministic."""
    if k < 1:
        raise ValueError(f"memory count must be >= 1, got {k}")
    delta: dict[tuple[int, str, str], dict[int, float]] = {}
    for q in range(1, k + 1):
        succ = q + 1 if q < k else k
        for z in observations:
            for a in actions:
                delta[(q, z, a)] = {succ: 1.0}
    return delta


def chain_successor(q: int, k: int) -> int:
    return q + 1 if q < k else k


def is_chain_delta(c: Fsc) -> bool:
    """True iff the controller's memory update is exactly the chain."""
    expected = chain_delta(c.k, c.observations(), c.actions())
    if set(c.delta) != set(expected):
        return False
    for key, row in expected.items():
        got = c.delta[key]
        (succ,) = row
        if any(abs(p - (1.0 if q == succ else 0.0)) > CLAMP_TOL for q, p in got.items()):
            return False
        if got.get(succ, 0.0) != 1.0 and abs(got.get(succ, 0.0) - 1.0) > CLAMP_TOL:
            return False
    return True


def _check_rows(gamma: dict[tuple[int, str], dict[str, float]]) -> None:
    for (q, z), row in gamma.items():
        total = sum(row.values())
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"decision row (q{q}, {z}) sums to {total!r}, expected 1")


def lift(c: Fsc, target_k: int) -> Fsc:
    """Embed a chain k-FSC into ``target_k`` >= k memory states.

    Decision rows for memory states beyond the original chain repeat the
    last original row, so after step k the lifted controller behaves
    identically and the induced state process is preserved exactly.
    """
    if not is_chain_delta(c):
        raise ValueError("lift is defined for chain-memory controllers only")
    if target_k < c.k:
        raise ValueError(f"cannot lift a {c.k}-FSC down to {target_k} memory states")
    observations = c.observations()
    actions = c.actions()
    gamma: dict[tuple[int, str], dict[str, float]] = {}
    for q in range(1, target_k + 1):
        src = min(q, c.k)
        for z in observations:
            gamma[(q, z)] = dict(c.gamma[(src, z)])
    return Fsc(
        k=target_k,
        gamma=gamma,
        delta=chain_delta(target_k, observations, actions),
        initial_memory=1,
    )


def fsc_from_instantiation(
    u: Instantiation, k: int, observations: Iterable[str], actions: Iterable[str]
) -> Fsc:
    """Transcribe parameter values into a chain k-FSC.

    Entries in [-CLAMP_TOL, 0) are treated as solver noise: clamped to zero
    with the row renormalized.  Larger deviations, including row sums off by
    more than ``ROW_SUM_TOL``, are errors.
    """
    observations = tuple(observations)
    actions = tuple(actions)
    gamma: dict[tuple[int, str], dict[str, float]] = {}
    for q in range(1, k + 1):
        for z in observations:
            row = {}
            for a in actions:
                v = u.values[GammaParam(q, z, a)]
                if v < -CLAMP_TOL:
                    raise ValueError(f"{GammaParam(q, z, a)} = {v!r} is negative beyond tolerance")
                row[a] = max(v, 0.0)
            total = sum(row.values())
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise ValueError(f"decision row (q{q}, {z}) sums to {total!r}, expected 1")
            gamma[(q, z)] = {a: v / total for a, v in row.items()}
    return Fsc(k=k, gamma=gamma, delta=chain_delta(k, observations, actions), initial_memory=1)


def instantiation_of(c: Fsc) -> Instantiation:
    """Read a chain FSC's decision rows back as a parameter assignment."""
    if not is_chain_delta(c):
        raise ValueError("only chain-memory controllers correspond to a gamma instantiation")
    values = {
        GammaParam(q, z, a): p for (q, z), row in c.gamma.items() for a, p in row.items()
    }
    return Instantiation(values)


def serialize_controller(c: Fsc) -> str:
    """Controller JSON: ``{"k": k, "delta": "chain", "gamma": [...]}``."""
    if not is_chain_delta(c):
        raise ValueError("only chain-memory controllers are serializable")
    observations = c.observations()
    doc = {
        "k": c.k,
        "delta": "chain",
        "gamma": [
            {"q": q, "z": z, "dist": dict(c.gamma[(q, z)])}
            for q in range(1, c.k + 1)
            for z in observations
        ],
    }
    return json.dumps(doc, indent=2)


def parse_controller(text: str) -> Fsc:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"controller syntax error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ValueError("controller document must be a JSON object")
    k = doc.get("k")
    if not isinstance(k, int) or k < 1:
        raise ValueError("'k' must be a positive integer")
    if doc.get("delta") != "chain":
        raise ValueError("only delta = \"chain\" controllers are supported")
    rows = doc.get("gamma")
    if not isinstance(rows, list) or not rows:
        raise ValueError("'gamma' must be a non-empty array")
    gamma: dict[tuple[int, str], dict[str, float]] = {}
    for i, entry in enumerate(rows):
        if not isinstance(entry, dict):
            raise ValueError(f"gamma[{i}]: expected an object")
        q = entry.get("q")
        z = entry.get("z")
        dist = entry.get("dist")
        if not isinstance(q, int) or not 1 <= q <= k:
            raise ValueError(f"gamma[{i}]: 'q' must be in 1..{k}")
        if not isinstance(z, str):
            raise ValueError(f"gamma[{i}]: 'z' must be a string")
        if not isinstance(dist, dict) or not dist:
            raise ValueError(f"gamma[{i}]: 'dist' must be a non-empty object")
        if (q, z) in gamma:
            raise ValueError(f"gamma[{i}]: duplicate row for (q{q}, {z})")
        row = {}
        for a, p in dist.items():
            if isinstance(p, bool) or not isinstance(p, (int, float)):
                raise ValueError(f"gamma[{i}]: probability for {a!r} must be a number")
            if p < 0:
                raise ValueError(f"gamma[{i}]: negative probability for {a!r}")
            row[a] = float(p)
        gamma[(q, z)] = row
    observations: list[str] = []
    for (_, z) in gamma:
        if z not in observations:
            observations.append(z)
    actions: list[str] = []
    for row in gamma.values():
        for a in row:
            if a not in actions:
                actions.append(a)
    for q in range(1, k + 1):
        for z in observations:
            if (q, z) not in gamma:
                raise ValueError(f"missing gamma row for (q{q}, {z})")
    _check_rows(gamma)
    return Fsc(k=k, gamma=gamma, delta=chain_delta(k, observations, actions), initial_memory=1)
