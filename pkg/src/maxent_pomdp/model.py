"""POMDP data model, JSON model format, validation, and builtin examples.

A POMDP here is a tuple (S, s_I, A, P, Z, O, R): finite state set S with a
distinguished initial state, finite action set A available in every state,
transition kernel P(s'|s,a), finite observation set Z with per-state
observation distribution O(z|s), and a nonnegative reward function R(s,a).
The initial state is required to emit a single observation with
probability one, so a controller's first decision cannot depend on chance
beyond the model's own dynamics.

Model files are UTF-8 JSON documents; see ``parse_model`` for the schema.
Probabilities may be written as JSON numbers or as fraction strings
``"p/q"``.  Parsing never renormalizes: what the file states is what the
model holds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import networkx as nx

__all__ = [
    "ModelError",
    "Pomdp",
    "ValidationReport",
    "parse_model",
    "serialize_model",
    "validate",
    "to_fully_observable",
    "builtin_example",
]

#: Accepted slack on distribution row sums in model files.
ROW_SUM_TOL = 1e-9

#: Self-loop probability above which a state counts as absorbing.
ABSORBING_TOL = 1e-12


class ModelError(ValueError):
    """Raised for malformed or inconsistent model documents."""


@dataclass(frozen=True)
class Pomdp:
    """Immutable POMDP.

    ``transition`` maps ``(state, action)`` to a distribution over successor
    states; ``obs_fn`` maps a state to a distribution over observations;
    ``rewards`` is sparse, missing entries mean reward 0.  Instances are
    treated as immutable after construction and are safe to share across
    concurrent readers.
    """

    states: tuple[str, ...]
    initial: str
    actions: tuple[str, ...]
    observations: tuple[str, ...]
    transition: dict[tuple[str, str], dict[str, float]]
    obs_fn: dict[str, dict[str, float]]
    rewards: dict[tuple[str, str], float] = field(default_factory=dict)

    def transition_row(self, state: str, action: str) -> dict[str, float]:
        return self.transition[(state, action)]

    def reward(self, state: str, action: str) -> float:
        return self.rewards.get((state, action), 0.0)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate`: findings plus structural facts."""

    errors: tuple[tuple[str, str], ...]
    warnings: tuple[tuple[str, str], ...]
    absorbing_states: frozenset[str]
    is_dag_to_absorbing: bool

    @property
    def ok(self) -> bool:
        return not self.errors


def _parse_prob(value: object, where: str) -> float:
    """Accept a JSON number or a fraction string such as ``"2/3"``."""
    if isinstance(value, bool):
        raise ModelError(f"{where}: probability must be a number, got a boolean")
    if isinstance(value, (int, float)):
        p = float(value)
    elif isinstance(value, str):
        try:
            p = float(Fraction(value))
        except (ValueError, ZeroDivisionError) as exc:
            raise ModelError(f"{where}: cannot parse probability {value!r}") from exc
    else:
        raise ModelError(f"{where}: probability must be a number or 'p/q' string")
    if p < 0:
        raise ModelError(f"{where}: negative probability {p}")
    return p


def _parse_dist(raw: object, ids: tuple[str, ...], kind: str, where: str) -> dict[str, float]:
    if not isinstance(raw, dict) or not raw:
        raise ModelError(f"{where}: expected a non-empty object mapping {kind} to probability")
    known = set(ids)
    dist: dict[str, float] = {}
    for key, value in raw.items():
        if key not in known:
            raise ModelError(f"{where}: unknown {kind} id {key!r}")
        dist[key] = _parse_prob(value, f"{where}[{key}]")
    total = sum(dist.values())
    if abs(total - 1.0) > ROW_SUM_TOL:
        raise ModelError(f"{where}: distribution sums to {total!r}, expected 1")
    return dist


def _parse_ids(raw: object, key: str) -> tuple[str, ...]:
    if not isinstance(raw, list) or not raw:
        raise ModelError(f"'{key}' must be a non-empty array")
    out: list[str] = []
    seen: set[str] = set()
    for entry in raw:
        if not isinstance(entry, str) or not entry:
            raise ModelError(f"'{key}' entries must be non-empty strings")
        if entry in seen:
            raise ModelError(f"duplicate id {entry!r} in '{key}'")
        seen.add(entry)
        out.append(entry)
    return tuple(out)


def parse_model(text: str) -> Pomdp:
    """Parse a JSON model document.

    Schema: top-level keys ``states`` (array of ids), ``initial`` (id),
    ``actions`` (array), ``observations`` (array), ``transitions`` (array of
    ``{"from": s, "action": a, "to": {s': prob}}``, exactly one entry per
    state-action pair), ``observation_fn`` (array of ``{"state": s, "dist":
    {z: prob}}``; omissible when exactly one observation exists, then every
    state emits it with probability 1), and optional ``rewards`` (array of
    ``{"state": s, "action": a, "value": r}`` with r >= 0; missing entries
    default to 0).

    Distributions are preserved exactly as written; a row whose sum strays
    from 1 by more than ``ROW_SUM_TOL`` is an error, not a repair.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ModelError("top level must be a JSON object")

    required = ("states", "initial", "actions", "observations", "transitions")
    for key in required:
        if key not in doc:
            raise ModelError(f"missing required key '{key}'")

    states = _parse_ids(doc["states"], "states")
    actions = _parse_ids(doc["actions"], "actions")
    observations = _parse_ids(doc["observations"], "observations")
    initial = doc["initial"]
    if initial not in states:
        raise ModelError(f"initial state {initial!r} is not in 'states'")

    transition: dict[tuple[str, str], dict[str, float]] = {}
    raw_trans = doc["transitions"]
    if not isinstance(raw_trans, list):
        raise ModelError("'transitions' must be an array")
    for i, entry in enumerate(raw_trans):
        where = f"transitions[{i}]"
        if not isinstance(entry, dict):
            raise ModelError(f"{where}: expected an object")
        src = entry.get("from")
        act = entry.get("action")
        if src not in states:
            raise ModelError(f"{where}: unknown state id {src!r}")
        if act not in actions:
            raise ModelError(f"{where}: unknown action id {act!r}")
        if (src, act) in transition:
            raise ModelError(f"{where}: duplicate entry for ({src!r}, {act!r})")
        transition[(src, act)] = _parse_dist(entry.get("to"), states, "state", f"{where}.to")
    for s in states:
        for a in actions:
            if (s, a) not in transition:
                raise ModelError(f"missing transition for state {s!r} under action {a!r}")

    obs_fn: dict[str, dict[str, float]] = {}
    if "observation_fn" in doc:
        raw_obs = doc["observation_fn"]
        if not isinstance(raw_obs, list):
            raise ModelError("'observation_fn' must be an array")
        for i, entry in enumerate(raw_obs):
            where = f"observation_fn[{i}]"
            if not isinstance(entry, dict):
                raise ModelError(f"{where}: expected an object")
            s = entry.get("state")
            if s not in states:
                raise ModelError(f"{where}: unknown state id {s!r}")
            if s in obs_fn:
                raise ModelError(f"{where}: duplicate entry for state {s!r}")
            obs_fn[s] = _parse_dist(entry.get("dist"), observations, "observation", f"{where}.dist")
        for s in states:
            if s not in obs_fn:
                raise ModelError(f"missing observation distribution for state {s!r}")
    elif len(observations) == 1:
        only = observations[0]
        obs_fn = {s: {only: 1.0} for s in states}
    else:
        raise ModelError("'observation_fn' is required when more than one observation exists")

    init_row = obs_fn[initial]
    support = [z for z, p in init_row.items() if p > 0]
    if len(support) != 1 or abs(init_row[support[0]] - 1.0) > ROW_SUM_TOL:
        raise ModelError("initial state must emit exactly one observation with probability 1")

    rewards: dict[tuple[str, str], float] = {}
    if "rewards" in doc:
        raw_rewards = doc["rewards"]
        if not isinstance(raw_rewards, list):
            raise ModelError("'rewards' must be an array")
        for i, entry in enumerate(raw_rewards):
            where = f"rewards[{i}]"
            if not isinstance(entry, dict):
                raise ModelError(f"{where}: expected an object")
            s = entry.get("state")
            a = entry.get("action")
            if s not in states:
                raise ModelError(f"{where}: unknown state id {s!r}")
            if a not in actions:
                raise ModelError(f"{where}: unknown action id {a!r}")
            if (s, a) in rewards:
                raise ModelError(f"{where}: duplicate entry for ({s!r}, {a!r})")
            value = entry.get("value")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ModelError(f"{where}: 'value' must be a number")
            if value < 0:
                raise ModelError(f"{where}: negative reward {value}")
            if value != 0:
                rewards[(s, a)] = float(value)

    return Pomdp(states, initial, actions, observations, transition, obs_fn, rewards)


def serialize_model(m: Pomdp) -> str:
    """Serialize to the canonical model format.

    Probabilities are emitted as JSON numbers with full float precision, so
    ``parse_model(serialize_model(m)) == m`` holds exactly.
    """
    doc = {
        "states": list(m.states),
        "initial": m.initial,
        "actions": list(m.actions),
        "observations": list(m.observations),
        "transitions": [
            {"from": s, "action": a, "to": dict(m.transition[(s, a)])}
            for s in m.states
            for a in m.actions
        ],
        "observation_fn": [{"state": s, "dist": dict(m.obs_fn[s])} for s in m.states],
        "rewards": [
            {"state": s, "action": a, "value": m.rewards[(s, a)]}
            for s in m.states
            for a in m.actions
            if (s, a) in m.rewards
        ],
    }
    return json.dumps(doc, indent=2)


def absorbing_states(m: Pomdp) -> frozenset[str]:
    """States whose only successor, under every action, is themselves."""
    out = set()
    for s in m.states:
        if all(m.transition[(s, a)].get(s, 0.0) >= 1.0 - ABSORBING_TOL for a in m.actions):
            out.add(s)
    return frozenset(out)


def validate(m: Pomdp) -> ValidationReport:
    """Report structural findings; never raises.

    Errors cover broken distribution rows, negative rewards, and a
    non-deterministic initial observation.  ``is_dag_to_absorbing`` is true
    when the transition graph restricted to non-absorbing states is acyclic;
    every trajectory then reaches the absorbing set, which guarantees finite
    process entropy for every controller.  When false a warning is emitted,
    since finiteness then depends on the controller.
    """
    errors: list[tuple[str, str]] = []
    warnings: list[tuple[str, str]] = []

    for s in m.states:
        for a in m.actions:
            row = m.transition.get((s, a))
            if row is None:
                errors.append(("missing-row", f"no transition for ({s}, {a})"))
                continue
            total = sum(row.values())
            if abs(total - 1.0) > ROW_SUM_TOL:
                errors.append(("row-sum", f"transition ({s}, {a}) sums to {total!r}"))
            if any(p < 0 for p in row.values()):
                errors.append(("negative-prob", f"transition ({s}, {a}) has a negative entry"))
    for s in m.states:
        row = m.obs_fn.get(s)
        if row is None:
            errors.append(("missing-obs", f"no observation distribution for {s}"))
            continue
        total = sum(row.values())
        if abs(total - 1.0) > ROW_SUM_TOL:
            errors.append(("obs-sum", f"observation row for {s} sums to {total!r}"))
    if m.initial in m.obs_fn:
        init_row = m.obs_fn[m.initial]
        support = [z for z, p in init_row.items() if p > 0]
        if len(support) != 1 or abs(init_row[support[0]] - 1.0) > ROW_SUM_TOL:
            errors.append(("initial-observation", "initial state observation is not deterministic"))
    for (s, a), r in m.rewards.items():
        if r < 0:
            errors.append(("negative-reward", f"reward ({s}, {a}) is {r}"))

    absorbing = absorbing_states(m)
    graph = nx.DiGraph()
    graph.add_nodes_from(s for s in m.states if s not in absorbing)
    for s in m.states:
        if s in absorbing:
            continue
        for a in m.actions:
            for t, p in m.transition.get((s, a), {}).items():
                if p > 0 and t not in absorbing:
                    graph.add_edge(s, t)
    # Acyclicity of the non-absorbing restriction implies every trajectory
    # is eventually absorbed: rows sum to 1, so a terminal class outside the
    # absorbing set would have to contain a cycle.
    is_dag = nx.is_directed_acyclic_graph(graph)
    if not is_dag:
        warnings.append(
            (
                "cycles",
                "non-absorbing states contain a cycle; process entropy is finite "
                "only for controllers that leave the cycle with probability 1",
            )
        )

    return ValidationReport(tuple(errors), tuple(warnings), absorbing, is_dag)


def to_fully_observable(m: Pomdp) -> Pomdp:
    """Replace observations by the states themselves (O(s|s) = 1).

    Controllers for the result observe the true state, so synthesis on it
    yields the fully-observable upper bound on achievable process entropy.
    Idempotent.
    """
    return Pomdp(
        states=m.states,
        initial=m.initial,
        actions=m.actions,
        observations=m.states,
        transition=m.transition,
        obs_fn={s: {s: 1.0} for s in m.states},
        rewards=m.rewards,
    )


def _grid_example() -> Pomdp:
    # 5 columns of 3 rows; movement is column-to-column left to right with
    # column 5 absorbing.  Middle-row states fan out to all three states of
    # the next column; edge-row states can also step to the middle of their
    # own column, which is the only way a column is visited twice.
    columns = [
        ("s1", "sI", "s3"),
        ("s4", "s5", "s6"),
        ("s7", "s8", "s9"),
        ("s10", "s11", "s12"),
        ("s13", "s14", "s15"),
    ]
    states = tuple(s for col in columns for s in col)
    actions = ("a1", "a2", "a3")
    transition: dict[tuple[str, str], dict[str, float]] = {}
    for c, (top, mid, bot) in enumerate(columns):
        if c == len(columns) - 1:
            for s in (top, mid, bot):
                for a in actions:
                    transition[(s, a)] = {s: 1.0}
            continue
        ntop, nmid, nbot = columns[c + 1]
        transition[(mid, "a1")] = {ntop: 1.0}
        transition[(mid, "a2")] = {nmid: 1.0}
        transition[(mid, "a3")] = {nbot: 1.0}
        transition[(top, "a1")] = {ntop: 1.0}
        transition[(top, "a2")] = {nmid: 1.0}
        transition[(top, "a3")] = {mid: 1.0}
        transition[(bot, "a1")] = {nbot: 1.0}
        transition[(bot, "a2")] = {nmid: 1.0}
        transition[(bot, "a3")] = {mid: 1.0}
    rewards = {("s10", "a2"): 1.0, ("s11", "a2"): 1.0, ("s12", "a2"): 1.0}
    return Pomdp(
        states=states,
        initial="sI",
        actions=actions,
        observations=("z1",),
        transition=transition,
        obs_fn={s: {"z1": 1.0} for s in states},
        rewards=rewards,
    )


def builtin_example(name: str) -> Pomdp:
    """Builtin study models.

    ``"ex1"``: six states, two actions, a single observation.  The initial
    state branches to s2 or s3; from either, action a1 (reward 1) leads to
    s5 while a2 leads to s4 or s6; s4, s5, s6 absorb.  Its constrained
    maximum entropy has the closed form 1 + H_b(reward threshold).

    ``"ex2"``: a 15-state, three-action grid of five columns, blind (one
    observation), with reward 1 for playing a2 in column four; column five
    absorbs.  Longer controller memories unlock strictly more entropy until
    the horizon saturates.
    """
    if name == "ex1":
        states = ("sI", "s2", "s3", "s4", "s5", "s6")
        actions = ("a1", "a2")
        transition = {
            ("sI", "a1"): {"s2": 1.0},
            ("sI", "a2"): {"s3": 1.0},
            ("s2", "a1"): {"s5": 1.0},
            ("s2", "a2"): {"s4": 1.0},
            ("s3", "a1"): {"s5": 1.0},
            ("s3", "a2"): {"s6": 1.0},
            ("s4", "a1"): {"s4": 1.0},
            ("s4", "a2"): {"s4": 1.0},
            ("s5", "a1"): {"s5": 1.0},
            ("s5", "a2"): {"s5": 1.0},
            ("s6", "a1"): {"s6": 1.0},
            ("s6", "a2"): {"s6": 1.0},
        }
        rewards = {("s2", "a1"): 1.0, ("s3", "a1"): 1.0}
        return Pomdp(
            states=states,
            initial="sI",
            actions=actions,
            observations=("z1",),
            transition=transition,
            obs_fn={s: {"z1": 1.0} for s in states},
            rewards=rewards,
        )
    if name == "ex2":
        return _grid_example()
    raise ModelError(f"unknown builtin example {name!r} (available: 'ex1', 'ex2')")
