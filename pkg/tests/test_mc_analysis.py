from __future__ import annotations

import math

import numpy as np
import pytest

from _util import random_instantiation, random_layered_pomdp
from maxent_pomdp.fsc import GammaParam, Instantiation
from maxent_pomdp.mc_analysis import (
    classify_states,
    entropy_fixed_point,
    evaluate_chain,
    expected_total_reward,
)
from maxent_pomdp.model import builtin_example
from maxent_pomdp.product import Mc, build_pmc, instantiate


def uniform(pmc) -> Instantiation:
    n = len(pmc.actions)
    return Instantiation(
        {
            GammaParam(q, z, a): 1.0 / n
            for q in range(1, pmc.k + 1)
            for z in pmc.observations
            for a in pmc.actions
        }
    )


def test_one_coin_flip():
    c = Mc.from_rows(
        rows={"i": {"a": 0.5, "b": 0.5}, "a": {"a": 1.0}, "b": {"b": 1.0}},
        initial="i",
        reward={"i": 0.7, "a": 0.0, "b": 0.0},
    )
    res = evaluate_chain(c)
    assert res.finite
    assert res.entropy_bits == pytest.approx(1.0, abs=1e-12)
    assert res.expected_reward == pytest.approx(0.7, abs=1e-12)
    assert res.nu["a"] == 0.0 and res.eta["b"] == 0.0


def test_two_stage_entropy_adds_up():
    # i branches once, then one branch flips again: nu(i) = 1 + 0.5 * 1
    c = Mc.from_rows(
        rows={
            "i": {"x": 0.5, "y": 0.5},
            "x": {"p": 0.5, "q": 0.5},
            "y": {"y": 1.0},
            "p": {"p": 1.0},
            "q": {"q": 1.0},
        },
        initial="i",
    )
    res = entropy_fixed_point(c)
    assert res.entropy_bits == pytest.approx(1.5, abs=1e-12)
    assert res.nu["x"] == pytest.approx(1.0, abs=1e-12)


def test_uniform_ex1_frozen_values():
    # memoryless uniform controller on the first study model: two fair coin
    # flips of state uncertainty and half the reward mass
    pmc = build_pmc(builtin_example("ex1"), 1)
    res = evaluate_chain(instantiate(pmc, uniform(pmc)))
    assert res.finite
    assert res.entropy_bits == pytest.approx(2.0, abs=1e-12)
    assert res.expected_reward == pytest.approx(0.5, abs=1e-12)


def test_divergent_entropy_flagged():
    c = Mc.from_rows(
        rows={"x": {"x": 0.5, "y": 0.5}, "y": {"x": 0.5, "y": 0.5}},
        initial="x",
    )
    res = entropy_fixed_point(c)
    assert not res.finite
    assert res.entropy_bits == math.inf
    assert res.diagnostic


def test_divergent_reward_flagged():
    c = Mc.from_rows(
        rows={"x": {"y": 1.0}, "y": {"x": 1.0}},
        initial="x",
        reward={"x": 0.1, "y": 0.0},
    )
    res = expected_total_reward(c)
    assert not res.finite
    assert res.expected_reward == math.inf
    # the deterministic two-cycle generates no entropy at all
    ent = entropy_fixed_point(c)
    assert ent.finite
    assert ent.entropy_bits == 0.0


def test_unreachable_cycles_are_ignored():
    c = Mc.from_rows(
        rows={
            "i": {"sink": 1.0},
            "sink": {"sink": 1.0},
            "x": {"x": 0.5, "y": 0.5},
            "y": {"x": 0.5, "y": 0.5},
        },
        initial="i",
        reward={"i": 0.0, "sink": 0.0, "x": 5.0, "y": 5.0},
    )
    res = evaluate_chain(c)
    assert res.finite
    assert res.entropy_bits == 0.0
    assert res.expected_reward == 0.0
    assert res.nu["x"] == 0.0


def test_classify_states():
    c = Mc.from_rows(
        rows={
            "i": {"loop": 0.5, "sink": 0.5},
            "loop": {"loop2": 1.0},
            "loop2": {"loop": 1.0},
            "sink": {"sink": 1.0},
            "island": {"island": 1.0},
        },
        initial="i",
    )
    transient, recurrent = classify_states(c)
    assert recurrent == frozenset({"loop", "loop2", "sink"})
    assert "i" in transient
    assert "island" in transient  # unreachable, so it never matters


def test_fixed_point_identity_on_random_chains():
    # nu = L + P nu and eta = R + P eta must hold at every transient state
    rng = np.random.default_rng(41)
    for _ in range(50):
        m = random_layered_pomdp(
            rng,
            n_layers=int(rng.integers(2, 5)),
            width=int(rng.integers(1, 4)),
            n_actions=int(rng.integers(1, 4)),
            n_obs=int(rng.integers(1, 3)),
        )
        pmc = build_pmc(m, int(rng.integers(1, 3)))
        c = instantiate(pmc, random_instantiation(rng, pmc))
        res = evaluate_chain(c)
        assert res.finite
        for s in c.states:
            if s in c.absorbing:
                assert res.nu[s] == 0.0
                continue
            row = c.row(s)
            nu_rhs = c.local_entropy[s] + sum(p * res.nu[t] for t, p in row.items())
            eta_rhs = c.reward[s] + sum(p * res.eta[t] for t, p in row.items())
            if res.nu[s] != 0.0:  # unreachable states are pinned to zero
                assert abs(res.nu[s] - nu_rhs) < 1e-9
                assert abs(res.eta[s] - eta_rhs) < 1e-9


def test_evaluate_chain_merges_both_systems():
    rng = np.random.default_rng(43)
    m = random_layered_pomdp(rng)
    pmc = build_pmc(m, 2)
    c = instantiate(pmc, random_instantiation(rng, pmc))
    joint = evaluate_chain(c)
    ent = entropy_fixed_point(c)
    rew = expected_total_reward(c)
    assert joint.entropy_bits == ent.entropy_bits
    assert joint.expected_reward == rew.expected_reward
    assert joint.finite == (ent.finite and rew.finite)
