from __future__ import annotations

import math

import numpy as np
import pytest

from _util import random_chain_fsc, random_instantiation, random_layered_pomdp
from maxent_pomdp.fsc import GammaParam, Instantiation, instantiation_of
from maxent_pomdp.model import builtin_example
from maxent_pomdp.product import Mc, build_pmc, induced_chain, instantiate


def uniform_instantiation(pmc) -> Instantiation:
    n = len(pmc.actions)
    return Instantiation(
        {
            GammaParam(q, z, a): 1.0 / n
            for q in range(1, pmc.k + 1)
            for z in pmc.observations
            for a in pmc.actions
        }
    )


def test_build_pmc_shapes():
    m = builtin_example("ex1")
    pmc = build_pmc(m, 2)
    assert len(pmc.product_states) == 12
    assert pmc.initial == ("sI", 1)
    assert len(pmc.params) == 4
    assert pmc.absorbing == frozenset(
        {(s, q) for s in ("s4", "s5", "s6") for q in (1, 2)}
    )
    with pytest.raises(ValueError):
        build_pmc(m, 0)


def test_memory_advances_as_a_chain():
    pmc = build_pmc(builtin_example("ex1"), 3)
    for (src, dst) in pmc.trans:
        s, q = src
        t, p = dst
        assert p == (q + 1 if q < 3 else 3)


def test_action_independent_rows_fold_to_constants():
    # From an absorbing model state the successor is fixed whatever the
    # action, so the simplex identity reduces the entry to the constant 1.
    pmc = build_pmc(builtin_example("ex1"), 2)
    assert pmc.folded_trans[(("s4", 1), ("s4", 2))] == pytest.approx(1.0)
    assert pmc.folded_trans[(("s5", 2), ("s5", 2))] == pytest.approx(1.0)
    # the branch out of the initial state stays parametric
    assert pmc.folded_trans[(("sI", 1), ("s2", 2))] is None


def test_instantiate_uniform_ex1():
    m = builtin_example("ex1")
    pmc = build_pmc(m, 1)
    c = instantiate(pmc, uniform_instantiation(pmc))
    assert c.trans[(("sI", 1), ("s2", 1))] == pytest.approx(0.5)
    assert c.trans[(("sI", 1), ("s3", 1))] == pytest.approx(0.5)
    assert c.local_entropy[("sI", 1)] == pytest.approx(1.0)
    assert c.local_entropy[("s4", 1)] == 0.0
    # reward 1 sits on action a1 in s2 and s3, nowhere else
    assert c.reward[("s2", 1)] == pytest.approx(0.5)
    assert c.reward[("s3", 1)] == pytest.approx(0.5)
    assert c.reward[("sI", 1)] == 0.0


def test_instantiate_rejects_bad_rows():
    pmc = build_pmc(builtin_example("ex1"), 1)
    with pytest.raises(ValueError, match="misses"):
        instantiate(pmc, Instantiation({GammaParam(1, "z1", "a1"): 1.0}))
    with pytest.raises(ValueError, match="negative"):
        instantiate(
            pmc,
            Instantiation(
                {GammaParam(1, "z1", "a1"): 1.2, GammaParam(1, "z1", "a2"): -0.2}
            ),
        )
    with pytest.raises(ValueError, match="sums to"):
        instantiate(
            pmc,
            Instantiation(
                {GammaParam(1, "z1", "a1"): 0.7, GammaParam(1, "z1", "a2"): 0.7}
            ),
        )


def test_instantiated_rows_are_distributions():
    rng = np.random.default_rng(17)
    for _ in range(30):
        m = random_layered_pomdp(
            rng,
            n_layers=int(rng.integers(2, 4)),
            width=int(rng.integers(1, 3)),
            n_actions=int(rng.integers(2, 4)),
            n_obs=int(rng.integers(1, 3)),
        )
        k = int(rng.integers(1, 4))
        pmc = build_pmc(m, k)
        c = instantiate(pmc, random_instantiation(rng, pmc))
        for s in c.states:
            row = c.row(s)
            assert sum(row.values()) == pytest.approx(1.0, abs=1e-9)
            assert all(p > 0 for p in row.values())
        assert c.absorbing == pmc.absorbing


def test_trans_matches_per_action_decomposition():
    rng = np.random.default_rng(23)
    m = builtin_example("ex2")
    pmc = build_pmc(m, 2)
    u = random_instantiation(rng, pmc)
    for (src, dst), expr in pmc.trans.items():
        total = sum(
            e.evaluate(u.values)
            for (s2, _, d2), e in pmc.trans_by_action.items()
            if s2 == src and d2 == dst
        )
        assert expr.evaluate(u.values) == pytest.approx(total, abs=1e-12)


def test_induced_chain_agrees_with_instantiation():
    rng = np.random.default_rng(31)
    for _ in range(10):
        m = random_layered_pomdp(rng, n_actions=2, n_obs=2)
        k = int(rng.integers(1, 4))
        c = random_chain_fsc(rng, k, m.observations, m.actions)
        direct = induced_chain(m, c)
        via_pmc = instantiate(build_pmc(m, k), instantiation_of(c))
        assert set(direct.trans) == set(via_pmc.trans)
        for key, p in direct.trans.items():
            assert p == pytest.approx(via_pmc.trans[key], abs=1e-12)
        for s, r in direct.reward.items():
            assert r == pytest.approx(via_pmc.reward[s], abs=1e-12)


def test_mc_from_rows():
    c = Mc.from_rows(
        rows={"a": {"b": 0.5, "c": 0.5}, "b": {"b": 1.0}, "c": {"c": 1.0}},
        initial="a",
    )
    assert c.absorbing == frozenset({"b", "c"})
    assert c.local_entropy["a"] == pytest.approx(1.0)
    assert c.local_entropy["b"] == 0.0
    with pytest.raises(ValueError, match="sums"):
        Mc.from_rows(rows={"a": {"a": 0.5}}, initial="a")
    with pytest.raises(ValueError, match="negative"):
        Mc.from_rows(rows={"a": {"a": 1.5, "b": -0.5}, "b": {"b": 1.0}}, initial="a")
