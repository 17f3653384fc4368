from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rho_paths import _cone
from rho_paths.environment import EnvParams, Environment, generate
from rho_paths.errors import ContractError, ResourceError
from rho_paths.pathcount import (
    CountTable,
    brute_force_count,
    count_exact,
    extremes,
    extremes_dp,
    r_n,
)


def test_all_open_and_all_closed():
    for d, n in [(1, 6), (2, 5), (3, 4)]:
        t = count_exact(Environment.constant(d, n, 1))
        assert t.counts == tuple([0] * n + [(2 * d) ** n])
        e = extremes(t)
        assert (e.max_h, e.min_h) == (n, n)
        t = count_exact(Environment.constant(d, n, 0))
        assert t.counts == tuple([(2 * d) ** n] + [0] * n)
        assert brute_force_count(Environment.constant(d, n, 0)).counts == t.counts
        e = extremes(t)
        assert (e.max_h, e.min_h) == (0, 0)


def test_hand_enumerated_d1_n2():
    env = Environment.from_function(EnvParams(1, 2, 0.5, 0),
                                    lambda t, c: np.full(len(c), 1 if t == 1 else 0))
    assert count_exact(env).counts == (0, 4, 0)
    assert brute_force_count(env).counts == (0, 4, 0)


def test_matches_brute_force_d2_n5():
    env = generate(EnvParams(2, 5, 0.5, 3))
    assert count_exact(env) == brute_force_count(env)


def test_brute_force_d1_n3_sums_to_8():
    for s in range(5):
        assert brute_force_count(generate(EnvParams(1, 3, 0.5, s))).total == 8


def test_random_agreement_small(rng):
    for _ in range(100):
        d = int(rng.integers(1, 3))
        n = int(rng.integers(1, 9))
        env = generate(EnvParams(d, n, float(rng.uniform(0.1, 0.9)), int(rng.integers(2**62))))
        t = count_exact(env)
        assert t == brute_force_count(env)
        assert t.total == (2 * d) ** n


def test_normalization_beyond_int64():
    # the modular path with Chinese remaindering must still be exact
    for d, n in [(1, 80), (3, 30)]:
        t = count_exact(generate(EnvParams(d, n, 0.4, 9)))
        assert t.total == (2 * d) ** n


def test_modular_and_int64_paths_agree():
    env = generate(EnvParams(2, 20, 0.3, 5))
    assert count_exact(env, modular=True) == count_exact(env, modular=False)
    with pytest.raises(ContractError):
        count_exact(generate(EnvParams(3, 30, 0.3, 5)), modular=False)


def test_resource_error_names_scalar_dp():
    env = generate(EnvParams(3, 30, 0.5, 1), materialize=False)
    with pytest.raises(ResourceError, match="log_partition"):
        count_exact(env, budget=1000)


def test_brute_force_limit():
    with pytest.raises(ContractError):
        brute_force_count(generate(EnvParams(3, 10, 0.5, 1), materialize=False))


def test_r_n():
    env = generate(EnvParams(1, 8, 0.5, 21))
    t = brute_force_count(env)
    assert r_n(t, 0.5, 0.0) == t.counts[0]
    assert r_n(t, 0.5, 0.5) == sum(t.counts[4:])
    assert r_n(t, 0.3, 0.3) == sum(t.counts[3:])  # ceil(2.4) = 3
    assert r_n(t, 0.5, 0.3) == sum(t.counts[:3])  # floor(2.4) = 2
    assert r_n(t, 0.5, 1.0) == t.counts[8]
    with pytest.raises(ContractError):
        r_n(t, 0.5, 1.5)


def test_count_table_contracts_and_json():
    with pytest.raises(ContractError):
        CountTable(n=2, d=1, counts=(1, 2))
    with pytest.raises(ContractError):
        CountTable(n=1, d=1, counts=(1, -1))
    t = count_exact(generate(EnvParams(3, 40, 0.5, 2)))
    back = CountTable.from_json(t.to_json())
    assert back == t and back.total == 6**40


def test_support_and_extremes_dp():
    for s in range(10):
        env = generate(EnvParams(3, 10, 0.9, 40 + s))
        t = count_exact(env)
        e, e2 = extremes(t), extremes_dp(env)
        assert e == e2
        assert 0 <= e.min_h <= e.max_h <= env.n
        assert t.counts[e.min_h] >= 1 and t.counts[e.max_h] >= 1
        assert all(c == 0 for k, c in enumerate(t.counts) if not e.min_h <= k <= e.max_h)


def test_extremes_dp_high_density_trend():
    # max H_n / n over paths exceeds p at high density
    fr = [extremes_dp(generate(EnvParams(3, n, 0.9, 12), materialize=False)).max_h / n
          for n in (10, 40, 160)]
    assert all(f >= 0.9 for f in fr[1:])


@given(st.integers(0, 2**32), st.integers(1, 3), st.integers(1, 7), st.data())
def test_monotone_coupling(seed, d, n, data):
    base = generate(EnvParams(d, n, 0.5, seed))
    bits = base._unpacked().copy()
    closed = np.flatnonzero(bits == 0)
    if len(closed) == 0:
        return
    i = int(closed[data.draw(st.integers(0, len(closed) - 1))])
    bits[i] = 1
    off = _cone.layer_offsets(d, n)
    flipped = Environment.from_function(base.params, lambda t, c: bits[off[t] : off[t + 1]])
    a = np.array(count_exact(base).counts, dtype=object)
    b = np.array(count_exact(flipped).counts, dtype=object)
    tail_a = np.cumsum(a[::-1])[::-1]
    tail_b = np.cumsum(b[::-1])[::-1]
    assert all(y >= x for x, y in zip(tail_a, tail_b))
