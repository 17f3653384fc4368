from __future__ import annotations

import math
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rho_paths import _cone
from rho_paths.environment import (
    EnvParams,
    Environment,
    cone_size,
    generate,
    m_event_probability,
    memory_budget,
    two_step_intermediates,
)
from rho_paths.errors import ContractError, ResourceError


def test_params_validation():
    for bad in [dict(d=0, n=3, p=0.5), dict(d=1, n=0, p=0.5), dict(d=1, n=3, p=0.0),
                dict(d=1, n=3, p=1.0), dict(d=1, n=3, p=0.5, seed=-1)]:
        with pytest.raises(ContractError):
            EnvParams(**bad)


def test_cone_geometry_d1_n3():
    sites = {(t, int(x[0])) for t in range(1, 4) for x in _cone.layer_coords(1, t)}
    assert sites == {(1, -1), (1, 1), (2, 0), (2, -2), (2, 2), (3, -1), (3, 1), (3, -3), (3, 3)}
    assert cone_size(1, 3) == 9
    env = generate(EnvParams(1, 3, 0.4, 5))
    assert env.n_sites == 9


def test_cone_size_counts_parity_sites():
    for d, n in [(1, 5), (2, 6), (3, 4)]:
        brute = 0
        for t in range(1, n + 1):
            grid = np.stack(np.meshgrid(*[np.arange(-t, t + 1)] * d, indexing="ij"), -1)
            l1 = np.abs(grid.reshape(-1, d)).sum(axis=1)
            brute += int(np.sum((l1 <= t) & (l1 % 2 == t % 2)))
        assert cone_size(d, n) == brute


def test_layer_order_is_lexicographic():
    for d, t in [(2, 4), (3, 3)]:
        c = _cone.layer_coords(d, t)
        keys = [tuple(row) for row in c]
        assert keys == sorted(keys)
        assert np.array_equal(_cone.layer_ranks(d, 5, t, c), np.arange(len(c)))


def test_generate_is_deterministic():
    a = generate(EnvParams(1, 2, 0.3, 42))
    b = generate(EnvParams(1, 2, 0.3, 42))
    assert a == b
    assert np.array_equal(a._words, b._words)
    c = generate(EnvParams(2, 9, 0.3, 42))
    d = generate(EnvParams(2, 9, 0.3, 43))
    assert not np.array_equal(c._words, d._words)


def test_lazy_and_packed_agree():
    prm = EnvParams(3, 7, 0.35, 99)
    packed, lazy = generate(prm), generate(prm, materialize=False)
    for t in range(1, 8):
        assert np.array_equal(packed.layer_bits(t), lazy.layer_bits(t))


def test_query_matches_counter_draw():
    prm = EnvParams(2, 6, 0.5, 7)
    env = generate(prm)
    for t in range(1, 7):
        coords = _cone.layer_coords(2, t)
        ref = _cone.site_bits(prm.seed, prm.p, t, coords)
        assert np.array_equal(env.bits_at(t, coords), ref)
        assert env.query(t, coords[0]) == ref[0]


def test_query_outside_cone_raises():
    env = generate(EnvParams(2, 4, 0.5, 1))
    with pytest.raises(ContractError):
        env.query(2, (3, 0))  # |x|_1 > t
    with pytest.raises(ContractError):
        env.query(2, (1, 0))  # wrong parity
    with pytest.raises(ContractError):
        env.query(5, (1, 0))  # beyond the horizon
    with pytest.raises(ContractError):
        env.query(0, (0, 0))


@given(
    d=st.integers(1, 3),
    t=st.integers(-1, 8),
    x=st.lists(st.integers(-9, 9), min_size=3, max_size=3),
)
def test_cone_discipline_fuzz(d, t, x):
    env = generate(EnvParams(d, 6, 0.5, 11))
    pt = np.array(x[:d])
    l1 = int(np.abs(pt).sum())
    legal = 1 <= t <= 6 and l1 <= t and (l1 - t) % 2 == 0
    if legal:
        bit = env.query(t, pt)
        assert bit == _cone.site_bits(11, 0.5, t, pt[None, :])[0]
    else:
        with pytest.raises(ContractError):
            env.query(t, pt)


def test_open_fraction_binomial():
    # d=2, n=50, p=1/2 over 10^4 replicas: pooled open fraction within 3 sigma
    d, n, reps = 2, 50, 10**4
    coords = [_cone.layer_coords(d, t) for t in range(1, n + 1)]
    sites = sum(len(c) for c in coords)
    opened = 0
    for s in range(reps):
        for t, c in enumerate(coords, start=1):
            opened += int(_cone.site_bits(s, 0.5, t, c).sum())
    sigma = 0.5 / math.sqrt(sites * reps)
    assert abs(opened / (sites * reps) - 0.5) <= 3 * sigma


def test_per_site_marginals_chi_square():
    # per-site open counts over 10^4 replicas are Binomial(10^4, p)
    d, n, p, reps = 2, 10, 0.3, 10**4
    coords = [_cone.layer_coords(d, t) for t in range(1, n + 1)]
    counts = np.zeros(sum(len(c) for c in coords))
    for s in range(reps):
        bits = np.concatenate([_cone.site_bits(1000 + s, p, t, c)
                               for t, c in enumerate(coords, start=1)])
        counts += bits
    chi2 = float(np.sum((counts - reps * p) ** 2 / (reps * p * (1 - p))))
    pval = stats.chi2.sf(chi2, len(counts))
    assert pval > 1e-3


def test_shifted_view_identity():
    env = generate(EnvParams(2, 6, 0.5, 3))
    view = env.shifted_view(0, (0, 0))
    for t in range(1, 7):
        c = _cone.layer_coords(2, t)
        assert np.array_equal(view.bits_at(t, c), env.bits_at(t, c))


def test_shifted_view_definition():
    env = generate(EnvParams(2, 8, 0.5, 3))
    view = env.shifted_view(2, (1, 0), horizon=5)
    for t in range(1, 6):
        for x in _cone.layer_coords(2, t):
            # (t+2, x+e1) is outside the parent cone when |x+e1|_1 > t+2; the
            # counter-based parent regenerates it
            direct = _cone.site_bits(3, 0.5, t + 2, (x + np.array([1, 0]))[None, :])[0]
            assert view.query(t, x) == direct


def test_shift_composition():
    env = generate(EnvParams(3, 12, 0.5, 8), materialize=False)
    a = env.shifted_view(2, (1, 1, 0)).shifted_view(3, (0, -1, 1))
    b = env.shifted_view(5, (1, 0, 1))
    assert a.m == b.m == 5
    for t in range(1, 6):
        c = _cone.layer_coords(3, t)
        assert np.array_equal(a.bits_at(t, c), b.bits_at(t, c))


def test_view_escaping_non_regenerable_parent_raises():
    env = Environment.constant(2, 5, 1)
    env.shifted_view(2, (1, 1), horizon=3)  # fits inside
    with pytest.raises(ContractError):
        env.shifted_view(2, (1, 1), horizon=4)
    with pytest.raises(ContractError):
        env.shifted_view(1, (1, 1))  # parity mismatch
    loaded = Environment.from_bytes(generate(EnvParams(2, 5, 0.5, 1)).to_bytes())
    with pytest.raises(ContractError):
        loaded.shifted_view(3, (0, 0), horizon=3)


def test_disjoint_views_uncorrelated():
    env = generate(EnvParams(1, 4, 0.5, 77), materialize=False)
    a = env.shifted_view(10, (-1000,), horizon=1)
    b = env.shifted_view(10, (1000,), horizon=1)
    xs = np.arange(-99999, 100000, 2, dtype=np.int64)[:, None]
    fa = a._field(1, xs).astype(float)
    fb = b._field(1, xs).astype(float)
    r = np.corrcoef(fa, fb)[0, 1]
    assert abs(r) <= 3 / math.sqrt(len(fa))


def test_serialization_round_trip(tmp_path):
    env = generate(EnvParams(3, 6, 0.3, 2**63 + 5))
    data = env.to_bytes()
    magic, d, n, p, seed = struct.unpack_from("<8sIIdQ", data)
    assert (magic, d, n, p, seed) == (b"RHOPATH1", 3, 6, 0.3, 2**63 + 5)
    assert len(data) == 32 + 8 * ((cone_size(3, 6) + 63) // 64)
    path = tmp_path / "env.bin"
    env.save(path)
    back = Environment.load(path)
    assert back == env
    assert back.params == env.params
    with pytest.raises(ContractError):
        Environment.from_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(ContractError):
        Environment.from_bytes(data[:-8])


def test_lazy_environment_serializes_identically():
    prm = EnvParams(2, 7, 0.6, 1)
    assert generate(prm, materialize=False).to_bytes() == generate(prm).to_bytes()


def test_memory_budget(monkeypatch):
    monkeypatch.delenv("RHO_PATHS_MEM_BUDGET", raising=False)
    assert memory_budget() == 2 * 1024**3
    monkeypatch.setenv("RHO_PATHS_MEM_BUDGET", "512M")
    assert memory_budget() == 512 * 1024**2
    assert memory_budget(1000) == 1000
    with pytest.raises(ResourceError, match="budget of 64 bytes"):
        generate(EnvParams(3, 20, 0.5, 1), budget=64)
    monkeypatch.setenv("RHO_PATHS_MEM_BUDGET", "1K")
    with pytest.raises(ResourceError, match="1024 bytes"):
        generate(EnvParams(3, 20, 0.5, 1))
    # lazy environments do not store bits, so no budget applies
    generate(EnvParams(3, 20, 0.5, 1), materialize=False)


def test_constant_fixtures():
    env = Environment.constant(2, 4, 1)
    assert all(env.layer_bits(t).all() for t in range(1, 5))
    env = Environment.constant(2, 4, 0)
    assert not any(env.layer_bits(t).any() for t in range(1, 5))


def test_two_step_intermediates():
    assert len(two_step_intermediates(np.zeros(3, int))) == 6
    assert len(two_step_intermediates(np.array([1, 1, 0]))) == 2
    assert len(two_step_intermediates(np.array([2, 0, 0]))) == 1


def test_m_event_probability_examples():
    assert m_event_probability(3, 0.3, (2, 0, 0)) == 0.0
    assert m_event_probability(1, 0.5, (0,)) == pytest.approx(0.5, abs=1e-15)
    assert m_event_probability(2, 0.3, (1, -1)) == pytest.approx(1 - 0.3**2 - 0.7**2)
    assert m_event_probability(2, 0.3, (0, 0)) == pytest.approx(1 - 0.3**4 - 0.7**4)
    with pytest.raises(ContractError):
        m_event_probability(2, 0.5, (1, 0))
    with pytest.raises(ContractError):
        m_event_probability(2, 0.5, (3, 1))


@pytest.mark.parametrize("x", [(0, 0), (1, 1), (2, 0)])
def test_m_event_probability_monte_carlo(x):
    d, p, m = 2, 0.4, 10**5
    x = np.array(x)
    mids = two_step_intermediates(x)
    hits = 0
    for s in range(m):
        b = _cone.site_bits(s, p, 1, mids)
        hits += int(b.min() != b.max())
    q = m_event_probability(d, p, x)
    sd = math.sqrt(max(q * (1 - q), 1e-12) / m)
    assert abs(hits / m - q) <= 3 * sd + 1e-12
