from __future__ import annotations

import json
import math

import numpy as np
import pytest
from scipy import special

from rho_paths.environment import EnvParams, generate
from rho_paths.errors import ContractError, DomainError
from rho_paths.polymer import log_partition_batch
from rho_paths.thermo import (
    LegendreResult,
    ThermoCurve,
    beta_of_rho,
    decode_endpoint,
    default_beta_grid,
    encode_endpoint,
    free_energy_curve,
    geometric_fit,
    interval_contains,
    lam,
    lam_prime,
    lambda_hat,
    lambda_hat_star,
    legendre,
    meeting_counts,
    return_probability,
    return_series,
    weak_disorder_interval,
)

# closed form of the d=3 return probability through the Green function at 0
_G3 = (math.sqrt(6) / (32 * math.pi**3)) * math.prod(
    special.gamma(a / 24) for a in (1, 5, 7, 11)
)
PI3 = 1 - 1 / _G3


def test_lambda_closed_forms():
    assert lam(0.0, 0.3) == 0.0
    h = 1e-6
    assert (lam(h, 0.3) - lam(-h, 0.3)) / (2 * h) == pytest.approx(0.3, rel=1e-9)
    for p in (0.1, 0.5, 0.8):
        assert lam(math.log((1 - p) / p), p) == pytest.approx(math.log(2 * (1 - p)), rel=1e-13)
    assert lam(1e-12, 0.4) == pytest.approx(0.4e-12, rel=1e-9)
    z = lam(0.3 + 1.0j, 0.4)
    assert z == pytest.approx(np.log(1 + 0.4 * (np.exp(0.3 + 1.0j) - 1)), rel=1e-14)
    with pytest.raises(DomainError):
        lam(4.0j, 0.5)


def test_lambda_hat_star():
    for p, d in [(0.3, 1), (0.5, 3)]:
        assert lambda_hat_star(p, p, d) == pytest.approx(-math.log(2 * d), abs=1e-15)
        rho = np.linspace(0.01, 0.99, 99)
        assert np.all(lambda_hat_star(rho, p, d) >= -math.log(2 * d) - 1e-15)
    assert lambda_hat_star(1.0, 0.5, 1) == pytest.approx(0.0, abs=1e-15)
    assert math.isfinite(lambda_hat_star(0.0, 0.3, 2))
    h = 1e-6
    for r in (0.2, 0.6, 0.9):
        fd = (lambda_hat_star(r + h, 0.3, 2) - lambda_hat_star(r - h, 0.3, 2)) / (2 * h)
        assert fd == pytest.approx(beta_of_rho(r, 0.3), rel=1e-7)
    with pytest.raises(DomainError):
        lambda_hat_star(1.2, 0.5, 1)


def test_beta_of_rho():
    assert beta_of_rho(0.3, 0.3) == 0.0
    assert beta_of_rho(0.75, 0.5) == pytest.approx(math.log(3), rel=1e-15)
    rho = np.linspace(0.01, 0.99, 50)
    assert np.max(np.abs(lam_prime(beta_of_rho(rho, 0.2), 0.2) - rho)) <= 1e-12
    for bad in (0.0, 1.0):
        with pytest.raises(DomainError):
            beta_of_rho(bad, 0.5)


def test_legendre_of_exact_annealed_curve():
    grid = default_beta_grid()
    p, d = 0.4, 2
    curve = ThermoCurve(grid, lambda_hat(grid, p, d), np.zeros(len(grid)), n=1, replicas=1)
    rho = np.linspace(0.05, 0.95, 19)
    res = legendre(curve, rho)
    assert not res.grid_truncated.any()
    assert np.max(np.abs(res.conj_vals - lambda_hat_star(rho, p, d))) <= 1e-4
    assert np.allclose(res.argmax_beta, beta_of_rho(rho, p), atol=1e-2)
    # conjugates are convex by construction
    assert np.all(np.diff(res.conj_vals, 2) >= -1e-12)


def test_legendre_flags_truncation():
    grid = default_beta_grid()
    curve = ThermoCurve(grid, lambda_hat(grid, 0.5, 1), np.zeros(len(grid)), n=1, replicas=1)
    res = legendre(curve, [0.001, 0.5, 0.999])
    assert res.grid_truncated.tolist() == [True, False, True]
    assert res.argmax_beta[0] == grid[0] and res.argmax_beta[2] == grid[-1]


def test_curve_contracts():
    with pytest.raises(ContractError):
        ThermoCurve([0.0, 0.0], [1.0, 1.0], [0.0, 0.0], n=1, replicas=1)
    with pytest.raises(ContractError):
        free_energy_curve(EnvParams(1, 5, 0.5, 0), replicas=0)


@pytest.fixture(scope="module")
def small_curve():
    return free_energy_curve(EnvParams(2, 30, 0.5, 77), replicas=20, radius=None)


def test_curve_basic_shape(small_curve):
    c = small_curve
    i0 = int(np.flatnonzero(c.beta_grid == 0)[0])
    assert c.phi_vals[i0] == math.log(4)
    assert c.phi_se[i0] == 0.0
    shape = c.check_shape()
    assert shape["monotone"] and shape["convex"]


def test_annealed_bound_and_sandwich(small_curve):
    c = small_curve
    b, p = c.beta_grid, c.p
    phi = c.phi_vals - math.log(4)
    assert np.all(phi <= lam(b, p) + 3 * c.phi_se)
    assert np.all(phi - b * p >= -3 * c.phi_se)
    assert np.all(phi - b * p <= lam(b, p) - b * p + 3 * c.phi_se)


def test_alpha_bounds_and_monotone_gap(small_curve):
    c = small_curve
    rho = np.linspace(0.5, 0.9, 9)
    res = legendre(c, rho)
    tol = 3 * float(np.max(c.phi_se))
    alpha = res.alpha
    assert abs(alpha[0] - math.log(4)) <= tol
    assert np.all(alpha <= -lambda_hat_star(rho, c.p, 2) + tol)
    gap = alpha + lambda_hat_star(rho, c.p, 2)
    assert np.all(np.diff(gap) <= tol)


def test_curve_json_round_trip(small_curve):
    back = ThermoCurve.from_dict(json.loads(small_curve.to_json()))
    assert np.array_equal(back.beta_grid, small_curve.beta_grid)
    assert np.array_equal(back.phi_vals, small_curve.phi_vals)
    assert back.n == small_curve.n and back.replicas == small_curve.replicas
    res = legendre(small_curve, [0.3, 0.5])
    back = LegendreResult.from_dict(json.loads(json.dumps(res.to_dict())))
    assert np.array_equal(back.conj_vals, res.conj_vals)


def test_single_environment_mode():
    c = free_energy_curve(EnvParams(1, 20, 0.5, 3), [0.0, 1.0], replicas=1)
    assert np.isnan(c.phi_se).all()
    env = generate(EnvParams(1, 20, 0.5, 3).with_seed(c.seed), materialize=False)
    assert c.replicas == 1 and env.n == 20


def test_self_averaging_rate():
    # |phi(2n) - phi(n)| for one environment shrinks like a power <= -0.3
    ns = [16, 32, 64, 128, 256]
    diffs = np.zeros((12, len(ns) - 1))
    for s in range(12):
        vals = [float(log_partition_batch(generate(EnvParams(2, n, 0.5, 300 + s),
                                                   materialize=False), [1.0])["log_z"].real[0]) / n
                for n in ns]
        diffs[s] = np.abs(np.diff(vals))
    slope = np.polyfit(np.log(ns[:-1]), np.log(diffs.mean(axis=0)), 1)[0]
    assert slope <= -0.3


def _u1_closed_form(p, pi):
    # (1 + p(x^2-1)) / (1 + p(x-1))^2 = 1/pi with x = e^beta, solved for x - 1
    c = 1 / pi - 1
    s, q = math.sqrt(c), math.sqrt(p * (1 - p))
    hi = math.log1p(s / (q - p * s)) if q > p * s else math.inf
    y = -s / (q + p * s)
    lo = math.log1p(y) if y > -1 else -math.inf
    return lo, hi


@pytest.mark.parametrize("p", [0.02, 0.1, 0.2, 0.3])
def test_weak_disorder_interval_closed_form(p):
    lo, hi = weak_disorder_interval(3, p, PI3)
    elo, ehi = _u1_closed_form(p, PI3)
    assert lo < 0 < hi
    for a, b in ((lo, elo), (hi, ehi)):
        if math.isinf(b):
            assert a == b
        else:
            assert a == pytest.approx(b, rel=1e-10)


def test_weak_disorder_interval_infinite_endpoints():
    # p = 1/2 exceeds pi_3, and so does 1 - p: both endpoints are infinite
    assert weak_disorder_interval(3, 0.5) == (-math.inf, math.inf)
    for p in (0.35, 0.6, 0.9):
        assert weak_disorder_interval(3, p, PI3)[1] == math.inf
    assert math.isfinite(weak_disorder_interval(3, 0.9, PI3)[0])
    with pytest.raises(DomainError):
        weak_disorder_interval(2, 0.5)


def test_interval_helpers():
    assert interval_contains((-1.0, 2.0), 1.95)
    assert not interval_contains((-1.0, 2.0), 1.95, shrink=0.1)
    assert interval_contains((-math.inf, math.inf), 1e6, shrink=0.1)
    assert encode_endpoint(math.inf) == "inf" and encode_endpoint(-math.inf) == "-inf"
    assert decode_endpoint("-inf") == -math.inf and decode_endpoint(1.5) == 1.5


def test_return_series_values():
    s = return_series(1, 10)
    assert s[2] == pytest.approx(0.5) and s[4] == pytest.approx(6 / 16)
    assert s[1] == 0.0 and s[0] == 1.0
    s2 = return_series(2, 8)
    for t in (2, 4, 6, 8):
        assert s2[t] == pytest.approx(return_series(1, t)[t] ** 2, rel=1e-12)
    s3 = return_series(3, 4)
    assert s3[2] == pytest.approx(1 / 6, rel=1e-12)


def test_return_probability_series():
    r = return_probability(3)
    assert abs(r.value - PI3) <= 1e-6
    assert r.error < 1e-4
    assert abs(r.value - 0.3404) <= 0.001
    r4, r5 = return_probability(4), return_probability(5)
    assert r.value > r4.value > r5.value > 0
    for d in (1, 2):
        with pytest.raises(DomainError):
            return_probability(d)
    with pytest.raises(ContractError):
        return_probability(3, "guess")


def test_return_probability_monte_carlo():
    r = return_probability(3, "monte_carlo", walks=20000, horizon=10**4, seed=5)
    assert r.method == "monte_carlo"
    assert abs(r.value - PI3) <= 3 * r.error
    again = return_probability(3, "monte_carlo", walks=20000, horizon=10**4, seed=5)
    assert again.value == r.value


def test_meeting_counts_geometric():
    counts = meeting_counts(3, 5000, horizon=2**12, seed=9)
    assert counts.min() >= 0
    fit = geometric_fit(counts, PI3)
    assert fit["p_value"] > 1e-3
    assert sum(fit["observed"]) == 5000
    # a grossly wrong parameter is rejected
    assert geometric_fit(counts, 0.6)["p_value"] < 1e-6
