"""Thermodynamic functions of the Bernoulli polymer and their conjugates.

Closed forms (``lam``, ``lambda_hat_star``, ``beta_of_rho``), the sampled
free-energy curve with its numerical Legendre conjugate, the weak-disorder
interval and the return probability of the simple random walk.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba as nb
import numpy as np
from scipy import optimize, special, stats
from scipy.interpolate import CubicSpline

from .environment import EnvParams, generate
from .errors import ContractError, DomainError
from .polymer import log_partition_batch

__all__ = [
    "LegendreResult",
    "ReturnProbability",
    "ThermoCurve",
    "beta_of_rho",
    "default_beta_grid",
    "free_energy_curve",
    "geometric_fit",
    "lam",
    "lam_prime",
    "lam_second",
    "lambda_hat",
    "lambda_hat_star",
    "lambda_hat_star_second",
    "legendre",
    "meeting_counts",
    "replica_seeds",
    "return_probability",
    "weak_disorder_interval",
]


# closed forms --------------------------------------------------------------


def lam(beta, p: float):
    """Log-moment generating function ``ln[1 + p(e^beta - 1)]`` of one site."""
    b = np.asarray(beta)
    if np.any(np.abs(np.imag(b)) >= math.pi):
        raise DomainError("lambda is evaluated on |Im beta| < pi only")
    out = np.log1p(p * np.expm1(b))
    if np.ndim(out) == 0:
        return complex(out) if np.iscomplexobj(out) else float(out)
    return out


def lam_prime(beta, p: float):
    e = np.exp(beta)
    return p * e / (1.0 + p * (e - 1.0))


def lam_second(beta, p: float):
    m = lam_prime(beta, p)
    return m * (1.0 - m)


def lambda_hat(beta, p: float, d: int):
    return lam(beta, p) + math.log(2 * d)


def lambda_hat_star(rho, p: float, d: int):
    """Conjugate of ``lambda_hat``; finite on [0, 1] with ``0 ln 0 = 0``."""
    r = np.asarray(rho, dtype=float)
    if np.any((r < 0) | (r > 1)):
        raise DomainError("rho must lie in [0, 1]")
    out = (
        -math.log(2 * d)
        + special.xlogy(r, r) - special.xlogy(r, p)
        + special.xlogy(1 - r, 1 - r) - special.xlogy(1 - r, 1 - p)
    )
    return float(out) if np.ndim(out) == 0 else out


def lambda_hat_star_second(rho):
    """Second derivative ``1/(rho(1-rho))`` of ``lambda_hat_star``."""
    return 1.0 / (rho * (1.0 - rho))


def beta_of_rho(rho, p: float):
    """Unique real beta with ``lam_prime(beta) = rho``."""
    r = np.asarray(rho, dtype=float)
    if np.any((r <= 0) | (r >= 1)):
        raise DomainError("beta_of_rho needs 0 < rho < 1")
    out = np.log((1 - p) * r / (p * (1 - r)))
    return float(out) if np.ndim(out) == 0 else out


# free energy curve ----------------------------------------------------------


def default_beta_grid(beta_min=-4.0, beta_max=4.0, step=0.1) -> np.ndarray:
    k = int(round((beta_max - beta_min) / step))
    return np.round(beta_min + step * np.arange(k + 1), 12)


def replica_seeds(seed: int, replicas: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(replicas, dtype=np.uint64)]


@dataclass(frozen=True)
class ThermoCurve:
    beta_grid: np.ndarray
    phi_vals: np.ndarray
    phi_se: np.ndarray
    n: int
    replicas: int
    d: int | None = None
    p: float | None = None
    seed: int | None = None
    radius: float | None = None
    max_edge_mass: float | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("beta_grid", "phi_vals", "phi_se"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(np.diff(self.beta_grid) <= 0):
            raise ContractError("beta_grid must be strictly increasing")

    def check_shape(self, slack: float = 2.0) -> dict:
        s = slack * np.maximum(self.phi_se[1:], self.phi_se[:-1])
        mono = bool(np.all(np.diff(self.phi_vals) >= -s))
        h = np.diff(self.beta_grid)
        slopes = np.diff(self.phi_vals) / h
        s2 = slack * (self.phi_se[2:] + 2 * self.phi_se[1:-1] + self.phi_se[:-2]) / h[1:]
        convex = bool(np.all(np.diff(slopes) >= -s2 - 1e-12))
        return {"monotone": mono, "convex": convex}

    def to_dict(self) -> dict:
        return {
            "beta_grid": self.beta_grid.tolist(),
            "phi_vals": self.phi_vals.tolist(),
            "phi_se": self.phi_se.tolist(),
            "n": self.n,
            "replicas": self.replicas,
            "d": self.d,
            "p": self.p,
            "seed": self.seed,
            "radius": self.radius,
            "max_edge_mass": self.max_edge_mass,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ThermoCurve":
        keys = ("beta_grid", "phi_vals", "phi_se", "n", "replicas", "d", "p", "seed",
                "radius", "max_edge_mass")
        return cls(**{k: obj.get(k) for k in keys})

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def free_energy_curve(
    params: EnvParams,
    beta_grid=None,
    replicas: int = 10,
    *,
    radius="auto",
    budget: int | None = None,
) -> ThermoCurve:
    """Mean and standard error of ``(1/n) ln Z_n(beta)`` over fresh environments.

    Replica seeds are spawned from ``params.seed``; ``replicas=1`` is the
    single-environment mode, with undefined (NaN) standard errors.
    """
    grid = default_beta_grid() if beta_grid is None else np.asarray(beta_grid, dtype=float)
    if replicas < 1:
        raise ContractError("replicas must be >= 1")
    n = params.n
    vals = np.empty((replicas, len(grid)))
    edge = 0.0
    r_used = None
    for i, s in enumerate(replica_seeds(params.seed, replicas)):
        env = generate(params.with_seed(s), materialize=False)
        out = log_partition_batch(env, grid, radius=radius, budget=budget)
        vals[i] = out["log_z"].real / n
        r_used = out["radius"]
        if out["edge_mass"] is not None:
            edge = max(edge, float(np.max(out["edge_mass"])))
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.full(len(grid), np.nan)
    return ThermoCurve(
        beta_grid=grid,
        phi_vals=mean,
        phi_se=se,
        n=n,
        replicas=replicas,
        d=params.d,
        p=params.p,
        seed=params.seed,
        radius=r_used,
        max_edge_mass=edge if r_used is not None else None,
    )


# Legendre conjugate ---------------------------------------------------------


@dataclass(frozen=True)
class LegendreResult:
    rho_grid: np.ndarray
    conj_vals: np.ndarray
    argmax_beta: np.ndarray
    grid_truncated: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return -self.conj_vals

    def to_dict(self) -> dict:
        return {
            "rho_grid": self.rho_grid.tolist(),
            "conj_vals": self.conj_vals.tolist(),
            "alpha": self.alpha.tolist(),
            "argmax_beta": self.argmax_beta.tolist(),
            "grid_truncated": self.grid_truncated.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LegendreResult":
        return cls(
            np.asarray(obj["rho_grid"], float),
            np.asarray(obj["conj_vals"], float),
            np.asarray(obj["argmax_beta"], float),
            np.asarray(obj["grid_truncated"], bool),
        )


def _golden_max(f, a: float, b: float, tol: float = 1e-10, maxiter: int = 200) -> float:
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def legendre(curve: ThermoCurve, rho_grid) -> LegendreResult:
    """Numerical ``sup_beta (beta rho - phi_n(beta))`` on the sampled curve.

    The discrete maximiser is refined by golden-section search on a cubic
    spline of the curve between its two grid neighbours.  A maximiser on the
    grid boundary is returned unrefined and flagged as grid-truncated.
    """
    rho = np.atleast_1d(np.asarray(rho_grid, dtype=float))
    b = curve.beta_grid
    phi = curve.phi_vals
    spline = CubicSpline(b, phi)
    conj = np.empty(len(rho))
    arg = np.empty(len(rho))
    trunc = np.zeros(len(rho), dtype=bool)
    for i, r in enumerate(rho):
        v = b * r - phi
        j = int(np.argmax(v))
        if j == 0 or j == len(b) - 1:
            trunc[i] = True
            conj[i], arg[i] = v[j], b[j]
            continue
        f = lambda x, r=r: x * r - float(spline(x))
        x = _golden_max(f, b[j - 1], b[j + 1])
        fx = f(x)
        if fx >= v[j]:
            conj[i], arg[i] = fx, x
        else:
            conj[i], arg[i] = v[j], b[j]
    return LegendreResult(rho, conj, arg, trunc)


# weak disorder ----------------------------------------------------------------


def _second_moment_gap(beta, p):
    return lam(2.0 * beta, p) - 2.0 * lam(beta, p)


def weak_disorder_interval(d: int, p: float, pi_d: float | None = None) -> tuple[float, float]:
    """Endpoints of ``{beta : lam(2beta) - 2 lam(beta) < -ln pi_d}``.

    The gap function increases in ``|beta|`` towards ``-ln p`` on the right and
    ``-ln(1-p)`` on the left; when that limit does not exceed the threshold the
    endpoint is infinite.
    """
    if d < 3:
        raise DomainError("the weak-disorder interval is defined for d >= 3 only")
    if pi_d is None:
        pi_d = return_probability(d).value
    c = -math.log(pi_d)

    def side(sign, limit):
        if limit <= c:
            return sign * math.inf
        g = lambda x: _second_moment_gap(sign * x, p) - c
        hi = 1.0
        while g(hi) <= 0:
            hi *= 2.0
        return sign * optimize.bisect(g, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)

    return side(-1.0, -math.log(1 - p)), side(1.0, -math.log(p))


def interval_contains(interval, beta: float, shrink: float = 0.0) -> bool:
    lo, hi = interval
    lo = lo * (1 - shrink) if math.isfinite(lo) else lo
    hi = hi * (1 - shrink) if math.isfinite(hi) else hi
    return lo < beta < hi


def encode_endpoint(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def decode_endpoint(x) -> float:
    return float(x)


# return probability -------------------------------------------------------------


@dataclass(frozen=True)
class ReturnProbability:
    d: int
    value: float
    error: float
    method: str
    details: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"d": self.d, "value": self.value, "error": self.error, "method": self.method,
                "details": self.details}


def _log_p1(m: np.ndarray) -> np.ndarray:
    # log P(1-d walk at 0 after m steps), m even
    return special.gammaln(m + 1) - 2 * special.gammaln(m / 2 + 1) - m * math.log(2.0)


def return_series(d: int, horizon: int) -> np.ndarray:
    """``P(S_t = 0)`` for ``t = 0..horizon`` (zero at odd t).

    Built up one coordinate at a time: with ``j`` of ``t`` steps spent in the
    first ``k-1`` coordinates, ``P_k(t) = sum_j Bin(t, j; (k-1)/k) P_{k-1}(j) P_1(t-j)``.
    Binomial weights beyond 12 standard deviations are dropped.
    """
    t_all = np.arange(horizon + 1)
    even = t_all % 2 == 0
    logp1 = np.full(horizon + 1, -np.inf)
    logp1[even] = _log_p1(t_all[even].astype(float))
    cur = logp1.copy()
    for k in range(2, d + 1):
        q = (k - 1) / k
        nxt = np.full(horizon + 1, -np.inf)
        nxt[0] = 0.0
        for t in range(2, horizon + 1, 2):
            sd = math.sqrt(t * q * (1 - q))
            lo = max(0, int(t * q - 12 * sd - 2))
            hi = min(t, int(t * q + 12 * sd + 2))
            j = np.arange(lo - lo % 2, hi + 1, 2)
            lb = (special.gammaln(t + 1) - special.gammaln(j + 1) - special.gammaln(t - j + 1)
                  + j * math.log(q) + (t - j) * math.log(1 - q))
            nxt[t] = special.logsumexp(lb + cur[j] + logp1[t - j])
        cur = nxt
    out = np.exp(cur)
    out[~even] = 0.0
    return out


_SERIES_HORIZON = 8192


@lru_cache(maxsize=16)
def _series_pi(d: int, horizon: int) -> ReturnProbability:
    probs = return_series(d, horizon)
    g_trunc = float(probs.sum())
    mmax = horizon // 2
    amp = 2.0 * (d / (4.0 * math.pi)) ** (d / 2.0)
    ratio = probs[2 * mmax] / (amp * mmax ** (-d / 2.0))
    c1 = mmax * (ratio - 1.0)
    z0 = float(special.zeta(d / 2.0, mmax + 1))
    z1 = float(special.zeta(d / 2.0 + 1.0, mmax + 1))
    tail = amp * (z0 + c1 * z1)
    tail_err = 2.0 * abs(c1) * amp * z1 + amp * z0 * 1e-12
    g = g_trunc + tail
    value = 1.0 - 1.0 / g
    err = tail_err / g**2 + 1e-12
    return ReturnProbability(
        d, value, err, "series",
        {"green_function": g, "horizon": horizon, "tail": tail, "tail_error": tail_err},
    )


@nb.njit(cache=True)
def _next(state):
    # splitmix64 step; returns (new state, output)
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return state, z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def _mc_returns(d, walks, horizon, seed):
    state = np.uint64(seed)
    two_d = np.uint64(2 * d)
    mask = np.uint64(0xFFFFFFFF)
    pos = np.zeros(d, dtype=np.int64)
    hits = 0
    for _ in range(walks):
        for j in range(d):
            pos[j] = 0
        nz = 0
        for t in range(0, horizon, 2):
            state, r = _next(state)
            # two steps per draw, each by multiply-shift on 32 bits
            for half in range(2):
                u = r & mask if half == 0 else r >> np.uint64(32)
                k = int((u * two_d) >> np.uint64(32))
                j = k % d
                old = pos[j]
                pos[j] = old + 1 if k < d else old - 1
                nz += (pos[j] != 0) - (old != 0)
            if nz == 0:
                hits += 1
                break
    return hits


def return_probability(
    d: int,
    method: str = "series",
    *,
    horizon: int | None = None,
    walks: int = 10**6,
    seed: int = 0,
) -> ReturnProbability:
    """Probability that the d-dimensional simple random walk ever returns to 0.

    ``series`` sums ``P(S_t = 0)`` up to ``horizon`` and closes the series with
    the local-CLT tail ``2 (d/(4 pi m))^{d/2}`` plus a fitted ``1/m`` correction;
    ``monte_carlo`` counts returns of ``walks`` simulated walks within
    ``horizon`` steps and adds half the union-bound tail.
    """
    if d <= 2:
        raise DomainError("the walk is recurrent for d <= 2, the estimate diverges")
    if method == "series":
        return _series_pi(d, int(horizon or _SERIES_HORIZON))
    if method == "monte_carlo":
        horizon = int(horizon or 10**5)
        hits = _mc_returns(d, int(walks), horizon, int(seed) % 2**64)
        frac = hits / walks
        se = math.sqrt(max(frac * (1 - frac), 1e-300) / walks)
        mmax = horizon // 2
        amp = 2.0 * (d / (4.0 * math.pi)) ** (d / 2.0)
        tail = amp * float(special.zeta(d / 2.0, mmax + 1))
        return ReturnProbability(
            d, frac + tail / 2, se + tail / 2, "monte_carlo",
            {"walks": walks, "horizon": horizon, "hits": hits, "standard_error": se,
             "tail_bound": tail},
        )
    raise ContractError(f"unknown method {method!r}; use 'series' or 'monte_carlo'")


@nb.njit(cache=True)
def _meetings(d, pairs, horizon, seed):
    state = np.uint64(seed)
    two_d = np.uint64(2 * d)
    mask = np.uint64(0xFFFFFFFF)
    out = np.zeros(pairs, dtype=np.int64)
    diff = np.zeros(d, dtype=np.int64)
    for i in range(pairs):
        for j in range(d):
            diff[j] = 0
        nz = 0
        c = 0
        for _t in range(horizon):
            state, r = _next(state)
            # one step of each walk; only their difference matters
            ka = int(((r & mask) * two_d) >> np.uint64(32))
            kb = int(((r >> np.uint64(32)) * two_d) >> np.uint64(32))
            j = ka % d
            old = diff[j]
            diff[j] = old + 1 if ka < d else old - 1
            nz += (diff[j] != 0) - (old != 0)
            j = kb % d
            old = diff[j]
            diff[j] = old - 1 if kb < d else old + 1
            nz += (diff[j] != 0) - (old != 0)
            if nz == 0:
                c += 1
        out[i] = c
    return out


def meeting_counts(d: int, pairs: int, horizon: int = 2**14, seed: int = 0) -> np.ndarray:
    """Number of times ``t in [1, horizon]`` with ``S_t = S'_t`` for independent walks."""
    return _meetings(int(d), int(pairs), int(horizon), int(seed) % 2**64)


def geometric_fit(counts: np.ndarray, pi: float, min_expected: float = 5.0) -> dict:
    """Chi-square goodness of fit of counts against ``P(N = k) = (1-pi) pi^k``."""
    counts = np.asarray(counts)
    total = len(counts)
    kmax = 0
    while total * pi ** (kmax + 1) >= min_expected:
        kmax += 1
    # bins 0..kmax-1 and a pooled tail >= kmax
    exp_ = np.array([(1 - pi) * pi**k for k in range(kmax)] + [pi**kmax]) * total
    obs = np.array([np.sum(counts == k) for k in range(kmax)] + [np.sum(counts >= kmax)])
    chi2 = float(((obs - exp_) ** 2 / exp_).sum())
    dof = len(obs) - 1
    return {"chi2": chi2, "dof": dof, "p_value": float(stats.chi2.sf(chi2, dof)),
            "observed": obs.tolist(), "expected": exp_.tolist()}
