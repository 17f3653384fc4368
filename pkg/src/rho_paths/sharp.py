"""Sharp local asymptotics of ``Q_n(k)`` through the tilted energy law.

For ``beta = beta_n(k)``, the root of ``(d/dbeta) ln Z_n = k``, the count is

    Q_n(k) = exp(-I_n(k) + n ln 2d) (1/2pi) int_{-pi}^{pi} R(u) e^{-iku} du,
    R(u) = Z_n(beta + iu) / Z_n(beta),

with ``I_n(k) = beta k - ln Z_n(beta) + n ln 2d``, the rate of the uniform
path law ``Z_n / (2d)^n``.  The Gaussian approximation of the integral gives
the prefactor ``(2 pi D_n)^{-1/2}`` with ``D_n = (d^2/dbeta^2) ln Z_n``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _lattice
from .environment import EnvParams, cone_size, generate
from .errors import ContractError, DomainError, NumericalError
from .pathcount import count_exact, extremes_dp
from .polymer import log_partition_batch
from .thermo import (
    beta_of_rho,
    interval_contains,
    lambda_hat,
    lambda_hat_star,
    lambda_hat_star_second,
    weak_disorder_interval,
)

__all__ = [
    "DecayProfile",
    "FourierResult",
    "SharpEstimate",
    "beta_n_of_k",
    "char_decay_profile",
    "fourier_invert",
    "i_n",
    "sharp_estimate",
    "sharp_ratio",
]

NEWTON_TOL = 1e-8
NEWTON_MAXITER = 100
U1_SHRINK = 0.1
# exact tables are attempted automatically below this many site-level cells
_EXACT_CELL_LIMIT = 2 * 10**7


def _ln2d(env) -> float:
    return math.log(2 * env.d)


def _sweep(env, betas, radius, derivatives=True):
    out = log_partition_batch(env, np.asarray(betas, dtype=float), radius=radius,
                              derivatives=derivatives)
    return out


def _support(env, radius) -> tuple[int, int]:
    ext = extremes_dp(env, radius=radius)
    return ext.min_h, ext.max_h


def _solve(env, u: float, radius, beta0: float, tol: float, maxiter: int):
    """Safeguarded Newton for ``d1(beta) = u``; returns (beta, log_z, d1, d2, iters)."""
    lo, hi = -math.inf, math.inf
    beta = beta0
    hist = []
    for it in range(1, maxiter + 1):
        out = _sweep(env, [beta], radius)
        lz, g1, g2 = float(out["log_z"][0].real), float(out["d1"][0]), float(out["d2"][0])
        g = g1 - u
        hist.append((beta, g))
        if abs(g) <= tol:
            return beta, lz, g1, g2, it
        if g < 0:
            lo = max(lo, beta)
        else:
            hi = min(hi, beta)
        step = -g / g2 if g2 > 0 else math.copysign(1.0, -g)
        step = max(-4.0, min(4.0, step))
        nxt = beta + step
        if not lo < nxt < hi:
            # Newton left the bracket: bisect when both ends are known
            if math.isfinite(lo) and math.isfinite(hi):
                nxt = 0.5 * (lo + hi)
            else:
                nxt = beta + math.copysign(max(1.0, abs(step)), -g)
        if nxt == beta:
            break
        beta = nxt
    raise NumericalError(
        f"Newton for beta_n did not reach |g| <= {tol} in {maxiter} steps",
        {"target": u, "bracket": [lo, hi], "last": hist[-5:]},
    )


def beta_n_of_k(env, k: int, *, radius="auto", tol: float = NEWTON_TOL,
                maxiter: int = NEWTON_MAXITER, support=None) -> float:
    """Root of ``(d/dbeta) ln Z_n(beta) = k``, started at ``beta_of_rho(k/n)``.

    Raises
    ------
    DomainError
        ``k`` is not strictly between ``min_h`` and ``max_h``.
    NumericalError
        No convergence within ``maxiter`` steps.
    """
    return _beta_n(env, k, radius, tol, maxiter, support)[0]


def _beta_n(env, k, radius, tol=NEWTON_TOL, maxiter=NEWTON_MAXITER, support=None):
    n = env.n
    lo, hi = support if support is not None else _support(env, radius)
    if not lo < k < hi:
        raise DomainError(f"k={k} must lie strictly inside the support ({lo}, {hi})")
    rho = min(max(k / n, 1e-6), 1 - 1e-6)
    return _solve(env, float(k), radius, beta_of_rho(rho, env.p), tol, maxiter)


@dataclass(frozen=True)
class RateValue:
    k: int
    beta_n: float
    i_n: float
    log_z: float
    d_hat: float
    annealed_part: float
    log_w: float
    remainder: float


def i_n(env, k: int, *, radius="auto", support=None) -> RateValue:
    """``I_n(k) = beta_n k - ln Z_n(beta_n) + n ln 2d`` with its decomposition.

    ``annealed_part = n lambda_hat_star(k/n) + n ln 2d`` and ``log_w`` is
    ``ln W_n(beta(k/n))``; ``remainder = I_n - annealed_part + log_w`` is the
    term that vanishes as ``n`` grows.
    """
    beta, lz, _, d2, _ = _beta_n(env, k, radius, support=support)
    n = env.n
    val = beta * k - lz + n * _ln2d(env)
    rho = k / n
    ann = n * (lambda_hat_star(rho, env.p, env.d) + _ln2d(env))
    b_rho = beta_of_rho(rho, env.p)
    out = _sweep(env, [b_rho], radius, derivatives=False)
    log_w = float(out["log_z"][0].real) - n * lambda_hat(b_rho, env.p, env.d)
    return RateValue(k, beta, val, lz, d2, ann, log_w, val - ann + log_w)


# Fourier inversion -----------------------------------------------------------------


@dataclass(frozen=True)
class FourierResult:
    """Fourier-inverted count and its quadrature diagnostics."""

    k: int
    value: float
    log_value: float
    beta: float
    points: int
    undersampled: bool
    aliasing_bound: float
    window_fraction: float | None
    endpoint: bool

    def __float__(self) -> float:
        return self.value


def _u_nodes(points: int) -> np.ndarray:
    # offset trapezoid nodes u_m = pi(2m+1)/M - pi, symmetric about 0
    m = np.arange(points)
    return np.pi * (2 * m + 1) / points - np.pi


def _ratios(env, beta: float, lz: float, u: np.ndarray, radius, closed=False) -> np.ndarray:
    out = log_partition_batch(env, beta + 1j * u, radius=radius, closed=closed)
    return np.exp(out["log_z"] - lz)


def _aliasing_bound(env, k, beta, points, support, radius, log_q) -> float:
    """Bound on sum_{l != 0} Q(k + lM) e^{beta lM} relative to the estimate.

    Each alias term is bounded by the Chernoff estimate
    ``Z(b) e^{-b(k+lM)} e^{beta lM}`` minimised over a few tilts ``b``.
    """
    lo, hi = support
    js = [k + l * points for l in range(-(k // points) - 1, (env.n - k) // points + 2)
          if l != 0 and lo <= k + l * points <= hi]
    if not js:
        return 0.0
    tilts = beta + np.array([-8.0, -4.0, -2.0, -1.0, 1.0, 2.0, 4.0, 8.0])
    lzs = _sweep(env, tilts, radius, derivatives=False)["log_z"].real
    tot = 0.0
    for j in js:
        logb = min(float(lz - b * j) for b, lz in zip(tilts, lzs)) + beta * (j - k)
        tot += math.exp(min(logb - log_q, 700.0))
    return tot


def fourier_invert(
    env,
    k: int,
    quadrature_points: int | None = None,
    *,
    beta: float | None = None,
    radius="auto",
    window: bool = True,
    support=None,
) -> FourierResult:
    """Recover ``Q_n(k)`` from ``Z_n`` on the vertical line through ``beta``.

    The periodic trapezoid rule with ``M`` nodes is exact up to aliasing from
    levels ``k + lM``, which the reported bound covers; it is exact when no
    such level lies in the support.  ``beta`` defaults to ``beta_n(k)``.  At
    a support endpoint, where ``beta_n(k)`` does not exist, the line is moved
    to the tilt with mean ``k -+ 1/2`` and the result flagged ``endpoint``.
    ``window_fraction`` is the share of the integral from ``|u| <= (ln n/n)^{1/2}``.
    """
    n = env.n
    points = int(quadrature_points or 8 * n)
    if points < 2:
        raise ContractError("quadrature_points must be >= 2")
    sup = support if support is not None else _support(env, radius)
    if not sup[0] <= k <= sup[1]:
        raise DomainError(f"k={k} lies outside the support {sup}")
    endpoint = False
    if beta is None:
        if sup[0] < k < sup[1]:
            beta, lz, _, _, _ = _beta_n(env, k, radius, support=sup)
        else:
            endpoint = True
            if sup[0] == sup[1]:
                beta = 0.0
                lz = float(_sweep(env, [0.0], radius, False)["log_z"][0].real)
            else:
                u = k + 0.5 if k == sup[0] else k - 0.5
                rho = min(max(u / n, 1e-6), 1 - 1e-6)
                beta, lz, _, _, _ = _solve(env, u, radius, beta_of_rho(rho, env.p),
                                           NEWTON_TOL, NEWTON_MAXITER)
    else:
        lz = float(_sweep(env, [beta], radius, False)["log_z"][0].real)
    u = _u_nodes(points)
    pos = u[u > 0]
    r = _ratios(env, beta, lz, pos, radius)
    s = 2.0 * np.sum((r * np.exp(-1j * k * pos)).real)
    if np.any(u == 0):
        s += 1.0
    integral = s / points
    if integral <= 0:
        raise NumericalError("Fourier integral is not positive", {"k": k, "integral": integral})
    log_value = lz - beta * k + math.log(integral)
    alias = _aliasing_bound(env, k, beta, points, sup, radius, log_value)
    frac = None
    if window and n > 1:
        eps = math.sqrt(math.log(n) / n)
        x, w = np.polynomial.legendre.leggauss(64)
        ux, wx = eps * x[32:], eps * w[32:]
        rw = _ratios(env, beta, lz, ux, radius)
        part = 2.0 * np.sum(wx * (rw * np.exp(-1j * k * ux)).real) / (2 * math.pi)
        frac = float(part / integral)
    return FourierResult(
        k=int(k),
        value=math.exp(log_value) if log_value < 709 else math.inf,
        log_value=log_value,
        beta=float(beta),
        points=points,
        undersampled=points < 4 * n,
        aliasing_bound=alias,
        window_fraction=frac,
        endpoint=endpoint,
    )


# characteristic function decay ----------------------------------------------------------


@dataclass(frozen=True)
class DecayProfile:
    beta: float
    n: int
    u_grid: np.ndarray
    modulus: np.ndarray
    kappa_local: np.ndarray
    kappa_hat: float
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "n": self.n,
            "u_grid": self.u_grid.tolist(),
            "modulus": self.modulus.tolist(),
            "kappa_local": [None if not np.isfinite(x) else float(x) for x in self.kappa_local],
            "kappa_hat": self.kappa_hat,
            "degenerate": self.degenerate,
        }


def char_decay_profile(env, beta: float, u_grid, *, radius="auto") -> DecayProfile:
    """``|Z_n(beta+iu)/Z_n(beta)|`` on ``u_grid`` against ``e^{-k n u^2} + e^{-k n}``.

    ``kappa_hat`` is the largest ``kappa`` for which the bound holds at every
    grid point (found by bisection, the bound being decreasing in kappa).
    ``degenerate`` marks a grid point ``u != 0`` with modulus one.
    """
    if np.iscomplexobj(beta) and np.imag(beta) != 0:
        raise ContractError("char_decay_profile needs a real beta")
    beta = float(np.real(beta))
    u = np.asarray(u_grid, dtype=float)
    if np.any(np.abs(u) > math.pi):
        raise ContractError("u_grid must lie in [-pi, pi]")
    n = env.n
    lz = float(_sweep(env, [beta], radius, False)["log_z"][0].real)
    mod = np.ones(len(u))
    nz = u != 0
    if nz.any():
        mod[nz] = np.abs(_ratios(env, beta, lz, u[nz], radius, closed=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        kap = np.where(nz, -np.log(mod) / (n * u * u), np.nan)
    degenerate = bool(np.any(mod[nz] >= 1 - 1e-12))

    def ok(kappa):
        return bool(np.all(mod[nz] <= np.exp(-kappa * n * u[nz] ** 2) + math.exp(-kappa * n)
                           + 1e-12))

    if degenerate or not nz.any():
        khat = 0.0
    else:
        a, b = 0.0, 1.0
        while ok(b) and b < 1e6:
            a, b = b, 2 * b
        for _ in range(100):
            c = 0.5 * (a + b)
            if ok(c):
                a = c
            else:
                b = c
        khat = a
    return DecayProfile(beta, n, u, mod, kap, khat, degenerate)


# prefactor comparison --------------------------------------------------------------


@dataclass(frozen=True)
class SharpEstimate:
    n: int
    k: int
    beta_n: float
    i_n: float
    d_hat: float
    q_fourier: float
    log_q_fourier: float
    q_exact: int | None
    prefactor_ratio: float
    limit_ratio: float | None = None
    w_proxy: float | None = None
    window_fraction: float | None = None
    quadrature_points: int | None = None
    undersampled: bool = False
    aliasing_bound: float = 0.0
    inside_u1: bool | None = None
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.q_exact is not None:
            out["q_exact"] = str(self.q_exact)
        return out


def _exact_feasible(env) -> bool:
    return cone_size(env.d, env.n) * (env.n + 1) <= _EXACT_CELL_LIMIT


def sharp_estimate(env, k: int, quadrature_points: int | None = None, *, radius="auto",
                   exact: bool | None = None) -> SharpEstimate:
    """Every intermediate of the sharp formula at one ``(n, k)``."""
    n = env.n
    r = _lattice.resolve_radius(env.d, n, radius)
    sup = _support(env, r)
    rate = i_n(env, k, radius=r, support=sup)
    fr = fourier_invert(env, k, quadrature_points, beta=rate.beta_n, radius=r, support=sup)
    flags = []
    if r is not None:
        flags.append(f"ball-truncated radius {r:g}")
    if fr.undersampled:
        flags.append("undersampled")
    log_formula = -0.5 * math.log(2 * math.pi * rate.d_hat) - rate.i_n + n * _ln2d(env)
    ratio = math.exp(fr.log_value - log_formula)
    q_exact = None
    if exact or (exact is None and r is None and _exact_feasible(env)):
        q_exact = count_exact(env).counts[k]
    return SharpEstimate(
        n=n, k=k, beta_n=rate.beta_n, i_n=rate.i_n, d_hat=rate.d_hat,
        q_fourier=fr.value, log_q_fourier=fr.log_value, q_exact=q_exact,
        prefactor_ratio=ratio, window_fraction=fr.window_fraction,
        quadrature_points=fr.points, undersampled=fr.undersampled,
        aliasing_bound=fr.aliasing_bound, flags=flags,
    )


def sharp_ratio(params: EnvParams, rho: float, n_list, *, quadrature_points=None,
                radius="auto", exact: bool | None = None) -> list[SharpEstimate]:
    """Prefactor ratios along ``n_list`` on one nested family of environments.

    Environments share ``params.seed``, so the horizon-``n`` field is the
    restriction of the largest one.  Besides the ratio against
    ``(2 pi D_n)^{-1/2} e^{-I_n + n ln 2d}`` it reports the ratio against
    ``sqrt(L''(rho)/(2 pi n)) W_n(beta(rho)) e^{-n L(k/n)}``, ``L`` being
    ``lambda_hat_star``, where ``W_n`` stands in for its limit.
    """
    if params.d < 3:
        raise DomainError("sharp_ratio is defined for d >= 3")
    b_rho = beta_of_rho(rho, params.p)
    inside = interval_contains(weak_disorder_interval(params.d, params.p), b_rho, U1_SHRINK)
    out = []
    for n in n_list:
        env = generate(params.with_n(int(n)), materialize=False)
        k = int(round(n * rho))
        qp = quadrature_points(n) if callable(quadrature_points) else quadrature_points
        est = sharp_estimate(env, k, qp, radius=radius, exact=exact)
        lw = float(_sweep(env, [b_rho], radius, False)["log_z"][0].real) - n * lambda_hat(
            b_rho, params.p, params.d)
        log_lim = (0.5 * math.log(lambda_hat_star_second(rho) / (2 * math.pi * n)) + lw
                  - n * lambda_hat_star(k / n, params.p, params.d))
        flags = list(est.flags) + ["W_n proxy for the limit martingale"]
        if not inside:
            flags.append("beta(rho) outside the shrunk weak-disorder interval")
        out.append(SharpEstimate(
            **{**asdict(est), "flags": flags, "inside_u1": inside,
               "limit_ratio": math.exp(est.log_q_fourier - log_lim),
               "w_proxy": math.exp(lw)}
        ))
    return out
