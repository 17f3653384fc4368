"""Desk-scale acceptance suite.

Each criterion is a function returning ``(passed, detail)``; :func:`run`
times it against its budget and collects :class:`CriterionResult` rows.
Seeds are fixed so that every run of the suite sees the same environments.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .environment import EnvParams, generate
from .pathcount import brute_force_count, count_exact
from .polymer import log_partition_batch, martingale_batch
from .sharp import fourier_invert, sharp_ratio
from .thermo import (
    free_energy_curve,
    geometric_fit,
    lambda_hat,
    legendre,
    meeting_counts,
    return_probability,
    weak_disorder_interval,
)

__all__ = ["CRITERIA", "CriterionResult", "format_table", "run"]


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    runtime: float
    budget: float
    detail: dict = field(default_factory=dict)

    @property
    def within_budget(self) -> bool:
        return self.runtime < self.budget

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        note = "" if self.within_budget else f" (over {self.budget:.0f}s budget)"
        return f"[{mark}] {self.number:2d} {self.name}: {self.runtime:.1f}s{note}"

    def to_dict(self) -> dict:
        return {
            "number": self.number,
            "name": self.name,
            "passed": self.passed,
            "runtime": self.runtime,
            "budget": self.budget,
            "within_budget": self.within_budget,
            "detail": self.detail,
        }


# shared thermodynamic runs, reused by criteria 7, 8 and 12
_CURVES: dict = {}
THERMO_N = 200
THERMO_REPLICAS = 50
THERMO_SEED = 700


def _curve(d: int):
    key = (d, THERMO_N, THERMO_REPLICAS)
    if key not in _CURVES:
        _CURVES[key] = free_energy_curve(EnvParams(d, THERMO_N, 0.5, THERMO_SEED),
                                         replicas=THERMO_REPLICAS)
    return _CURVES[key]


def _random_instances(rng, count, dims, max_n, limit=None):
    out = []
    while len(out) < count:
        d = int(rng.choice(dims))
        n = int(rng.integers(1, max_n[d] + 1))
        if limit is not None and (2 * d) ** n > limit:
            continue
        p = float(rng.uniform(0.05, 0.95))
        out.append(EnvParams(d, n, p, int(rng.integers(0, 2**63))))
    return out


def c01_normalization():
    rng = np.random.default_rng(101)
    bad = []
    for prm in _random_instances(rng, 200, [1, 2, 3], {1: 12, 2: 12, 3: 12}):
        t = count_exact(generate(prm))
        if t.total != (2 * prm.d) ** prm.n:
            bad.append(prm.to_dict())
    return not bad, {"instances": 200, "failures": bad}


def c02_oracle():
    rng = np.random.default_rng(202)
    bad = []
    sizes = []
    for prm in _random_instances(rng, 100, [1, 2, 3], {1: 23, 2: 11, 3: 8}, limit=10**7):
        env = generate(prm)
        sizes.append((2 * prm.d) ** prm.n)
        if count_exact(env).counts != brute_force_count(env).counts:
            bad.append(prm.to_dict())
    return not bad, {"instances": 100, "largest_path_count": max(sizes), "failures": bad}


def c03_partition():
    rng = np.random.default_rng(303)
    betas = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    worst = 0.0
    for prm in _random_instances(rng, 50, [1, 2, 3], {1: 20, 2: 20, 3: 20}):
        env = generate(prm)
        t = count_exact(env)
        lz = log_partition_batch(env, betas)["log_z"].real
        for b, v in zip(betas, lz):
            ref = math.fsum(float(c) * math.exp(b * k) for k, c in enumerate(t.counts))
            worst = max(worst, abs(math.expm1(v - math.log(ref))))
    return worst <= 1e-10, {"max_relative_error": worst, "tolerance": 1e-10}


def c04_derivatives():
    rng = np.random.default_rng(404)
    h = 1e-5
    w1 = w2 = 0.0
    for prm in _random_instances(rng, 50, [1, 2, 3], {1: 30, 2: 30, 3: 30}):
        env = generate(prm, materialize=False)
        b = float(rng.uniform(-2, 2))
        out = log_partition_batch(env, [b - h, b, b + h], derivatives=True)
        lz, d1, d2 = out["log_z"].real, out["d1"], out["d2"]
        fd1 = (lz[2] - lz[0]) / (2 * h)
        fd2 = (d1[2] - d1[0]) / (2 * h)
        w1 = max(w1, abs(fd1 - d1[1]) / abs(d1[1]))
        w2 = max(w2, abs(fd2 - d2[1]) / abs(d2[1]))
    ok = w1 <= 1e-6 and w2 <= 1e-6
    return ok, {"d1_max_relative": w1, "d2_max_relative": w2, "tolerance": 1e-6, "h": h}


def c05_return_probability():
    r = [return_probability(d) for d in (3, 4, 5)]
    ok = abs(r[0].value - 0.3404) <= 0.001 and r[0].value > r[1].value > r[2].value
    return ok, {"pi_3": r[0].value, "pi_3_error": r[0].error, "pi_4": r[1].value,
                "pi_5": r[2].value}


def c06_martingale_mean():
    beta, n, count = 0.3, 50, 2000
    lo, hi = weak_disorder_interval(3, 0.5)
    inside = lo < beta < hi
    base = EnvParams(3, n, 0.5, 606)
    seeds = np.random.SeedSequence(606).generate_state(count, dtype=np.uint64)
    w = np.array([float(martingale_batch(generate(base.with_seed(int(s)), materialize=False),
                                         [beta])[0]) for s in seeds])
    mean, se = float(w.mean()), float(w.std(ddof=1) / math.sqrt(count))
    ok = inside and abs(mean - 1) <= 3 * se
    return ok, {"mean": mean, "standard_error": se, "z": (mean - 1) / se, "inside_u1": inside,
                "environments": count}


def c07_annealed_bound():
    c = _curve(3)
    bound = lambda_hat(c.beta_grid, 0.5, 3)
    excess = c.phi_vals - bound - 3 * c.phi_se
    ok = bool(np.all(excess <= 0))
    return ok, {"max_excess": float(excess.max()), "grid_points": len(c.beta_grid),
                "radius": c.radius, "max_edge_mass": c.max_edge_mass}


def c08_center_value():
    c = _curve(3)
    res = legendre(c, [0.5])
    alpha = float(res.alpha[0])
    tol = 2 * float(np.max(c.phi_se))
    err = abs(alpha - math.log(6))
    return err <= tol, {"alpha_p": alpha, "ln_2d": math.log(6), "error": err, "tolerance": tol,
                        "argmax_beta": float(res.argmax_beta[0])}


def c09_fourier_identity():
    worst, levels = 0.0, 0
    for s in range(10):
        env = generate(EnvParams(3, 24, 0.5, 900 + s))
        t = count_exact(env)
        sup = t.support()
        for k in range(sup[0], sup[1] + 1):
            if t.counts[k] == 0:
                continue
            q = fourier_invert(env, k, window=False, support=sup).value
            worst = max(worst, abs(q / t.counts[k] - 1))
            levels += 1
    return worst <= 1e-6, {"max_relative_error": worst, "levels": levels, "tolerance": 1e-6}


SHARP_N = (50, 100, 200, 400)
# 256 nodes are alias-free at k = n/2 for n < 512: no level k + 256 l lies in [0, n]
SHARP_POINTS = 256


def c10_sharp_prefactor():
    est = sharp_ratio(EnvParams(3, max(SHARP_N), 0.5, 1000), 0.5, SHARP_N,
                      quadrature_points=SHARP_POINTS)
    ratios = [e.prefactor_ratio for e in est]
    dist = [abs(r - 1) for r in ratios]
    ok = 0.9 <= ratios[-1] <= 1.1 and all(b < a for a, b in zip(dist, dist[1:]))
    return ok, {"n": list(SHARP_N), "prefactor_ratio": ratios,
                "limit_ratio": [e.limit_ratio for e in est],
                "aliasing_bound": [e.aliasing_bound for e in est],
                "quadrature_points": [e.quadrature_points for e in est]}


def c11_convexity_growth():
    ns = np.array([50, 100, 200])
    betas = [0.0, 0.5]
    count = 100
    means = np.zeros((len(betas), len(ns)))
    for j, n in enumerate(ns):
        seeds = np.random.SeedSequence(1100 + int(n)).generate_state(count, dtype=np.uint64)
        acc = np.zeros(len(betas))
        for s in seeds:
            env = generate(EnvParams(3, int(n), 0.5, int(s)), materialize=False)
            acc += log_partition_batch(env, betas, radius="auto", derivatives=True)["d2"]
        means[:, j] = acc / count
    fits = []
    ok = True
    for i in range(len(betas)):
        slope, icept = np.polyfit(ns, means[i], 1)
        pred = slope * ns + icept
        r2 = 1 - np.sum((means[i] - pred) ** 2) / np.sum((means[i] - means[i].mean()) ** 2)
        fits.append({"beta": betas[i], "slope": float(slope), "r2": float(r2),
                     "mean_d2": means[i].tolist()})
        ok &= slope > 0 and r2 > 0.9
    return bool(ok), {"fits": fits, "n": ns.tolist()}


def c12_disorder_split():
    gaps = {}
    for d in (1, 3):
        c = _curve(d)
        i = int(np.argmin(np.abs(c.beta_grid - 1.0)))
        gaps[d] = float(lambda_hat(1.0, 0.5, d) - c.phi_vals[i])
    ratio = gaps[1] / gaps[3]
    return ratio >= 5, {"gap_d1": gaps[1], "gap_d3": gaps[3], "ratio": ratio, "threshold": 5,
                        "heuristic": True}


def c13_geometric_meetings():
    pi3 = return_probability(3).value
    counts = meeting_counts(3, 10**5, seed=1300)
    fit = geometric_fit(counts, pi3)
    return fit["p_value"] > 1e-3, {"p_value": fit["p_value"], "chi2": fit["chi2"],
                                   "dof": fit["dof"], "pi_3": pi3}


CRITERIA = [
    (1, "exact normalization", c01_normalization, 10),
    (2, "brute-force oracle equivalence", c02_oracle, 120),
    (3, "partition function vs exact table", c03_partition, 60),
    (4, "derivatives vs finite differences", c04_derivatives, 60),
    (5, "return probability series", c05_return_probability, 30),
    (6, "martingale mean", c06_martingale_mean, 300),
    (7, "annealed bound", c07_annealed_bound, 600),
    (8, "center value of alpha", c08_center_value, 600),
    (9, "Fourier inversion identity", c09_fourier_identity, 300),
    (10, "sharp prefactor trend", c10_sharp_prefactor, 1200),
    (11, "strict convexity growth", c11_convexity_growth, 600),
    (12, "weak disorder split", c12_disorder_split, 600),
    (13, "geometric meeting counts", c13_geometric_meetings, 60),
]


def run_one(number: int) -> CriterionResult:
    for num, name, fn, budget in CRITERIA:
        if num == number:
            t = time.perf_counter()
            passed, detail = fn()
            return CriterionResult(num, name, bool(passed), time.perf_counter() - t, budget,
                                   detail)
    raise KeyError(number)


def run(only=None, progress=None) -> list[CriterionResult]:
    nums = [c[0] for c in CRITERIA] if not only else sorted(set(int(x) for x in only))
    out = []
    for num in nums:
        res = run_one(num)
        out.append(res)
        if progress is not None:
            progress(res)
    return out


def format_table(results) -> str:
    return "\n".join(r.line() for r in results)
