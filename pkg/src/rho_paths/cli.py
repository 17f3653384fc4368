"""Command-line front end: ``rho-paths <subcommand> [options]``.

Every run prints (or writes to ``--out``) a JSON document
``{"config": ..., "result": ...}`` where ``config`` is the fully resolved
argument set.  Exit codes: 2 usage or contract errors, 3 resource errors,
4 numerical-convergence errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .environment import EnvParams, Environment, generate
from .errors import ContractError, NumericalError, ResourceError

EXIT_USAGE = 2
EXIT_RESOURCE = 3
EXIT_NUMERICAL = 4


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _clean(obj):
    # non-finite floats become the strings "inf", "-inf" and "nan"
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _parse_list(text: str) -> list[float]:
    """``"0.1,0.2,0.3"`` or ``"start:stop:step"`` (stop inclusive)."""
    if ":" in text:
        a, b, s = (float(x) for x in text.split(":"))
        k = int(math.floor((b - a) / s + 1e-9))
        return [round(a + i * s, 12) for i in range(k + 1)]
    return [float(x) for x in text.split(",") if x.strip()]


# environment plumbing -----------------------------------------------------------


def _environment(args, need_params=True):
    if args.env_in:
        env = Environment.load(args.env_in)
    else:
        missing = [k for k in ("d", "n", "p") if getattr(args, k, None) is None]
        if missing:
            raise ContractError(
                "give --env-in or all of --d, --n, --p (missing: "
                + ", ".join("--" + m for m in missing) + ")"
            )
        env = generate(EnvParams(args.d, args.n, args.p, args.seed), materialize=True)
    if args.env_out:
        env.save(args.env_out)
    return env


# subcommands -------------------------------------------------------------------------


def cmd_gen_env(args):
    env = _environment(args)
    bits = env._unpacked()
    return {
        "params": env.params.to_dict(),
        "sites": int(bits.size),
        "open_sites": int(bits.sum()),
        "open_fraction": float(bits.mean()) if bits.size else None,
        "bytes": env.nbytes,
        "env_out": args.env_out,
    }


def cmd_count(args):
    from .pathcount import brute_force_count, count_exact, extremes, r_n

    env = _environment(args)
    table = brute_force_count(env) if args.brute_force else count_exact(env)
    out = table.to_dict()
    ext = extremes(table)
    out["total"] = str(table.total)
    out["max_h"], out["min_h"] = ext.max_h, ext.min_h
    if args.rho is not None:
        out["rho"] = args.rho
        out["r_n"] = str(r_n(table, env.p, args.rho))
    return out


def cmd_polymer(args):
    from .polymer import log_partition, martingale

    env = _environment(args)
    beta = complex(args.beta_re, args.beta_im) if args.beta_im else args.beta_re
    lp = log_partition(env, beta, radius=args.radius)
    w = martingale(env, beta, radius=args.radius).w
    out = lp.to_dict()
    out["w_re"], out["w_im"] = float(np.real(w)), float(np.imag(w))
    return out


def cmd_thermo(args):
    from .thermo import default_beta_grid, free_energy_curve

    grid = default_beta_grid(args.beta_min, args.beta_max, args.beta_step)
    curve = free_energy_curve(EnvParams(args.d, args.n, args.p, args.seed), grid,
                              args.replicas, radius=args.radius)
    out = curve.to_dict()
    out["shape"] = curve.check_shape()
    return out


def cmd_legendre(args):
    from .thermo import ThermoCurve, legendre

    with open(args.curve) as f:
        doc = json.load(f)
    curve = ThermoCurve.from_dict(doc.get("result", doc))
    res = legendre(curve, _parse_list(args.rho_grid))
    out = res.to_dict()
    out["n"], out["replicas"] = curve.n, curve.replicas
    return out


def cmd_pid(args):
    from .thermo import encode_endpoint, return_probability, weak_disorder_interval

    r = return_probability(args.d, args.method, horizon=args.horizon, walks=args.walks,
                           seed=args.seed)
    out = r.to_dict()
    if args.p is not None:
        lo, hi = weak_disorder_interval(args.d, args.p, r.value)
        out["weak_disorder_interval"] = [encode_endpoint(lo), encode_endpoint(hi)]
    return out


def cmd_sharp(args):
    from .sharp import sharp_ratio

    est = sharp_ratio(EnvParams(args.d, max(args.n), args.p, args.seed), args.rho, args.n,
                      quadrature_points=args.quad_points, radius=args.radius)
    return {"estimates": [e.to_dict() for e in est]}


def cmd_verify(args):
    from . import acceptance

    def progress(r):
        print(r.line(), file=sys.stderr, flush=True)

    results = acceptance.run(args.only, progress=progress)
    passed = all(r.passed for r in results)
    return {"level": args.level, "all_passed": passed,
            "criteria": [r.to_dict() for r in results]}


# csv renderers, for the flat tables only
def _csv_rows(command, result):
    if command == "count":
        return ["k", "count"], [[k, c] for k, c in enumerate(result["counts"])]
    if command == "thermo":
        return (["beta", "phi", "se"],
                list(zip(result["beta_grid"], result["phi_vals"], result["phi_se"])))
    if command == "legendre":
        return (["rho", "conj", "alpha", "argmax_beta", "grid_truncated"],
                list(zip(result["rho_grid"], result["conj_vals"], result["alpha"],
                         result["argmax_beta"], result["grid_truncated"])))
    raise ContractError(f"csv output is available for count, thermo and legendre, not {command}")


COMMANDS = {
    "gen-env": cmd_gen_env,
    "count": cmd_count,
    "polymer": cmd_polymer,
    "thermo": cmd_thermo,
    "legendre": cmd_legendre,
    "pid": cmd_pid,
    "sharp": cmd_sharp,
    "verify": cmd_verify,
}


def _radius(text):
    if text in ("auto", "full"):
        return text
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="64-bit environment seed")
    g.add_argument("--threads", type=int, default=0,
                   help="worker threads, 0 = auto (kernels are serial; results never depend on it)")
    g.add_argument("--memory-budget", default=None,
                   help="memory budget, e.g. 512M or 2G (default: $RHO_PATHS_MEM_BUDGET or 2G)")
    g.add_argument("--out", default=None, help="write the result here instead of stdout")
    g.add_argument("--format", choices=["json", "csv"], default="json")
    g.add_argument("--env-in", default=None, help="read the environment from this file")
    g.add_argument("--env-out", default=None, help="write the environment to this file")

    env_args = argparse.ArgumentParser(add_help=False)
    env_args.add_argument("--d", type=int, default=None)
    env_args.add_argument("--n", type=int, default=None)
    env_args.add_argument("--p", type=float, default=None)

    parser = argparse.ArgumentParser(prog="rho-paths", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-env", parents=[common, env_args], help="generate an environment")

    p = sub.add_parser("count", parents=[common, env_args], help="exact counts Q_n(k)")
    p.add_argument("--rho", type=float, default=None, help="also report R_n(rho)")
    p.add_argument("--brute-force", action="store_true", help="enumerate paths instead")

    p = sub.add_parser("polymer", parents=[common, env_args], help="ln Z_n, derivatives and W_n")
    p.add_argument("--beta-re", type=float, required=True)
    p.add_argument("--beta-im", type=float, default=0.0)
    p.add_argument("--radius", type=_radius, default="full",
                   help="'full' cone, 'auto', or a ball radius")

    p = sub.add_parser("thermo", parents=[common], help="free-energy curve over replicas")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--replicas", type=int, default=10)
    p.add_argument("--beta-min", type=float, default=-4.0)
    p.add_argument("--beta-max", type=float, default=4.0)
    p.add_argument("--beta-step", type=float, default=0.1)
    p.add_argument("--radius", type=_radius, default="auto")

    p = sub.add_parser("legendre", parents=[common], help="numerical conjugate of a curve")
    p.add_argument("--curve", required=True, help="JSON written by the thermo subcommand")
    p.add_argument("--rho-grid", default="0.05:0.95:0.05",
                   help="comma list or start:stop:step")

    p = sub.add_parser("pid", parents=[common], help="return probability of the walk")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--method", choices=["series", "monte_carlo"], default="series")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--walks", type=int, default=10**6)
    p.add_argument("--p", type=float, default=None, help="also report the weak-disorder interval")

    p = sub.add_parser("sharp", parents=[common], help="sharp prefactor ratios")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--n", type=int, nargs="+", required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--quad-points", type=int, default=None, help="default 8n")
    p.add_argument("--radius", type=_radius, default="auto")

    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("--level", choices=["desk"], default="desk")
    p.add_argument("--only", type=int, nargs="+", default=None, help="criterion numbers")
    return parser


def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items()}
    cfg["version"] = __version__
    return cfg


def _emit(args, payload: dict) -> None:
    if args.format == "csv":
        header, rows = _csv_rows(args.command, payload["result"])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        text = buf.getvalue()
    else:
        text = json.dumps(_clean(payload), default=_json_default, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.memory_budget is not None:
        os.environ["RHO_PATHS_MEM_BUDGET"] = str(args.memory_budget)
    try:
        result = COMMANDS[args.command](args)
        _emit(args, {"config": _config(args), "result": result})
    except ResourceError as exc:
        print(f"rho-paths: resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except NumericalError as exc:
        print(f"rho-paths: numerical error: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(_clean(exc.diagnostics), default=_json_default), file=sys.stderr)
        return EXIT_NUMERICAL
    except (ContractError, OSError) as exc:
        print(f"rho-paths: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "verify" and not result["all_passed"]:
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
