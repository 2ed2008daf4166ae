"""Command-line front end.

Every subcommand reads an optional flat ``key=value`` file (``--config``)
whose entries are overridden by explicit flags, writes CSV/JSON artifacts
into ``--out`` and prints one summary line per check.  Exit status is 0
when all checks pass, 1 on a failed check or numerical failure and 2 on
invalid configuration.
"""

from __future__ import annotations

import os

_threads = os.environ.get("GRANULAR_FOURIER_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import datetime  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import charfun, evolve, kernels, selfsim, verify_mc  # noqa: E402
from .errors import (DomainError, EvolveError, IntegrationFailure, NonIntegrableError,  # noqa: E402
                     PreconditionError, QuadratureError, StabilityRegimeError)
from .grid import RadialGridState  # noqa: E402

COMMANDS = ("params", "profile", "evolve", "converge", "contraction", "cutoff-study",
            "verify", "bobylev-check")
DEFAULT_KERNEL = "constant:c=0.079577471545947673"
FLAGS = {"no_timestamp"}


class ConfigError(ValueError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _floats(text: str) -> list[float]:
    return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for k, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{k}: expected key=value")
        key, val = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


# parser

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value file; flags override its entries")
    p.add_argument("--kernel", default=DEFAULT_KERNEL,
                   help="kernel spec, e.g. constant:c=0.0796 or powerSingular:kappa=0.08,nu=0.5")
    p.add_argument("--e", type=float, default=0.75, help="restitution coefficient")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10, help="quadrature tolerance")
    p.add_argument("--no-timestamp", action="store_true",
                   help="omit the generation timestamp from artifacts")


def _grid_opts(p):
    p.add_argument("--x-min", type=float, default=1e-8)
    p.add_argument("--x-max", type=float, default=1e3)
    p.add_argument("--n-nodes", type=int, default=512)
    p.add_argument("--step-tol", type=float, default=1e-9, help="time stepper tolerance")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="granular-fourier",
                                     description="Fourier-side experiments for inelastic "
                                                 "Boltzmann models.")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("params", help="lambda, gamma and mu constants")
    _common(p)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--p", type=float, default=None, help="series exponent (default alpha/2)")
    subs["params"] = p

    p = sub.add_parser("profile", help="self-similar profile coefficients")
    _common(p)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--K", type=float, default=-1.0, help="first coefficient Psi_1")
    p.add_argument("--N", type=int, default=40)
    p.add_argument("--x", default="0.1,1,5", help="residual sample points")
    p.add_argument("--residual-tol", type=float, default=1e-6)
    subs["profile"] = p

    p = sub.add_parser("evolve", help="grid evolution, CSV trajectory")
    _common(p)
    _grid_opts(p)
    p.add_argument("--u0", default="gaussian(t=2)", help="radial characteristic function")
    p.add_argument("--p", type=float, default=None, help="recorded in the header only")
    p.add_argument("--times", default="0.5,1")
    subs["evolve"] = p

    p = sub.add_parser("converge", help="distance to the self-similar profile")
    _common(p)
    _grid_opts(p)
    p.add_argument("--u0", default="stable(alpha=1, c=1)")
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--K", type=float, default=None, help="matched coefficient (default: fitted)")
    p.add_argument("--N", type=int, default=40)
    p.add_argument("--times", default="1,2,4,8")
    subs["converge"] = p

    p = sub.add_parser("contraction", help="stability ratio for two initial data")
    _common(p)
    _grid_opts(p)
    p.add_argument("--u0", default="stable(alpha=1, c=1)")
    p.add_argument("--v0", default="stable(alpha=1, c=1.1)")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--times", default="0.5,1,2")
    p.add_argument("--slack", type=float, default=5e-3)
    subs["contraction"] = p

    p = sub.add_parser("cutoff-study", help="convergence of truncated kernels")
    _common(p)
    _grid_opts(p)
    p.add_argument("--u0", default="gaussian(t=2)")
    p.add_argument("--n-list", default="10,100,1000,10000")
    p.add_argument("--t", type=float, default=1.0)
    subs["cutoff-study"] = p

    p = sub.add_parser("verify", help="pointwise lemmas and moment production")
    _common(p)
    p.add_argument("--phi", default="stable(alpha=0.8, c=1)")
    p.add_argument("--n-samples", type=int, default=10_000)
    p.add_argument("--n-mc", type=int, default=200_000)
    subs["verify"] = p

    p = sub.add_parser("bobylev-check", help="Monte Carlo gain-transform identity")
    _common(p)
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--xi", default="0.5,1,2", help="wave-vector magnitudes")
    p.add_argument("--es", default="0.75,1")
    subs["bobylev-check"] = p
    return parser, subs


def parse_args(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command in subs:
        cfg = read_config(known.config)
        sp = subs[known.command]
        dests = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - dests)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for k in FLAGS & set(cfg):
            cfg[k] = cfg[k].lower() in ("1", "true", "yes", "on")
        sp.set_defaults(**cfg)
    return parser.parse_args(argv)


# helpers

class Run:
    """Output directory, header metadata and summary lines of one command."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.ok = True

    def stamp(self) -> str | None:
        if self.args.no_timestamp:
            return None
        return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")

    def check(self, name: str, value, passed: bool | None = None):
        tail = "" if passed is None else (" PASS" if passed else " FAIL")
        if passed is False:
            self.ok = False
        print(f"{name} {_fmt(value)}{tail}")

    def write_json(self, name: str, payload):
        doc = {"generated": self.stamp()} if not self.args.no_timestamp else {}
        doc.update(payload)
        path = self.out / name
        path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n")
        return path

    def header(self, fh, meta: dict):
        ts = self.stamp()
        if ts:
            fh.write(f"# generated = {ts}\n")
        for k, v in meta.items():
            fh.write(f"# {k} = {_fmt(v)}\n")


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else repr(v)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    return o


def _kernel_params(args):
    kernel = kernels.parse_kernel_spec(args.kernel)
    return kernel, kernels.RestitutionParams(args.e)


def _evolve_config(args, kernel, params, closure_p=None) -> evolve.EvolveConfig:
    return evolve.EvolveConfig(kernel, params, x_min=args.x_min, x_max=args.x_max,
                               n_nodes=args.n_nodes, tol=args.step_tol, closure_p=closure_p)


def _radial_state(text: str, x) -> RadialGridState:
    phi = charfun.parse_charfn(text)
    if not phi.radial:
        raise DomainError(f"{text} is not radial")
    return RadialGridState.from_charfn(phi, x)


# commands

def cmd_params(args, run: Run):
    kernel, params = _kernel_params(args)
    alpha = args.alpha
    p = args.p if args.p is not None else 0.5 * alpha
    lam = kernels.lambda_e(kernel, params, 0.5 * alpha, args.tol)
    gam = kernels.gamma_e_alpha(kernel, params, alpha, args.tol) if kernel.bounded else math.nan
    try:
        mu = kernels.mu_e_p(kernel, params, p, args.tol)
    except (DomainError, NonIntegrableError):
        mu = math.nan
    path = run.out / "params.csv"
    with open(path, "w", newline="") as fh:
        run.header(fh, {"kernel": kernel.kernel_id})
        fh.write("kernel,e,alpha,p,lambda_e_alpha,gamma_e_alpha,mu_e_p\n")
        fh.write(",".join([kernel.kernel_id] + [_fmt(float(v)) for v in
                                                (params.e, alpha, p, lam, gam, mu)]) + "\n")
    run.check("lambda_e_alpha", lam)
    run.check("gamma_e_alpha", gam)
    run.check("mu_e_p", mu)


def cmd_profile(args, run: Run):
    kernel, params = _kernel_params(args)
    prof = selfsim.steady_coeffs(kernel, params, args.p, args.K, args.N, permissive=True)
    prof.to_csv(run.out / "profile.csv")
    selfsim.write_profile_values(prof, np.linspace(0.0, max(_floats(args.x)), 101),
                                 run.out / "profile_values.csv")
    xs = _floats(args.x)
    res = selfsim.profile_residual(prof, xs, return_all=True)
    recs = [{"x": x, "residual": float(r), "pass": bool(abs(r) <= args.residual_tol)}
            for x, r in zip(xs, res)]
    run.write_json("profile_residual.json", {"check": "profile_residual", "p": args.p,
                                             "e": params.e, "kernel": kernel.kernel_id,
                                             "N": args.N, "records": recs})
    for r in recs:
        run.check(f"residual(x={_fmt(r['x'])})", r["residual"], r["pass"])


def cmd_evolve(args, run: Run):
    kernel, params = _kernel_params(args)
    cfg = _evolve_config(args, kernel, params)
    st = _radial_state(args.u0, cfg.grid())
    times = _floats(args.times)
    path = run.out / "evolve.csv"
    with open(path, "w", newline="") as fh:
        meta = {"kernel": kernel.kernel_id, "e": params.e,
                "p": args.p if args.p is not None else "none",
                "grid": f"{args.x_min:.17g}:{args.x_max:.17g}:{args.n_nodes}",
                "tol": args.step_tol, "u0": args.u0}
        run.header(fh, meta)
        fh.write("t,x,u\n")
        _rows(fh, st)
        for t in times:
            st = evolve.advance(st, cfg, t)
            _rows(fh, st)
    run.check("max|u(t_end)|", float(np.max(np.abs(st.values))),
              bool(np.max(np.abs(st.values)) <= 1.0 + evolve.BOUND_SLACK))


def _rows(fh, st):
    t = _fmt(float(st.t))
    for x, u in zip(st.x_nodes, st.values):
        fh.write(f"{t},{_fmt(float(x))},{_fmt(float(u))}\n")


def cmd_converge(args, run: Run):
    kernel, params = _kernel_params(args)
    cfg = _evolve_config(args, kernel, params, closure_p=args.p)
    st = _radial_state(args.u0, cfg.grid())
    rep = evolve.converge_to_profile(st, cfg, args.p, _floats(args.times), args.N, K=args.K)
    run.write_json("converge.json", {"check": "converge_to_profile", "kernel": kernel.kernel_id,
                                     "e": params.e, "p": args.p, "K": rep.K, "mu": rep.mu,
                                     "records": rep.records, "rates": rep.rates,
                                     "pass": rep.decreasing})
    for r in rep.records:
        run.check(f"D(t={_fmt(r['t'])})", r["D"])
    run.check("D_decreasing", rep.decreasing, rep.decreasing)


def cmd_contraction(args, run: Run):
    kernel, params = _kernel_params(args)
    cfg = _evolve_config(args, kernel, params)
    x = cfg.grid()
    rep = evolve.contraction_check(_radial_state(args.u0, x), _radial_state(args.v0, x), cfg,
                                   args.alpha, _floats(args.times), args.slack)
    run.write_json("contraction.json", {"check": "contraction", "kernel": kernel.kernel_id,
                                        "e": params.e, **rep.as_dict()})
    for t, r in zip(rep.times, rep.ratios):
        run.check(f"r(t={_fmt(t)})", r, None if math.isnan(r) else r <= 1.0 + args.slack)
    run.check("contraction", rep.passed, rep.passed)


def cmd_cutoff(args, run: Run):
    kernel, params = _kernel_params(args)
    cfg = _evolve_config(args, kernel, params)
    st = _radial_state(args.u0, cfg.grid())
    rep = evolve.cutoff_convergence(kernel, _floats(args.n_list), st, args.t, cfg)
    run.write_json("cutoff_study.json", {"check": "cutoff_convergence",
                                         "kernel": kernel.kernel_id, "e": params.e,
                                         **rep.as_dict(), "pass": rep.monotone})
    for n, d in zip(rep.n_list, rep.deviations):
        run.check(f"deviation(n={_fmt(n)})", d)
    run.check("monotone", rep.monotone, rep.monotone)


def cmd_verify(args, run: Run):
    kernel, params = _kernel_params(args)
    phi = charfun.parse_charfn(args.phi)
    rep = charfun.verify_pointwise_lemmas(phi, args.n_samples, args.seed)
    payload = {"check": "verify", "phi": args.phi, "lemmas": rep.records()}
    for rec in rep.records():
        run.check(f"lemma_{rec['lemma']}_violations", rec["violations"], rec["violations"] == 0)
    pts = np.random.default_rng(args.seed).standard_normal((8, 3))
    psd = charfun.psd_spotcheck(phi, pts)
    payload["psd_min_eigenvalue"] = psd.min_eigenvalue
    run.check("psd_min_eigenvalue", psd.min_eigenvalue, psd.passed)
    if kernel.bounded:
        law = verify_mc.VelocityLaw()
        mp = verify_mc.moment_production(law, params, kernel, max(args.n_mc, 100_000), args.seed)
        payload["production"] = mp.as_dict()
        run.check("momentum_production_bracket_0", max(abs(m.value) for m in mp.momentum),
                  all(m.brackets(0.0) for m in mp.momentum))
        run.check("energy_production", mp.energy.value, mp.energy.brackets(mp.energy_exact))
    run.write_json("verify.json", payload)


def cmd_bobylev(args, run: Run):
    kernel = kernels.parse_kernel_spec(args.kernel)
    recs = verify_mc.bobylev_check(args.n, args.seed, _floats(args.xi), _floats(args.es), kernel)
    ok = all(r["pass"] for r in recs)
    run.write_json("bobylev.json", {"check": "bobylev", "records": recs, "pass": ok})
    for r in recs:
        run.check(f"gain(e={_fmt(r['params']['e'])},|xi|={_fmt(r['params']['xi'])})",
                  r["estimate"][0], r["pass"])


HANDLERS = {"params": cmd_params, "profile": cmd_profile, "evolve": cmd_evolve,
            "converge": cmd_converge, "contraction": cmd_contraction,
            "cutoff-study": cmd_cutoff, "verify": cmd_verify, "bobylev-check": cmd_bobylev}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        run = Run(args)
        HANDLERS[args.command](args, run)
    except (DomainError, PreconditionError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StabilityRegimeError, EvolveError, IntegrationFailure, QuadratureError,
            NonIntegrableError, ArithmeticError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0 if run.ok else 1


if __name__ == "__main__":
    sys.exit(main())
