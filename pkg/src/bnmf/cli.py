"""Command-line entry points: generate, map, gibbs, sweep, bound, run."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bound import BoundQuery, corollary_bound, theorem_bound
from .core import ConfigError, DenseMatrix, ModelConfig, effective_rank, mse, reconstruct
from .data import SyntheticSpec, generate_synthetic, load_matrix, save_matrix
from .map_optimizer import MapConfig, map_objective, run_map
from .priors import (
    PriorSpec,
    element_prior_from_string,
    hyperprior_from_string,
    prior_constants,
)
from .sampler import GibbsConfig, run_gibbs
from .sweep import DEFAULT_B_GRID, DEFAULT_TAU_REL, sweep_b

_COMMANDS = ("generate", "map", "gibbs", "sweep", "bound", "run")


def _prior_arg(text: str):
    try:
        return element_prior_from_string(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _hyper_arg(text: str):
    try:
        return hyperprior_from_string(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _b_grid_arg(text: str):
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"b grid must be comma-separated reals: {exc}") from None


def _add_spec_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--m1", type=int, default=100)
    sub.add_argument("--m2", type=int, default=100)
    sub.add_argument("--rank", type=int, default=2, help="true rank of the generated signal")
    sub.add_argument("--sigma2", type=float, default=0.01)
    sub.add_argument("--entry-upper", type=float, default=3.0)
    sub.add_argument("--noise", choices=("gaussian", "uniform"), default="gaussian")


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--K", type=int, default=5)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", type=Path, required=True, help="output directory")


def _add_prior_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--prior", type=_prior_arg, default=element_prior_from_string("exponential"))
    sub.add_argument("--hyperprior", type=_hyper_arg,
                     default=hyperprior_from_string("gamma:b=1"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bnmf",
        description="Bayesian non-negative matrix factorization toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("generate", help="write a synthetic low-rank dataset")
    _add_spec_flags(g)
    _add_common_flags(g)
    g.set_defaults(func=cmd_generate)

    m = subs.add_parser("map", help="MAP factorization by block coordinate descent")
    _add_spec_flags(m)
    _add_common_flags(m)
    _add_prior_flags(m)
    m.add_argument("--y", type=Path, default=None, help="observed matrix (default: synthesize)")
    m.add_argument("--truth", type=Path, default=None, help="signal matrix for MSE reporting")
    m.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="inverse temperature (default 1/(4*sigma2))")
    m.add_argument("--iters", type=int, default=200, help="outer iterations")
    m.add_argument("--tau-rel", type=float, default=DEFAULT_TAU_REL)
    m.set_defaults(func=cmd_map)

    s = subs.add_parser("gibbs", help="posterior mean by Gibbs sampling")
    _add_spec_flags(s)
    _add_common_flags(s)
    _add_prior_flags(s)
    s.add_argument("--y", type=Path, default=None)
    s.add_argument("--truth", type=Path, default=None)
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--iters", type=int, default=500)
    s.add_argument("--burn-in", type=int, default=150)
    s.add_argument("--inner-sweeps", type=int, default=4)
    s.add_argument("--tau-rel", type=float, default=DEFAULT_TAU_REL)
    s.set_defaults(func=cmd_gibbs)

    w = subs.add_parser("sweep", help="sweep the scale-prior rate b over a grid")
    _add_spec_flags(w)
    _add_common_flags(w)
    _add_prior_flags(w)
    w.add_argument("--algorithm", choices=("map", "gibbs"), default="map")
    w.add_argument("--b-grid", type=_b_grid_arg, default=list(DEFAULT_B_GRID))
    w.add_argument("--iters", type=int, default=200,
                   help="outer iterations (map) or chain length (gibbs)")
    w.add_argument("--burn-in", type=int, default=150)
    w.add_argument("--tau-rel", type=float, default=DEFAULT_TAU_REL)
    w.add_argument("--threads", type=int, default=None)
    w.set_defaults(func=cmd_sweep)

    b = subs.add_parser("bound", help="evaluate the oracle bound at a comparison pair")
    _add_spec_flags(b)
    _add_common_flags(b)
    _add_prior_flags(b)
    b.add_argument("--u0", type=Path, default=None)
    b.add_argument("--v0", type=Path, default=None)
    b.add_argument("--m", type=Path, default=None, help="target matrix")
    b.add_argument("--r", type=int, default=None, help="comparison rank (default: true rank)")
    b.add_argument("--L", type=float, default=None, help="entry bound for the corollary value")
    b.set_defaults(func=cmd_bound)

    r = subs.add_parser("run", help="dispatch a subcommand from a JSON config file")
    r.add_argument("config", type=Path)
    r.set_defaults(func=cmd_run)
    return parser


def _spec_from_args(ns) -> SyntheticSpec:
    return SyntheticSpec(m1=ns.m1, m2=ns.m2, r_true=ns.rank, K=ns.K,
                         entry_upper=ns.entry_upper, sigma2=ns.sigma2,
                         seed=ns.seed, noise=ns.noise)


def _echo_value(v):
    if hasattr(v, "name") and callable(v.name):
        return v.name()
    if isinstance(v, Path):
        return str(v)
    return v


def _echo_config(ns) -> dict:
    return {k: _echo_value(v) for k, v in vars(ns).items() if k != "func"}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_or_generate(ns, out: Path) -> tuple[DenseMatrix, DenseMatrix | None]:
    """Observed matrix plus the signal when it is known."""
    if ns.y is not None:
        Y = load_matrix(ns.y)
        truth = load_matrix(ns.truth) if ns.truth is not None else None
        return Y, truth
    Y, M, _ = generate_synthetic(_spec_from_args(ns))
    save_matrix(out / "Y.csv", Y)
    save_matrix(out / "M.csv", M)
    return Y, M


def cmd_generate(ns) -> None:
    out = ns.out
    out.mkdir(parents=True, exist_ok=True)
    spec = _spec_from_args(ns)
    Y, M, truth = generate_synthetic(spec)
    save_matrix(out / "Y.csv", Y)
    save_matrix(out / "M.csv", M)
    save_matrix(out / "U_true.csv", truth.U)
    save_matrix(out / "V_true.csv", truth.V)
    save_matrix(out / "gamma_true.csv", truth.gamma[None, :])
    _write_json(out / "meta.json", {"command": "generate", "config": _echo_config(ns)})
    print(f"wrote synthetic dataset to {out}")


def cmd_map(ns) -> None:
    out = ns.out
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    Y, truth = _load_or_generate(ns, out)
    config = ModelConfig(m1=Y.rows, m2=Y.cols, sigma2=ns.sigma2, K=ns.K, lam=ns.lam)
    priors = PriorSpec(element=ns.prior, hyper=ns.hyperprior)
    mc = MapConfig(max_outer=ns.iters, seed=ns.seed)
    fac, trace = run_map(Y, config, mc, priors)
    mhat = reconstruct(fac)
    save_matrix(out / "Mhat.csv", mhat)
    save_matrix(out / "U.csv", fac.U)
    save_matrix(out / "V.csv", fac.V)
    save_matrix(out / "gamma.csv", fac.gamma[None, :])
    trace.write_csv(out / "trace.csv")
    tau = ns.tau_rel * float(np.max(fac.gamma))
    summary = {
        "command": "map",
        "config": _echo_config(ns),
        "objective": map_objective(Y, fac, config, priors),
        "gamma": [float(g) for g in fac.gamma],
        "effective_rank": effective_rank(fac, tau),
        "mse": None if truth is None else mse(truth, mhat),
        "wall_time_s": time.perf_counter() - started,
    }
    _write_json(out / "summary.json", summary)
    print(f"map estimate written to {out}")


def cmd_gibbs(ns) -> None:
    out = ns.out
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    Y, truth = _load_or_generate(ns, out)
    config = ModelConfig(m1=Y.rows, m2=Y.cols, sigma2=ns.sigma2, K=ns.K, lam=ns.lam)
    priors = PriorSpec(element=ns.prior, hyper=ns.hyperprior)
    gc = GibbsConfig(n_iters=ns.iters, burn_in=ns.burn_in,
                     inner_sweeps=ns.inner_sweeps, seed=ns.seed)
    mhat, fac, diag = run_gibbs(Y, config, gc, priors, M_true=truth)
    save_matrix(out / "Mhat.csv", mhat)
    save_matrix(out / "U_final.csv", fac.U)
    save_matrix(out / "V_final.csv", fac.V)
    save_matrix(out / "gamma_final.csv", fac.gamma[None, :])
    diag.write_csv(out / "diagnostics.csv")
    tau = ns.tau_rel * float(np.max(fac.gamma))
    summary = {
        "command": "gibbs",
        "config": _echo_config(ns),
        "gamma": [float(g) for g in fac.gamma],
        "effective_rank": effective_rank(fac, tau),
        "mse": None if truth is None else mse(truth, mhat),
        "wall_time_s": time.perf_counter() - started,
    }
    _write_json(out / "summary.json", summary)
    print(f"gibbs estimate written to {out}")


def cmd_sweep(ns) -> None:
    out = ns.out
    out.mkdir(parents=True, exist_ok=True)
    spec = _spec_from_args(ns)
    report = sweep_b(
        spec, ns.algorithm, ns.prior, ns.hyperprior, ns.b_grid,
        out_path=out / "report.json",
        map_config=MapConfig(max_outer=ns.iters),
        gibbs_config=GibbsConfig(n_iters=ns.iters, burn_in=min(ns.burn_in, ns.iters - 1)),
        tau_rel=ns.tau_rel,
        threads=ns.threads,
    )
    failures = [r.b for r in report.records if r.error is not None]
    msg = f"sweep report written to {out}"
    if failures:
        msg += f" ({len(failures)} failed grid points: {failures})"
    print(msg)


def cmd_bound(ns) -> None:
    out = ns.out
    out.mkdir(parents=True, exist_ok=True)
    explicit = [ns.u0, ns.v0, ns.m]
    if any(x is not None for x in explicit):
        if not all(x is not None for x in explicit):
            raise ConfigError("--u0, --v0 and --m must be given together")
        U0, V0, M = load_matrix(ns.u0), load_matrix(ns.v0), load_matrix(ns.m)
        r = ns.r if ns.r is not None else U0.cols
    else:
        _, M, truth = generate_synthetic(_spec_from_args(ns))
        U0, V0 = truth.U, truth.V
        r = ns.r if ns.r is not None else ns.rank
    config = ModelConfig(m1=M.rows, m2=M.cols, sigma2=ns.sigma2, K=ns.K)
    pc = prior_constants(ns.prior, ns.hyperprior, config)
    q = BoundQuery(U0=U0, V0=V0, r=r, L=ns.L)
    bb = theorem_bound(q, M, config, pc)
    payload = {
        "command": "bound",
        "config": _echo_config(ns),
        "constants": {"s_f": pc.s_f, "c_f": pc.c_f, "alpha": pc.alpha,
                      "beta": pc.beta, "log_alpha": pc.log_alpha},
        "bound": bb.to_json_dict(),
    }
    if ns.L is not None:
        payload["corollary_remainder"] = corollary_bound(
            r, ns.L, ns.K, M.rows, M.cols, config, pc)
    _write_json(out / "bound.json", payload)
    print(json.dumps(payload["bound"], indent=2, sort_keys=True))


def cmd_run(ns) -> None:
    raw = json.loads(Path(ns.config).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or "command" not in raw:
        raise ConfigError("run config must be a JSON object with a 'command' key")
    command = raw.pop("command")
    if command not in _COMMANDS or command == "run":
        raise ConfigError(f"config command must be one of {_COMMANDS[:-1]}, got {command!r}")
    argv = [command]
    for key, val in raw.items():
        flag = "--" + str(key).replace("_", "-")
        if isinstance(val, (list, tuple)):
            argv.extend([flag, ",".join(str(v) for v in val)])
        else:
            argv.extend([flag, str(val)])
    sub_ns = build_parser().parse_args(argv)
    out = sub_ns.out
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {"command": command, "resolved": _echo_config(sub_ns)})
    sub_ns.func(sub_ns)


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        ns.func(ns)
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
