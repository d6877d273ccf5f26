"""``trialoffer`` command-line entry point.

Exit codes: 0 success, 1 usage/config/I-O error, 2 numerical or
verification failure.
"""

import argparse
import csv
import datetime
import json
import platform
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .dynamics import convergence_report, fmt, run_deterministic, run_stochastic
from .equilibrium import NoConvergence, solve_tome
from .exceptions import DomainError, ParseError, TrialOfferError
from .experiments import (
    GroupAssignment,
    PositionWeights,
    cluster_users,
    load_preferences,
    run_experiment,
    write_aggregate,
)
from .market import PurchaseLedger

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _dump_json(obj, path):
    def convert(x):
        if isinstance(x, float):
            return float(fmt(x)) if np.isfinite(x) else None
        if isinstance(x, dict):
            return {k: convert(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [convert(v) for v in x]
        if isinstance(x, np.generic):
            return convert(x.item())
        return x

    path.write_text(json.dumps(convert(obj), indent=2, sort_keys=True) + "\n")


def _write_manifest(out, command, cfg, extra=None):
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "defaults_applied": cfg.defaults_applied,
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    _dump_json(manifest, out / "manifest.json")


def _output_dir(args, cfg):
    if args.output:
        out = Path(args.output)
    elif "output_dir" in cfg.defaults_applied:
        out = Path(cfg["output_dir"])
    else:
        out = cfg.path("output_dir")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc}", EXIT_USAGE) from None
    return out


def _apply_overrides(args, cfg):
    if getattr(args, "seeds", None):
        try:
            cfg.values["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--seeds must be a comma-separated list of integers, got {args.seeds!r}",
                              key="seeds") from None
        if not cfg.values["seeds"]:
            raise ConfigError("--seeds is empty", key="seeds")
        if "seeds" in cfg.defaults_applied:
            cfg.defaults_applied.remove("seeds")
    if getattr(args, "tol", None) is not None:
        if args.tol <= 0:
            raise ConfigError("--tol must be positive", key="tol")
        cfg.values["tol"] = args.tol
        if "tol" in cfg.defaults_applied:
            cfg.defaults_applied.remove("tol")


def _map_seeds(fn, seeds, jobs):
    if jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, seeds))
    return [fn(s) for s in seeds]


# ---------------------------------------------------------------------------
# commands

def cmd_equilibrium(args, cfg):
    out = _output_dir(args, cfg)
    tol = cfg["tol"]
    try:
        res = solve_tome(cfg.market, tol=tol, max_iter=cfg["max_iter"], damping=cfg["damping"])
    except NoConvergence as exc:
        if exc.result is not None:
            _dump_json(exc.result.to_dict(), out / "tome.json")
        raise CommandError(str(exc), EXIT_NUMERIC) from None
    except DomainError as exc:
        raise CommandError(str(exc), EXIT_NUMERIC) from None
    _dump_json(res.to_dict(), out / "tome.json")
    _write_manifest(out, "equilibrium", cfg)
    shares = " ".join(f"{x:.6f}" for x in res.shares)
    print(f"TOME [{res.method.value}] residual={res.residual:.3e} shares: {shares}")
    if res.residual > tol:
        raise CommandError(f"residual {res.residual:.3e} exceeds tol {tol:g}", EXIT_NUMERIC)
    return EXIT_OK


def _try_tome(market, cfg):
    try:
        return solve_tome(market, tol=cfg["tol"], max_iter=cfg["max_iter"], damping=cfg["damping"])
    except (NoConvergence, DomainError):
        return None


def cmd_simulate(args, cfg):
    out = _output_dir(args, cfg)
    market = cfg.market
    tome = _try_tome(market, cfg)
    T, every = cfg["T"], cfg["record_every"]
    if cfg["dynamics"] == "deterministic":
        tr = run_deterministic(market, T=T, record_every=every)
        path = out / "trajectory_deterministic.csv"
        tr.to_csv(path)
        _write_manifest(out, "simulate", cfg)
        msg = f"deterministic run: final residual {tr.residual[-1]:.3e}"
        if tome is not None:
            msg += f", L1 distance to TOME {np.abs(tr.final_shares - tome.shares).sum():.3e}"
        print(msg)
        return EXIT_OK
    if cfg["dynamics"] != "stochastic":
        raise ConfigError(f"dynamics must be 'stochastic' or 'deterministic', got {cfg['dynamics']!r}",
                          key="dynamics")
    d0 = cfg["initial_counts"]
    ledger = PurchaseLedger.ones(market.num_items) if d0 is None else PurchaseLedger.initial(d0)
    seeds = cfg["seeds"]

    def one(seed):
        tr = run_stochastic(market, ledger, T, seed, every, log_events=cfg["log_events"])
        tr.to_csv(out / f"trajectory_seed{seed}.csv")
        if cfg["log_events"]:
            tr.events_to_csv(out / f"events_seed{seed}.csv")
        return tr

    trajs = _map_seeds(one, seeds, args.jobs)
    extra = {}
    if len(trajs) >= 2:
        rep = convergence_report(trajs, tome, market if tome is not None else None)
        rep.to_csv(out / "aggregate.csv")
        if tome is not None:
            med = rep.median_distance[-1]
            print(f"final median L1 distance to TOME: {med:.6g}")
            extra["final_median_distance"] = float(med)
        extra["gap_monotone"] = rep.gap_monotone
    else:
        _single_aggregate(trajs[0], tome, out / "aggregate.csv")
        if tome is not None:
            print(f"final L1 distance to TOME: {np.abs(trajs[0].final_shares - tome.shares).sum():.6g}")
    _write_manifest(out, "simulate", cfg, extra)
    return EXIT_OK


def _single_aggregate(tr, tome, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "dist", "efficiency", "entropy"])
        for k in range(tr.times.size):
            dist = np.nan if tome is None else np.abs(tr.shares[k] - tome.shares).sum()
            writer.writerow([int(tr.times[k]), fmt(dist), fmt(tr.efficiency[k]), fmt(tr.entropy[k])])


def cmd_verify(args, cfg):
    from .verify import run_battery

    out = _output_dir(args, cfg)
    report = run_battery(cfg.market, n_random=cfg["n_random_markets"], seed=cfg["verify_seed"],
                         corrupt_gradient=args.corrupt_gradient)
    _dump_json(report, out / "verify.json")
    _write_manifest(out, "verify", cfg)
    for name, c in report["checks"].items():
        status = "skip" if c["skipped"] else ("ok" if c["passed"] else "FAIL")
        print(f"{status:4s} {name}: max deviation {c['max_deviation']:.3e} (tol {c['tol']:.0e})")
    if not report["passed"]:
        raise CommandError("failed checks: " + ", ".join(report["failed"]), EXIT_NUMERIC)
    return EXIT_OK


def cmd_experiment(args, cfg):
    out = _output_dir(args, cfg)
    prefs = cfg.path("preferences")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        data = load_preferences(prefs, cfg["format"], mask_path=cfg.path("mask"),
                                normalize=cfg["normalize"])
        if cfg.get("groups") is not None:
            groups = cluster_users(data, None, assignment_path=cfg.path("groups"))
        elif cfg.get("M") is not None:
            groups = cluster_users(data, cfg["M"], seed=cfg["cluster_seed"])
        else:
            groups = GroupAssignment.single(data.n_users)
        if cfg.get("iota") is not None:
            iota = PositionWeights.from_file(cfg.path("iota"), data.n_items)
            iota_source = str(cfg.path("iota"))
        else:
            iota = PositionWeights.reciprocal(data.n_items, cfg["cutoff"])
            iota_source = f"default: 1/k for k <= {cfg['cutoff']}"
        results = []
        for strategy in cfg["strategies"]:
            res = run_experiment(data, groups, strategy, iota, r=cfg["r"], T=cfg["T"],
                                 seeds=cfg["seeds"], record_every=cfg["record_every"],
                                 unseen_only=cfg["unseen_only"], jobs=args.jobs,
                                 window=cfg["window"])
            for tr in res.trajectories:
                tr.to_csv(out / f"{res.strategy.lower()}_seed{tr.seed}.csv")
            results.append(res)
    write_aggregate(results, out / "aggregate.csv")
    resolved = {
        "iota_source": iota_source,
        "iota": [float(x) for x in iota.iota],
        "cutoff": iota.cutoff,
        "r": float(cfg["r"]),
        "M": int(groups.M),
        "group_weights": [float(x) for x in groups.weights],
        "setting": "homogeneous" if groups.M == 1 else "heterogeneous",
        "n_items_kept": int(results[0].keep.sum()),
        "warnings": sorted({str(w.message) for w in caught}),
    }
    _write_manifest(out, "experiment", cfg, {"resolved": resolved})
    for res in results:
        eff, ent = res.quantiles()
        print(f"{res.strategy}: final median efficiency {eff[-1, 1]:.4f}, entropy {ent[-1, 1]:.4f}")
    return EXIT_OK


COMMANDS = {
    "equilibrium": cmd_equilibrium,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "experiment": cmd_experiment,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="trialoffer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "equilibrium": "solve for the market equilibrium and write tome.json",
        "simulate": "run stochastic or deterministic dynamics over seeds",
        "verify": "run the numerical identity checks and write verify.json",
        "experiment": "run ranking strategies on preference data",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seeds", help="comma-separated seeds, overriding the config")
        p.add_argument("--jobs", type=int, default=1, help="parallel seed runs")
        p.add_argument("--output", help="output directory, overriding the config")
        p.add_argument("--tol", type=float, help="tolerance, overriding the config")
        if name == "verify":
            p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, args.command)
        _apply_overrides(args, cfg)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrialOfferError as exc:
        code = EXIT_USAGE if isinstance(exc, ValueError) else EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
