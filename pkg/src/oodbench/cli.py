"""Command-line harness: dataset generation, hyperparameter sweeps, flow
dynamics verification, the entropy suite, and report aggregation.

Exit codes: 0 success, 2 validation failure, 3 numeric divergence,
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .numeric_core import DivergenceError, ParameterError, Pmf, RngStream
from .sem_generators import (GeneratorSpec, default_test_envs, env_params,
                             draw_fixed_weights, generate_env)
from .trainer import METHODS, TrainConfig, random_search
from .dynamics import theorem5_report
from .entropy_lab import (LabeledMixture, conditional_entropy_gap,
                          gaussian_entropy_bound, sum_entropy_gap)
from .reporting import (SWEEP_FIELDS, SUMMARY_FIELDS, aggregate_report,
                        aggregate_rows, config_hash, fmt_float,
                        format_summary_table, read_csv, summary_csv_rows,
                        sweep_row_tuple, write_csv, write_json)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_USAGE = 64

EXAMPLE_CHOICES = ("ex1", "ex1s", "ex2", "ex2s", "ex3", "ex3s", "twod", "xor")

# Trajectory CSVs keep at most this many rows per flow.
TRAJECTORY_MAX_ROWS = 4000


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _spec_from_args(args):
    base = args.example.rstrip("s") if args.example.endswith("s") and \
        args.example not in ("twod",) else args.example
    scramble = args.example.endswith("s") and args.example != "twod"
    spec_kwargs = dict(example=base, n_envs=args.envs, scramble=scramble)
    for key in ("m", "o", "n_per_env", "xor_variant", "xor_q", "xor_a"):
        if getattr(args, key, None) is not None:
            spec_kwargs[key] = getattr(args, key)
    if base == "xor" and "xor_variant" not in spec_kwargs:
        spec_kwargs["xor_variant"] = "both"
    return GeneratorSpec(**spec_kwargs)


def _train_config(args):
    kwargs = {}
    for key in ("steps", "optimizer"):
        if getattr(args, key, None) is not None:
            kwargs[key] = getattr(args, key)
    return TrainConfig(**kwargs)


def cmd_generate(args):
    spec = _spec_from_args(args)
    rng = RngStream(args.seed)
    fw = draw_fixed_weights(spec, rng)
    params = env_params(spec, rng)
    meta = {"root_seed": args.seed,
            "config_hash": config_hash({"command": "generate",
                                        "example": args.example,
                                        "envs": args.envs,
                                        "seed": args.seed})}
    os.makedirs(args.out, exist_ok=True)
    files = []
    for p in params:
        env = generate_env(spec, p, fw, rng)
        d = env.X.shape[1]
        fields = ["env_id", "y"] + [f"x_{j}" for j in range(d)]
        rows = []
        include_latents = env.Z_inv is not None
        if include_latents:
            fields += [f"zinv_{j}" for j in range(env.Z_inv.shape[1])]
            fields += [f"zspu_{j}" for j in range(env.Z_spu.shape[1])]
        for i in range(env.n):
            row = [env.env_id, env.Y[i], *env.X[i]]
            if include_latents:
                row += [*env.Z_inv[i], *env.Z_spu[i]]
            rows.append(row)
        path = os.path.join(args.out, f"env_{p.env_id}.csv")
        write_csv(path, fields, rows, meta)
        files.append(os.path.basename(path))
    write_json(os.path.join(args.out, "manifest.json"),
               {"example": args.example, "n_envs": args.envs,
                "n_per_env": spec.n_per_env, "files": files},
               meta)
    return EXIT_OK


def cmd_sweep(args):
    spec = _spec_from_args(args)
    methods = [m.strip().upper() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ParameterError(f"unknown method {m!r}")
    tc = _train_config(args)
    rng = RngStream(args.seed)
    rows = []
    for method in methods:
        rows.extend(random_search(spec, method, (args.queries, args.seeds),
                                  rng.fork(f"method/{method}"), tc))
    meta = {"root_seed": args.seed,
            "config_hash": config_hash({"command": "sweep",
                                        "example": args.example,
                                        "envs": args.envs,
                                        "queries": args.queries,
                                        "seeds": args.seeds,
                                        "methods": methods,
                                        "seed": args.seed})}
    os.makedirs(args.out, exist_ok=True)
    sweep_path = os.path.join(args.out, "sweep.csv")
    write_csv(sweep_path, SWEEP_FIELDS, [sweep_row_tuple(r) for r in rows], meta)
    summary = aggregate_report([sweep_path])
    write_csv(os.path.join(args.out, "summary.csv"), SUMMARY_FIELDS,
              summary_csv_rows(summary), meta)
    print(format_summary_table(summary))
    return EXIT_OK


def cmd_dynamics(args):
    report = theorem5_report(args.p, args.gamma, args.eps, args.dt)
    meta = {"root_seed": args.seed,
            "config_hash": config_hash({"command": "dynamics", "p": args.p,
                                        "gamma": args.gamma, "eps": args.eps,
                                        "dt": args.dt})}
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for name in ("ib_erm", "erm"):
        traj = report[f"{'ib' if name == 'ib_erm' else 'erm'}_trajectory"]
        stride = max(1, -(-len(traj.times) // TRAJECTORY_MAX_ROWS))
        ratio = traj.ratio(args.p)
        for i in range(0, len(traj.times), stride):
            rows.append((name, traj.times[i], traj.w_inv[i],
                         traj.w_spu[i], ratio[i]))
    write_csv(os.path.join(args.out, "trajectory.csv"),
              ("flow", "t", "w_inv", "w_spu", "ratio"), rows, meta)
    verdict = {k: report[k] for k in
               ("p", "gamma", "eps", "dt", "x_star", "t_ib", "crossing_time",
                "ib_ratio_at_tib", "erm_ratio_at_tib", "erm_lower_bound",
                "ratio_bound_scaled", "pass", "ib_pass", "erm_pass")}
    write_json(os.path.join(args.out, "verdict.json"), verdict, meta)
    print(json.dumps(verdict, indent=2, default=float))
    return EXIT_OK if report["pass"] else EXIT_VALIDATION


def _random_pmf(rng, max_atoms=8):
    k = 2 + rng.categorical([1.0 / (max_atoms - 1)] * (max_atoms - 1))
    support = np.sort(rng.uniform_array((k,), -5.0, 5.0))
    while np.any(np.diff(support) < 1e-6):
        support = np.sort(rng.uniform_array((k,), -5.0, 5.0))
    probs = rng.uniform_array((k,), 0.05, 1.0)
    return Pmf(support, probs / probs.sum())


def run_entropy_suite(seed=0, trials=1000):
    """Run the randomized entropy checks; returns a list of result dicts."""
    rng = RngStream(seed).fork("entropy")
    results = []

    worst = np.inf
    r = rng.fork("sum_gap")
    for i in range(trials):
        ri = r.fork(f"trial{i}")
        gap = sum_entropy_gap(_random_pmf(ri.fork("p")), _random_pmf(ri.fork("q")))
        worst = min(worst, gap)
    results.append({"check": "sum_entropy_strict", "trials": trials,
                    "worst_gap": worst, "pass": worst > 1e-9})

    worst = np.inf
    r = rng.fork("cond_gap")
    for i in range(trials):
        ri = r.fork(f"trial{i}")
        k = 2 + ri.fork("k").categorical([0.5, 0.3, 0.2])
        weights = ri.fork("w").uniform_array((k,), 0.05, 1.0)
        weights /= weights.sum()
        comps = tuple((float(w), _random_pmf(ri.fork(f"pmf{j}")))
                      for j, w in enumerate(weights))
        gap = conditional_entropy_gap(LabeledMixture(comps))
        worst = min(worst, gap)
    results.append({"check": "conditioning_reduces_entropy", "trials": trials,
                    "worst_gap": worst, "pass": worst >= -1e-12})

    # Analytic variance-bound catalogue: (name, entropy, variance, is_gaussian)
    width, scale, sigma = 1.0, 0.7, 1.3
    catalogue = [
        ("uniform", np.log(width), width ** 2 / 12.0, False),
        ("laplace", 1.0 + np.log(2.0 * scale), 2.0 * scale ** 2, False),
        ("triangular", 0.5 + np.log(width), width ** 2 / 6.0, False),
        ("gaussian", 0.5 * np.log(2 * np.pi * np.e * sigma ** 2), sigma ** 2, True),
    ]
    worst = np.inf
    ok = True
    for name, h, var, is_gauss in catalogue:
        slack = gaussian_entropy_bound(var) - h
        worst = min(worst, slack)
        if is_gauss:
            ok &= abs(slack) < 1e-12
        else:
            ok &= slack > 1e-9
    results.append({"check": "variance_bounds_entropy", "trials": len(catalogue),
                    "worst_gap": worst, "pass": bool(ok)})
    return results


def cmd_entropy(args):
    results = run_entropy_suite(seed=args.seed, trials=args.trials)
    print(f"{'check':<32}{'trials':>8}{'worst gap':>16}{'verdict':>9}")
    all_pass = True
    for res in results:
        verdict = "pass" if res["pass"] else "FAIL"
        all_pass &= res["pass"]
        print(f"{res['check']:<32}{res['trials']:>8}"
              f"{res['worst_gap']:>16.3e}{verdict:>9}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        meta = {"root_seed": args.seed,
                "config_hash": config_hash({"command": "entropy",
                                            "seed": args.seed,
                                            "trials": args.trials})}
        write_csv(os.path.join(args.out, "entropy.csv"),
                  ("check", "trials", "worst_gap", "pass"),
                  [(r["check"], r["trials"], r["worst_gap"], r["pass"])
                   for r in results], meta)
    return EXIT_OK if all_pass else EXIT_VALIDATION


def cmd_report(args):
    summary = aggregate_report(args.files)
    meta = {"root_seed": args.seed,
            "config_hash": config_hash({"command": "report",
                                        "files": sorted(args.files)})}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "summary.csv"), SUMMARY_FIELDS,
                  summary_csv_rows(summary), meta)
    print(format_summary_table(summary))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="oodbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out")
        p.add_argument("--config", default=None)

    g = sub.add_parser("generate", help="write one CSV per environment")
    common(g)
    g.add_argument("--example", choices=EXAMPLE_CHOICES, default="ex2")
    g.add_argument("--envs", type=int, default=3)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sweep", help="random hyperparameter search")
    common(s)
    s.add_argument("--example", choices=EXAMPLE_CHOICES, default="ex2")
    s.add_argument("--envs", type=int, default=3)
    s.add_argument("--queries", type=int, default=20)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--methods", default="erm,irm,iberm,ibirm")
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("dynamics", help="verify the learning-speed bounds")
    common(d)
    d.add_argument("--p", type=float, default=0.9)
    d.add_argument("--gamma", type=float, default=0.58)
    d.add_argument("--eps", type=float, default=1e-3)
    d.add_argument("--dt", type=float, default=1e-2)
    d.set_defaults(func=cmd_dynamics)

    e = sub.add_parser("entropy", help="run the entropy lemma suite")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None)
    e.add_argument("--config", default=None)
    e.add_argument("--trials", type=int, default=1000)
    e.set_defaults(func=cmd_entropy)

    r = sub.add_parser("report", help="aggregate sweep CSVs")
    r.add_argument("files", nargs="+")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_report)
    return parser


def _apply_config_file(args, parser):
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = json.load(fh)
        for key, value in cfg.items():
            attr = key.replace("-", "_")
            # flags given explicitly on the command line win
            if f"--{key}" not in sys.argv and f"--{attr}" not in sys.argv:
                setattr(args, attr, value)
    return args


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(args, parser)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_OK
    except ParameterError as exc:
        print(f"oodbench: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"oodbench: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FileNotFoundError as exc:
        print(f"oodbench: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
