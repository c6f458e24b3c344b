"""Command-line interface: ``python -m pinchaos <subcommand> [flags]``.

Exit codes: 0 success, 1 a recorded check failed, 2 usage or parameter
domain error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .chaos import RegimeKernel, MCSpec, second_moment_skorohod, second_moment_stratonovich
from .environment import CorrelationKernel, KernelKind, sample_environment_batch, save_environment_csv
from .errors import DomainError, EmbeddingNotPSD, PinchaosError
from .io import TableCache, read_config_file, write_manifest
from .lab import (
    ExperimentConfig,
    cauchy_convergence_study,
    criticality_probe,
    run_partition_samples,
    u_statistic_convergence,
    _csv,
)
from .partition import Mode
from .renewal import SlowlyVaryingSpec, build_gap_law, renewal_mass

SUBCOMMANDS = ("renewal", "env", "simulate", "converge", "critical", "chaos", "ustat", "selftest")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _ladder(text):
    return tuple(int(float(x)) for x in str(text).replace(";", ",").split(",") if x.strip())


def _boxes(text):
    out = []
    for part in str(text).split(","):
        lo, hi = part.split(":")
        out.append((float(lo), float(hi)))
    return out


def _add_common(p):
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--H", type=float, default=0.8)
    p.add_argument("--beta-hat", type=float, default=1.0)
    p.add_argument("--h-hat", type=float, default=0.0)
    p.add_argument("--N", type=int, default=256)
    p.add_argument("--ladder", type=_ladder, default=None)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--mode", default="free,wick")
    p.add_argument("--kernel", default="fgn", choices=["fgn", "truncpow"])
    p.add_argument("--L", dest="L", default="const:1")
    p.add_argument("--L-convention", default="effective", choices=["effective", "unit"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="pinchaos_out")
    p.add_argument("--cache", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--workers", type=int, default=1,
                   help="accepted for scripting; results never depend on it")
    p.add_argument("--n-max", type=int, default=2 ** 16)


def build_parser():
    parser = _Parser(prog="pinchaos", description="Disordered pinning in correlated Gaussian environments.")
    parser.add_argument("--version", action="version", version=f"pinchaos {__version__}")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        _add_common(p)
        if name in ("simulate", "converge"):
            p.add_argument("--tau-paths", type=int, default=4096)
            p.add_argument("--replica-M", type=int, default=0)
            p.add_argument("--ks-threshold", type=float, default=0.03)
        if name == "critical":
            p.add_argument("--alphas", type=lambda s: [float(x) for x in s.split(",")],
                           default=[0.3, 0.75])
            p.set_defaults(L_convention="unit", N=11)
        if name == "chaos":
            p.add_argument("--kind", choices=["skorohod", "stratonovich"], default="skorohod")
            p.add_argument("--R", type=int, default=None)
            p.add_argument("--nodes", type=int, default=20000)
            p.add_argument("--budget", type=float, default=1e-3)
        if name == "ustat":
            p.add_argument("--boxes", type=_boxes, default=[(0.0, 1.0)])
        if name == "selftest":
            p.add_argument("--quick", action="store_true")
    return parser


def _apply_config(parser, argv):
    """Merge a ``--config`` file under the command line; command-line values win."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    cfg = read_config_file(known.config)
    sub = next((a for a in argv if a in SUBCOMMANDS), None) or cfg.pop("subcommand", None)
    cfg.pop("subcommand", None)
    given = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    extra = []
    for key, value in cfg.items():
        if key in given or key == "config":
            continue
        if value is None:
            continue
        if isinstance(value, bool):
            if value:
                extra.append(f"--{key.replace('_', '-')}")
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(_plain(v) for v in value)
        flag = "--L" if key == "L" else f"--{key.replace('_', '-')}"
        extra += [flag, _plain(value)]
    argv = list(argv)
    if sub is not None and sub not in argv:
        argv.insert(0, sub)
    return argv + extra


def _plain(v):
    if isinstance(v, (list, tuple)):
        return ":".join(_plain(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


# ---------------------------------------------------------------------------
# domain checks with the assumption that fails


def _check_common(a):
    if not 0.5 < a.H < 1:
        raise DomainError(f"H={a.H} violates the standing assumption H in (1/2, 1) "
                          "(long-range positively correlated environment)")
    if not a.alpha > 0:
        raise DomainError(f"alpha={a.alpha} violates alpha > 0 (regularly varying gap law)")
    if a.reps < 1:
        raise DomainError("--reps must be positive")


def _ladder_of(a):
    return a.ladder if a.ladder else (a.N,)


def _sv(a):
    return SlowlyVaryingSpec.parse(a.L)


def _params(a):
    d = {k: v for k, v in vars(a).items() if k not in ("config",)}
    for k, v in list(d.items()):
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def _experiment(a, ladder):
    return ExperimentConfig(alpha=a.alpha, H=a.H, beta_hat=a.beta_hat, h_hat=a.h_hat,
                            mode=Mode.parse(a.mode), ladder=ladder, reps=a.reps, seed=a.seed,
                            kernel=KernelKind.parse(a.kernel), sv=_sv(a),
                            tau_paths=a.tau_paths, n_max=a.n_max, replica_M=a.replica_M,
                            ks_threshold=a.ks_threshold, L_convention=a.L_convention)


# ---------------------------------------------------------------------------
# subcommands


def cmd_renewal(a):
    _check_common(a)
    sv = _sv(a)
    law = TableCache(a.cache).law(a.alpha, sv, a.n_max) if a.cache else build_gap_law(a.alpha, sv, n_max=a.n_max)
    N = max(_ladder_of(a))
    mass = renewal_mass(law, N)
    os.makedirs(a.out, exist_ok=True)
    law_path = os.path.join(a.out, "law.csv")
    rows = [{"n": n, "q": float(law.q[n]), "cdf": float(law.cdf[n]), "survival": float(law.survival[n])}
            for n in range(N + 1)]
    with open(law_path, "w", newline="") as fh:
        fh.write(_csv(["n", "q", "cdf", "survival"], rows))
    mass_path = os.path.join(a.out, "renewal_mass.csv")
    with open(mass_path, "w", newline="") as fh:
        fh.write(_csv(["n", "u"], [{"n": n, "u": float(mass.u[n])} for n in range(N + 1)]))
    summary = {"norm_c": law.norm_c, "tail_mass": law.tail_mass, "regime": law.regime.value,
               "C_alpha": law.C_alpha, "truncated_mean_N": float(law.l(N))}
    return [law_path, mass_path], summary, 0


def cmd_env(a):
    _check_common(a)
    k = CorrelationKernel(a.H, KernelKind.parse(a.kernel))
    if a.cache:
        TableCache(a.cache).kernel_table(k, max(_ladder_of(a)))
    os.makedirs(a.out, exist_ok=True)
    paths = []
    for N in _ladder_of(a):
        s = sample_environment_batch(k, N, a.reps, a.seed)
        p = os.path.join(a.out, f"env_N{N}.csv")
        save_environment_csv(s, p)
        paths += [p, p + ".json"]
    return paths, {}, 0


def cmd_simulate(a):
    _check_common(a)
    cfg = _experiment(a, _ladder_of(a))
    os.makedirs(a.out, exist_ok=True)
    p = os.path.join(a.out, "samples.csv")
    samples = run_partition_samples(cfg, path=p)
    summary = {}
    from ._stats import batched_se
    for N, v in samples.items():
        z = np.exp(v)
        summary[str(N)] = {"mean": float(z.mean()), "se": batched_se(z), "M": int(z.size), "seed": a.seed}
    sp = os.path.join(a.out, "summary.json")
    with open(sp, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return [p, sp], summary, 0


def cmd_converge(a):
    _check_common(a)
    lad = _ladder_of(a)
    if Mode.parse(a.mode).wick and a.h_hat == 0 and not (a.alpha > 0.5 and a.alpha + a.H > 1):
        raise DomainError("the Skorohod-type limit needs alpha > 1/2 and alpha + H > 1")
    cfg = _experiment(a, lad)
    rep = cauchy_convergence_study(cfg)
    os.makedirs(a.out, exist_ok=True)
    prefix = os.path.join(a.out, "converge")
    rep.write(prefix)
    return ([f"{prefix}_moments.csv", f"{prefix}_ks.csv", f"{prefix}_report.json"],
            {"flags": rep.flags}, 0 if rep.passed else 1)


def cmd_critical(a):
    _check_common(a)
    lad = a.ladder or (7, 8, 9, 10, 11)
    tab = criticality_probe(a.alphas, a.H, lad, a.beta_hat, a.h_hat, a.kernel, _sv(a),
                            a.L_convention)
    os.makedirs(a.out, exist_ok=True)
    p = os.path.join(a.out, "critical.csv")
    with open(p, "w", newline="") as fh:
        fh.write(tab.to_csv())
    summary = {str(al): {"relative_increment": tab.relative_increment(al),
                         "strictly_increasing": tab.strictly_increasing(al),
                         "accelerating": tab.accelerating(al)} for al in tab.values}
    return [p], summary, 0


def cmd_chaos(a):
    _check_common(a)
    law = build_gap_law(a.alpha, _sv(a), n_max=a.n_max)
    rk = RegimeKernel.from_law(law)
    mc = MCSpec(nodes=a.nodes)
    if a.kind == "skorohod":
        res = second_moment_skorohod(a.beta_hat, a.h_hat, rk, a.H, R=a.R, mc_spec=mc,
                                     seed=a.seed, budget=a.budget)
    else:
        res = second_moment_stratonovich(a.beta_hat, a.h_hat, rk, a.H, R=2 if a.R is None else a.R,
                                         mc_spec=mc, seed=a.seed)
    os.makedirs(a.out, exist_ok=True)
    tp = os.path.join(a.out, "chaos_terms.csv")
    sp = os.path.join(a.out, "chaos_summary.json")
    res.to_csv(tp)
    res.to_json(sp)
    return [tp, sp], res.summary(), 0


def cmd_ustat(a):
    _check_common(a)
    rows, joint = u_statistic_convergence(a.H, _ladder_of(a), a.boxes, a.kernel,
                                          reps=a.reps, seed=a.seed)
    os.makedirs(a.out, exist_ok=True)
    p = os.path.join(a.out, "ustat.csv")
    with open(p, "w", newline="") as fh:
        fh.write(_csv(["N", "box_a", "box_b", "exact", "continuum", "rel_err", "mc", "mc_se"], rows))
    pj = os.path.join(a.out, "ustat_joint.csv")
    with open(pj, "w", newline="") as fh:
        fh.write(_csv(["N", "cross", "cross_se", "i2_mean", "i2_mean_se", "i2_second",
                       "i2_second_se", "i2_second_exact"], joint))
    return [p, pj], {}, 0


def cmd_selftest(a):
    from .selftest import run_selftest

    results = run_selftest(quick=a.quick, cache_dir=a.cache)
    os.makedirs(a.out, exist_ok=True)
    p = os.path.join(a.out, "selftest.json")
    with open(p, "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return [p], {"passed": all(results.values())}, 0 if all(results.values()) else 1


COMMANDS = {
    "renewal": cmd_renewal, "env": cmd_env, "simulate": cmd_simulate, "converge": cmd_converge,
    "critical": cmd_critical, "chaos": cmd_chaos, "ustat": cmd_ustat, "selftest": cmd_selftest,
}


def parse_and_dispatch(argv=None):
    """Run one subcommand; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        a = parser.parse_args(argv)
        if a.subcommand is None:
            raise UsageError(parser.format_usage() + "pinchaos: error: a subcommand is required")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (DomainError, OSError, ValueError) as exc:
        print(f"pinchaos: error: {exc}", file=sys.stderr)
        return 2
    try:
        outputs, summary, code = COMMANDS[a.subcommand](a)
    except (DomainError, EmbeddingNotPSD, ValueError) as exc:
        print(f"pinchaos: error: {exc}", file=sys.stderr)
        return 2
    except PinchaosError as exc:
        print(f"pinchaos: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    write_manifest(a.out, a.subcommand, _params(a), outputs, __version__)
    print(json.dumps(summary, sort_keys=True, default=_num))
    return code


def _num(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def main():
    sys.exit(parse_and_dispatch())
