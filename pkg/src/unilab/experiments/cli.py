"""Command line entry point: ``unilab run | class-report | selftest``.

Exit codes: 0 success, 2 configuration error, 3 a tolerance check failed
(``run --check``, ``class-report --check`` and ``selftest``).
"""

import argparse
import json
import sys

import numpy as np

from ..errors import ConfigError, UnilabError
from . import config as cfgmod
from .runners import build_operator, run

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3


def _passed(table):
    s = table.summary
    if "pass" in s:
        return bool(s["pass"])
    if "max_discrepancy" in s:
        return s["max_discrepancy"] <= 0.05
    if "max_total_variation" in s:
        return s["max_total_variation"] <= 0.05
    flags = [c["breakdown"] for k, v in s.items() if isinstance(v, dict) and "comparisons" in v
             for c in v["comparisons"].values() if c["breakdown"] is not None]
    return any(flags) if flags else True


def cmd_run(args):
    cfg = cfgmod.load(args.config)
    if args.out:
        cfg.output_dir = args.out
    table = run(cfg)
    csv_path, json_path = table.write(cfg.output_dir)
    print(f"wrote {csv_path} and {json_path}")
    if args.check and not _passed(table):
        print("check FAILED")
        return EXIT_CHECK
    return EXIT_OK


def parse_target(text):
    """``bernoulli:ALPHA``, ``mask:L`` or ``ones`` as a spectral measure."""
    from .. import ensembles as en
    kind, _, arg = text.partition(":")
    try:
        if kind == "bernoulli":
            return en.bernoulli(float(arg or 0.5))
        if kind == "mask":
            return en.mask_measure(int(arg or 2))
        if kind == "ones":
            return en.empirical([1.0])
    except ValueError as exc:
        raise ConfigError("--target", str(exc)) from None
    raise ConfigError("--target", f"unknown target {text!r}")


def cmd_class_report(args):
    if args.n < 2:
        raise ConfigError("--n", "must be at least 2")
    ens = {"tag": args.ensemble}
    if args.param:
        for item in args.param:
            key, _, value = item.partition("=")
            try:
                ens[key] = json.loads(value)
            except json.JSONDecodeError:
                ens[key] = value
    from ..universality import TolProfile, class_report
    try:
        X = build_operator(ens, args.n, args.seed)
    except UnilabError as exc:
        raise ConfigError("--ensemble", str(exc)) from None
    target = X.measure if args.target is None else parse_target(args.target)
    rep = class_report(X, target, ks=range(1, args.kmax + 1), tol_profile=TolProfile(),
                       seed=args.seed)
    print(rep.to_json(indent=1))
    if args.check and not rep.passed:
        return EXIT_CHECK
    return EXIT_OK


def selftest_checks():
    """Fast invariant checks; yields ``(name, ok, detail)``."""
    from .. import dynamics as dy
    from .. import ensembles as en
    from .. import regularization as rg
    from .. import transforms as tf
    from ..universality import empirical_moment

    rng = np.random.default_rng(0)
    v = rng.standard_normal(1024)
    err = float(np.max(np.abs(tf.fwht(tf.fwht(v)) - v)))
    yield "fwht involution", err <= 1e-12, err
    err = float(np.max(np.abs(tf.idct(tf.dct(v)) - v)))
    yield "dct inverse pair", err <= 1e-12, err
    for tag in ("spike_sine", "spike_hwt", "mask", "rand_dct", "haar", "partial_hadamard", "tiid"):
        X = en.sample_ensemble(tag, 64, seed=1)
        u, w = rng.standard_normal(X.cols), rng.standard_normal(X.rows)
        gap = abs(X.forward(u) @ w - u @ X.adjoint(w)) / (np.linalg.norm(u) * np.linalg.norm(w))
        yield f"adjoint consistency {tag}", gap <= 1e-10, gap
    ratio = rg.check_nonexpansive(rg.elastic_net(1.0, 1e-3), 0.9, pairs=10_000, seed=0)
    yield "elastic net prox nonexpansive", ratio <= 1 + 1e-9, ratio
    X = en.sample_ensemble("haar", 256, seed=2)
    psi = dy.gram_power_operator(X, 1, 0.5)
    (M,) = dy.build_semirandom([psi], seed=3)
    d = abs(empirical_moment(M, 1, exact=True) - empirical_moment(psi, 1, exact=True))
    yield "sign conjugation keeps the trace", d <= 1e-10, d


def cmd_selftest(args):
    ok = True
    for name, good, detail in selftest_checks():
        print(f"{'PASS' if good else 'FAIL'} {name} ({detail:.3g})")
        ok &= bool(good)
    return EXIT_OK if ok else EXIT_CHECK


def build_parser():
    p = argparse.ArgumentParser(prog="unilab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="override output_dir")
    r.add_argument("--check", action="store_true", help="exit 3 when the experiment's check fails")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("class-report", help="universality-class diagnostics for one draw")
    c.add_argument("--ensemble", required=True)
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--kmax", type=int, default=6)
    c.add_argument("--param", action="append", help="extra ensemble parameter key=value")
    c.add_argument("--target", help="limit law to test against (bernoulli:A, mask:L, ones); "
                   "defaults to the ensemble's declared spectrum")
    c.add_argument("--check", action="store_true")
    c.set_defaults(func=cmd_class_report)
    s = sub.add_parser("selftest", help="run the fast invariant checks")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
