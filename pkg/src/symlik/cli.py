"""Command-line entry point: ``symlik <subcommand> [options]``.

Subcommands ``table1``, ``estimators``, ``factor`` and ``regression`` run the
simulation studies and write ``<name>.csv`` plus ``<name>.manifest.json`` to
``--out``.  ``symbolize`` turns a CSV of micro-data into rectangle JSON and
``sample`` runs one sampler on such a file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .likelihood import ApproximateEstimator, ExactEstimator, PoissonConfig
from .models import FactorModel, GaussianModel
from .pmmh import MCMCConfig, SymbolicTarget, signed_block_pmmh
from .symbols import build_quantile_rectangle, load_symbols, read_csv, save_symbols

log = logging.getLogger("symlik")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _apply(config, args, config_file=None):
    """Overlay a JSON config file, then explicitly given CLI flags, onto a dataclass config."""
    if config_file:
        payload = json.loads(Path(config_file).read_text())
        config = replace(config, **{k: v for k, v in payload.items() if k in {f.name for f in fields(config)}})
    updates = {}
    for f in fields(config):
        val = getattr(args, f.name, None)
        if val is not None:
            updates[f.name] = val
    return replace(config, **updates)


def _finish(table, name, config, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / f"{name}.csv")
    ex.write_manifest(out / f"{name}.manifest.json", name, config, getattr(config, "seed", None))
    for r in table.rows:
        setting = " ".join(f"{k}={v}" for k, v in r["setting"].items())
        sd = "" if np.isnan(r["sd"]) else f" (sd {r['sd']:.4g})"
        print(f"{setting:40s} {r['metric']:24s} {r['value']:.6g}{sd}")


FULL_SCALE = {
    "table1": dict(rhos=(0.0, 0.3, 0.5, 0.7, 0.9), ns=(5, 10, 100, 1000, 100_000), replicates=100),
    "estimators": dict(dims=tuple(range(2, 11)), replicates=1000),
    "factor": dict(n=500_000, replicates=10, M=6000),
    "regression": dict(groups=tuple(range(14)), n_per_group=400_000, qs=(0.005, 0.01, 0.025, 0.05, 0.1),
                       iterations=20_000, min_count=10_000),
}


def cmd_experiment(args) -> int:
    name = args.command
    defaults = {
        "table1": ex.Table1Config(),
        "estimators": ex.EstimatorConfig(),
        "factor": ex.FactorConfig(),
        "regression": ex.RegressionConfig(),
    }[name]
    if args.full_scale:
        defaults = replace(defaults, **FULL_SCALE[name])
    config = _apply(defaults, args, args.config)
    runner = {
        "table1": ex.run_table1,
        "estimators": ex.run_estimator_comparison,
        "factor": ex.run_factor_experiment,
        "regression": ex.run_regression_experiment,
    }[name]
    table = runner(config)
    _finish(table, name, config, Path(args.out))
    return 0


def cmd_symbolize(args) -> int:
    data = read_csv(args.input, header=args.header)
    symbol = build_quantile_rectangle(data, args.q)
    save_symbols([symbol], args.output)
    print(f"n={symbol.n_total} n_b={symbol.n_b} n_e={symbol.n_e} n_r={symbol.n_r}")
    return 0


def cmd_sample(args) -> int:
    symbols = load_symbols(args.symbols)
    d = symbols[0].dim
    model = GaussianModel(d) if args.model == "mvn" else FactorModel(d, args.factors)
    if args.estimator == "approximate":
        estimator = ApproximateEstimator(M=args.M, n_blocks=args.blocks)
    else:
        estimator = ExactEstimator(args.T, args.M, PoissonConfig(args.lam, args.gamma), blocking=args.blocking)
    start = ex._factor_start(model, symbols[0]) if args.model == "factor" else _mvn_start(model, symbols[0])
    config = MCMCConfig(iterations=args.iterations, burn_in=args.burn_in)
    chain = signed_block_pmmh(SymbolicTarget(model, symbols, estimator), start, config, rng=args.seed)
    chain.to_csv(args.output)
    mean = chain.posterior_mean()
    print(f"acceptance {chain.acceptance_rate:.3f}, negative signs {chain.negative_sign_fraction:.3f}")
    for name, v in zip(chain.names, mean):
        print(f"{name:12s} {v: .5f}")
    return 0


def _mvn_start(model: GaussianModel, symbol) -> np.ndarray:
    from .models import MvnParams

    sd = (symbol.upper - symbol.lower) / 4.0
    return model.pack(MvnParams(0.5 * (symbol.lower + symbol.upper), np.diag(sd)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="symlik", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default="results", help="output directory")
        sp.add_argument("--config", help="JSON file with config fields")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--full-scale", action="store_true", help="use the full-size settings")
        sp.set_defaults(func=cmd_experiment)

    t1 = sub.add_parser("table1", help="correlation recovery with min-max rectangles")
    common(t1)
    t1.add_argument("--rhos", type=_floats)
    t1.add_argument("--ns", type=_ints)
    t1.add_argument("--m", type=int)
    t1.add_argument("--replicates", type=int)
    t1.add_argument("--profile", action="store_true", default=None, help="optimise rho only")

    es = sub.add_parser("estimators", help="path vs Taylor and Poisson vs bias-corrected")
    common(es)
    es.add_argument("--dims", type=_ints)
    es.add_argument("--replicates", type=int)
    es.add_argument("--n", type=int)
    es.add_argument("--T", type=int)
    es.add_argument("--M", type=int)
    es.add_argument("--oracle-M", dest="oracle_M", type=int)

    fa = sub.add_parser("factor", help="factor model, SDA vs full data")
    common(fa)
    fa.add_argument("--d", type=int)
    fa.add_argument("--n", type=int)
    fa.add_argument("--q", type=float)
    fa.add_argument("--iterations", type=int)
    fa.add_argument("--replicates", type=int)
    fa.add_argument("--M", type=int)
    fa.add_argument("--estimator", choices=("approximate", "exact"))
    fa.add_argument("--T", type=int)
    fa.add_argument("--M-path", dest="M_path", type=int)

    rg = sub.add_parser("regression", help="grouped heteroscedastic regression over a q grid")
    common(rg)
    rg.add_argument("--groups", type=_ints)
    rg.add_argument("--n-per-group", dest="n_per_group", type=int)
    rg.add_argument("--qs", type=_floats)
    rg.add_argument("--iterations", type=int)
    rg.add_argument("--M", type=int)
    rg.add_argument("--min-count", dest="min_count", type=int)
    rg.add_argument("--em-rows", dest="em_rows", type=int, help="rows subsampled for each EM fit")
    rg.add_argument("--em-restarts", dest="em_restarts", type=int)

    sy = sub.add_parser("symbolize", help="CSV micro-data to rectangle JSON")
    sy.add_argument("input")
    sy.add_argument("output")
    sy.add_argument("--q", type=float, default=0.0)
    sy.add_argument("--header", action=argparse.BooleanOptionalAction, default=None)
    sy.set_defaults(func=cmd_symbolize)

    sa = sub.add_parser("sample", help="run one signed PMMH chain on rectangle JSON")
    sa.add_argument("symbols")
    sa.add_argument("output", help="chain CSV")
    sa.add_argument("--model", choices=("mvn", "factor"), default="mvn")
    sa.add_argument("--factors", type=int, default=1)
    sa.add_argument("--estimator", choices=("approximate", "exact"), default="approximate")
    sa.add_argument("--iterations", type=int, default=10_000)
    sa.add_argument("--burn-in", dest="burn_in", type=int)
    sa.add_argument("--M", type=int, default=500)
    sa.add_argument("--blocks", type=int, help="number of u blocks (default: one per particle)")
    sa.add_argument("--T", type=int, default=20)
    sa.add_argument("--lam", type=float, default=3.0)
    sa.add_argument("--gamma", type=float, default=0.97)
    sa.add_argument("--blocking", choices=("temperature", "particle"), default="temperature")
    sa.add_argument("--seed", type=int, default=0)
    sa.set_defaults(func=cmd_sample)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
