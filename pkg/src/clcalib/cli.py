"""Command-line entry point: ``clcalib {fit,sample,calibrate,rerun}``.

Every command that writes to an output directory also writes
``manifest.txt``, a config file that ``clcalib rerun`` can replay.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, adjust, betabin, freq, harness, plot
from .config import Config, format_config, read_config
from .copula import FAMILIES, SimSetting, default_sizes
from .data import read_dataset_csv, read_size_table_csv
from .errors import ClCalibError, InputError, NumericalError
from .posterior import ChainConfig, GaussianPrior, BatchedLogPosterior, parameter_names, qb_interval, run_chains

logger = logging.getLogger("clcalib")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

CHAIN_DEFAULTS = {
    "chain.iterations": "60000",
    "chain.burn_in": "10000",
    "chain.thin": "10",
    "chain.adapt_start": "1000",
    "chain.adapt_every": "100",
}

STUDY_DEFAULTS = {
    "study.families": "clayton,frank,gumbel",
    "study.taus": "0.5,0.7,0.9",
    "study.phases": "1,2",
    "study.theta_config": "mixed",
    "study.rank": "kendall",
    "study.n_studies": "15",
    "study.size_seed": "20240601",
    "study.size_table": "",
    "study.reps": "200",
    "study.methods": ",".join(adjust.VARIANTS),
    "study.target": "dor",
    "study.seed": "1",
    "study.workers": "1",
    "study.chunk": "50",
    "output.svg": "true",
    **CHAIN_DEFAULTS,
}

FIT_DEFAULTS = {"fit.dataset": "", "fit.seed": "0"}

SAMPLE_DEFAULTS = {
    "sample.dataset": "",
    "sample.adjust": "none",
    "sample.target": "",
    "sample.levels": "0.5,0.8,0.95",
    "sample.seed": "0",
    "sample.prior_mean": "0",
    "sample.prior_var": "10000",
    **CHAIN_DEFAULTS,
}


def _chain_config(cfg: Config) -> ChainConfig:
    return ChainConfig(
        iterations=cfg.int("chain.iterations"),
        burn_in=cfg.int("chain.burn_in"),
        thin=cfg.int("chain.thin"),
        adapt_start=cfg.int("chain.adapt_start"),
        adapt_every=cfg.int("chain.adapt_every"),
    )


def _fmt(x) -> str:
    return repr(float(x))


def _matrix_csv(M: np.ndarray, names: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["", *names])
    for name, row in zip(names, M):
        writer.writerow([name, *(_fmt(v) for v in row)])
    return buf.getvalue()


def _write(out: Path, name: str, text: str):
    path = out / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_manifest(out: Path, command: str, values: dict[str, str], extra: dict[str, str] | None = None):
    manifest = {"run.command": command, "run.version": __version__, **values}
    for key, value in (extra or {}).items():
        manifest[key] = value
    _write(out, "manifest.txt", format_config(manifest))


def _split_manifest(values: dict[str, str]) -> tuple[str, dict[str, str]]:
    """Drop run.* and informational result.* keys; return (command, config)."""
    command = values.get("run.command", "")
    cfg = {k: v for k, v in values.items() if not k.startswith(("run.", "result."))}
    return command, cfg


# -- fit ---------------------------------------------------------------------


def _pi_gradient(theta, k: int) -> np.ndarray:
    g = np.zeros_like(theta)
    p = betabin.pi_k(theta, k)
    g[2 * k] = p * (1 - p)
    g[2 * k + 1] = -p * (1 - p)
    return g


def fit_report(data, fit: freq.FitResult) -> list[tuple[str, float, float, float]]:
    """(quantity, estimate, naive SE, robust SE) rows."""
    th = fit.theta_hat
    rows = []

    def add(name, value, grad):
        rows.append(
            (name, float(value), float(np.sqrt(max(grad @ fit.N_hat @ grad, 0))), float(np.sqrt(max(grad @ fit.V_hat @ grad, 0))))
        )

    names = parameter_names(data.n_groups)
    for j, name in enumerate(names):
        e = np.zeros_like(th)
        e[j] = 1.0
        add(name, th[j], e)
    for k in range(data.n_groups):
        add(f"pi{k + 1}", betabin.pi_k(th, k), _pi_gradient(th, k))
    if data.n_groups == 2:
        for measure in (betabin.DOR, betabin.LOG_DOR, betabin.RISK_DIFF):
            add(measure.label, measure.value(th), measure.gradient(th))
    return rows


def run_fit(values: dict[str, str], out: Path | None, stream=sys.stdout):
    cfg = Config(values, FIT_DEFAULTS)
    dataset = cfg.str("fit.dataset")
    if not dataset:
        raise InputError("no dataset given")
    data = read_dataset_csv(dataset)
    result = freq.fit(data, rng=np.random.default_rng(cfg.int("fit.seed")))
    rows = fit_report(data, result)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["quantity", "estimate", "se_naive", "se_robust"])
    for name, est, sn, sr in rows:
        writer.writerow([name, _fmt(est), _fmt(sn), _fmt(sr)])
    report = buf.getvalue()
    stream.write(report)
    if out is not None:
        names = parameter_names(data.n_groups)
        _write(out, "report.csv", report)
        _write(out, "H.csv", _matrix_csv(result.H_hat, names))
        _write(out, "J.csv", _matrix_csv(result.J_hat, names))
        _write(out, "N.csv", _matrix_csv(result.N_hat, names))
        _write(out, "V.csv", _matrix_csv(result.V_hat, names))
        _write_manifest(out, "fit", cfg.values, {"result.iterations": str(result.iterations)})
    return result, rows


# -- sample ------------------------------------------------------------------


def run_sample(values: dict[str, str], out: Path, stream=sys.stdout):
    cfg = Config(values, SAMPLE_DEFAULTS)
    dataset = cfg.str("sample.dataset")
    if not dataset:
        raise InputError("no dataset given")
    variant = cfg.str("sample.adjust")
    if variant not in adjust.VARIANTS:
        raise InputError(f"--adjust must be one of {', '.join(adjust.VARIANTS)}")
    target = betabin.EffectMeasure.parse(cfg.str("sample.target")) if cfg.str("sample.target") else None
    if variant == "magnitude-targeted" and target is None:
        raise InputError("magnitude-targeted requires --target")
    levels = cfg.floats("sample.levels")
    data = read_dataset_csv(dataset)
    dim = 2 * data.n_groups
    prior = GaussianPrior.isotropic(dim, cfg.float("sample.prior_var"), cfg.float("sample.prior_mean"))
    seed = cfg.int("sample.seed")
    result = freq.fit(data, rng=np.random.default_rng([seed, 0]))
    adj = adjust.tune(result, variant, target)
    chain = _chain_config(cfg)
    target_fn = BatchedLogPosterior([data], [adj], [prior])
    sample = run_chains(
        target_fn,
        result.theta_hat[None],
        chain,
        [np.random.default_rng([seed, 1])],
        adjust.implied_covariance(adj, result)[None],
    )[0]

    measures = [betabin.marginal(j) for j in range(dim)]
    if data.n_groups == 2:
        measures += [betabin.DOR, betabin.LOG_DOR, betabin.RISK_DIFF]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["measure", "level", "lower", "upper"])
    for m in measures:
        for level in levels:
            lo, hi = qb_interval(sample, m, level)
            writer.writerow([m.label, f"{level:g}", _fmt(lo), _fmt(hi)])
    intervals = buf.getvalue()
    stream.write(intervals)
    stream.write(f"acceptance_rate,{sample.acceptance_rate:.4f}\n")

    extra = {"result.acceptance_rate": _fmt(sample.acceptance_rate)}
    if adj.A is not None:
        extra["result.A"] = ",".join(_fmt(v) for v in adj.A.ravel())
    else:
        extra["result.w"] = _fmt(adj.power)
    _write(out, "draws.csv", sample.to_csv())
    _write(out, "intervals.csv", intervals)
    _write_manifest(out, "sample", cfg.values, extra)
    return adj, sample


# -- calibrate ---------------------------------------------------------------


def build_grid(cfg: Config) -> list[harness.GridSetting]:
    families = cfg.list("study.families")
    for f in families:
        if f not in FAMILIES:
            raise InputError(f"study.families: unknown family {f!r}")
    if cfg.str("study.size_table"):
        sizes = read_size_table_csv(cfg.str("study.size_table"))
    else:
        sizes = default_sizes(cfg.int("study.n_studies"), cfg.int("study.size_seed"))
    grid = []
    for phase in cfg.ints("study.phases"):
        for family in families:
            for tau in cfg.floats("study.taus"):
                theta = cfg.str("study.theta_config") if phase == 2 else None
                setting = SimSetting(family, tau, phase, sizes, theta, rank=cfg.str("study.rank"))
                sid = f"{family}-t{tau:g}-p{phase}"
                if phase == 2 and theta != "mixed":
                    sid += f"-{theta}"
                grid.append(harness.GridSetting(sid, setting))
    return grid


def run_calibrate(values: dict[str, str], out: Path, stream=sys.stdout):
    cfg = Config(values, STUDY_DEFAULTS)
    values = dict(cfg.values)
    if values["study.size_table"]:
        values["study.size_table"] = str(Path(values["study.size_table"]).resolve())
        cfg = Config(values, STUDY_DEFAULTS)
    grid = build_grid(cfg)
    methods = cfg.list("study.methods")
    target = betabin.EffectMeasure.parse(cfg.str("study.target"))
    records = harness.run_study(
        grid,
        methods,
        cfg.int("study.reps"),
        cfg.int("study.workers"),
        chain=_chain_config(cfg),
        target=target,
        master_seed=cfg.int("study.seed"),
        chunk_size=cfg.int("study.chunk"),
    )
    min_records = min(50, cfg.int("study.reps"))
    curves = harness.all_curves(records, min_records=min_records)
    _write(out, "records.csv", harness.records_to_csv(records))
    _write(out, "curves.csv", harness.curves_to_csv(curves))
    _write(out, "failures.csv", harness.failures_to_csv(records))
    if cfg.bool("output.svg"):
        taus = {}
        for r in records:
            taus[r.curve_key()] = r.tau
        by_panel = {}
        for c in curves:
            by_panel.setdefault((c.measure, c.method), []).append(c)
        for (measure, method), cs in sorted(by_panel.items()):
            _write(out, f"plots/{measure}__{method}.svg", plot.calibration_svg(cs, taus, f"{measure} / {method}"))
    frac = harness.failure_fraction(records)
    # workers never change outputs, so they stay out of the manifest
    manifest_values = {k: v for k, v in cfg.values.items() if k != "study.workers"}
    _write_manifest(out, "calibrate", manifest_values, {"result.failure_fraction": _fmt(frac)})
    stream.write(f"records: {len(records)}  curves: {len(curves)}  failure fraction: {frac:.4f}\n")
    return records, curves


# -- argument parsing --------------------------------------------------------


def _add_chain_flags(p):
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thin", type=int)


def _chain_values(args) -> dict[str, str]:
    out = {}
    for flag, key in (("iterations", "chain.iterations"), ("burn_in", "chain.burn_in"), ("thin", "chain.thin")):
        v = getattr(args, flag)
        if v is not None:
            out[key] = str(v)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clcalib", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="maximum composite likelihood fit with naive and robust SEs")
    p.add_argument("dataset", help="CSV with header study,n1,y1,n2,y2")
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int, default=0, help="seed for optimizer restarts")

    p = sub.add_parser("sample", help="sample an adjusted posterior")
    p.add_argument("dataset")
    p.add_argument("--adjust", choices=adjust.VARIANTS, default="none")
    p.add_argument("--target", help="dor, logdor, riskdiff or theta<j>")
    p.add_argument("--levels", default="0.5,0.8,0.95")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior-var", type=float, default=1e4)
    p.add_argument("--prior-mean", type=float, default=0.0)
    p.add_argument("--out", type=Path, required=True)
    _add_chain_flags(p)

    p = sub.add_parser("calibrate", help="run the calibration simulation study")
    p.add_argument("config", nargs="?", type=Path, help="key = value config file")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--reps", type=int)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    return parser


def dispatch(command: str, values: dict[str, str], out: Path | None):
    if command == "fit":
        return run_fit(values, out)
    if command == "sample":
        return run_sample(values, out)
    if command == "calibrate":
        return run_calibrate(values, out)
    raise InputError(f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            values = {"fit.dataset": str(Path(args.dataset).resolve()), "fit.seed": str(args.seed)}
            dispatch("fit", values, args.out)
        elif args.command == "sample":
            values = {
                "sample.dataset": str(Path(args.dataset).resolve()),
                "sample.adjust": args.adjust,
                "sample.target": args.target or "",
                "sample.levels": args.levels,
                "sample.seed": str(args.seed),
                "sample.prior_var": repr(args.prior_var),
                "sample.prior_mean": repr(args.prior_mean),
                **_chain_values(args),
            }
            dispatch("sample", values, args.out)
        elif args.command == "calibrate":
            values = read_config(args.config) if args.config else {}
            command, values = _split_manifest(values)
            if command and command != "calibrate":
                raise InputError(f"{args.config} is a manifest for {command!r}, not calibrate")
            if args.workers is not None:
                values["study.workers"] = str(args.workers)
            if args.reps is not None:
                values["study.reps"] = str(args.reps)
            dispatch("calibrate", values, args.out)
        else:
            command, values = _split_manifest(read_config(args.manifest))
            if not command:
                raise InputError(f"{args.manifest} has no run.command")
            dispatch(command, values, args.out)
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ClCalibError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
