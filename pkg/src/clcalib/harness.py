"""Simulation study driver: datasets -> fits -> adjusted posteriors -> h and g.

Work is split into fixed-size chunks of replications, one setting at a time.
Chunk boundaries depend only on the study configuration, never on the
worker count, and every random stream is derived from the master seed and
the (setting, replication, method) indices, so results are reproducible
regardless of parallelism.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import adjust, freq
from .betabin import DOR, RISK_DIFF, EffectMeasure, marginal
from .copula import SimSetting, simulate_dataset
from .errors import ClCalibError, InputError, InsufficientRecords
from .posterior import BatchedLogPosterior, ChainConfig, GaussianPrior, h_statistic, g_statistic, run_chains

logger = logging.getLogger(__name__)

MONITORED = (marginal(0), DOR, RISK_DIFF)
NOMINAL_GRID = np.round(np.arange(1, 100) / 100.0, 2)

# stream tags mixed into the seed sequence
_DATA, _FIT, _CHAIN = 0, 1, 2


def prior_for_phase(phase: int, dim: int = 4) -> GaussianPrior:
    return GaussianPrior.isotropic(dim, 1.0 if phase == 1 else 1e4)


@dataclass(frozen=True)
class GridSetting:
    setting_id: str
    setting: SimSetting


@dataclass(frozen=True)
class CalibrationRecord:
    setting_id: str
    family: str
    tau: float
    phase: int
    theta_label: str
    rep: int
    method: str
    monitored: dict = field(default_factory=dict)
    fit_ok: bool = True
    reason: str = ""

    def curve_key(self) -> str:
        """Phase-2 records are split by the true configuration they were drawn from."""
        if self.phase == 2:
            return f"{self.setting_id}/{self.theta_label}"
        return self.setting_id


@dataclass(frozen=True)
class CalibrationCurve:
    grid: np.ndarray
    effective: np.ndarray
    n_replications: int
    setting_id: str
    method: str
    measure: str


def method_label(variant: str, target: EffectMeasure) -> str:
    return f"{variant}-{target.label}" if variant == "magnitude-targeted" else variant


def _seed(master: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master, *path]))


def prepare_replication(setting_idx, grid_setting, rep, methods, target, master_seed, family=None):
    """Simulate, fit and tune one replication.

    Returns:
        (failed, ready): ``failed`` maps method index to a failed record;
        ``ready`` lists (method index, dataset, adjustment, fit, truth, base
        record fields) for methods that can be sampled.
    """
    setting = grid_setting.setting
    prior = prior_for_phase(setting.phase)
    if family is None:
        family = setting.copula()
    labels = [method_label(m, target) for m in methods]
    data, truth, theta_label = simulate_dataset(setting, prior, _seed(master_seed, setting_idx, rep, _DATA), family)
    base = dict(
        setting_id=grid_setting.setting_id,
        family=setting.family,
        tau=setting.rank_correlation,
        phase=setting.phase,
        theta_label=theta_label,
        rep=rep,
    )
    failed, ready = {}, []
    try:
        fit = freq.fit(data, rng=_seed(master_seed, setting_idx, rep, _FIT))
    except ClCalibError as exc:
        logger.info("setting %s rep %d: fit failed (%s)", grid_setting.setting_id, rep, type(exc).__name__)
        for mi, label in enumerate(labels):
            failed[mi] = CalibrationRecord(**base, method=label, fit_ok=False, reason=type(exc).__name__)
        return failed, ready
    for mi, variant in enumerate(methods):
        try:
            adj = adjust.tune(fit, variant, target)
        except ClCalibError as exc:
            failed[mi] = CalibrationRecord(**base, method=labels[mi], fit_ok=False, reason=type(exc).__name__)
            continue
        ready.append((mi, data, adj, fit, truth, base))
    return failed, ready


def _run_chunk(args):
    (setting_idx, grid_setting, reps, methods, target, chain, master_seed) = args
    prior = prior_for_phase(grid_setting.setting.phase)
    family = grid_setting.setting.copula()
    labels = [method_label(m, target) for m in methods]
    records = {}
    problems = []  # (rep, method index, dataset, adjustment, fit, truth, base fields)
    for rep in reps:
        failed, ready = prepare_replication(setting_idx, grid_setting, rep, methods, target, master_seed, family)
        for mi, rec in failed.items():
            records[(rep, mi)] = rec
        problems.extend((rep, *item) for item in ready)

    if problems:
        target_fn = BatchedLogPosterior(
            [p[2] for p in problems], [p[3] for p in problems], [prior] * len(problems)
        )
        inits = np.stack([p[4].theta_hat for p in problems])
        covs = np.stack([adjust.implied_covariance(p[3], p[4]) for p in problems])
        rngs = [_seed(master_seed, setting_idx, p[0], _CHAIN, p[1]) for p in problems]
        samples = run_chains(target_fn, inits, chain, rngs, covs)
        for (rep, mi, _, adj, _, truth, base), sample in zip(problems, samples):
            monitored = {}
            for measure in MONITORED:
                h = h_statistic(sample, measure, float(measure.value(truth)))
                monitored[measure.label] = (h, g_statistic(h))
            records[(rep, mi)] = CalibrationRecord(**base, method=labels[mi], monitored=monitored)
    return [records[key] for key in sorted(records)]


def run_study(
    grid: list[GridSetting],
    methods: list[str],
    reps: int,
    workers: int = 1,
    *,
    chain: ChainConfig | None = None,
    target: EffectMeasure = DOR,
    master_seed: int = 0,
    chunk_size: int = 50,
) -> list[CalibrationRecord]:
    """Run every (setting, replication, method) combination.

    Returns one record per combination, ordered by setting, replication and
    method. Failed fits or tunings produce records with ``fit_ok=False``.
    """
    if reps < 1:
        raise InputError("reps must be at least 1")
    for m in methods:
        if m not in adjust.VARIANTS:
            raise InputError(f"unknown method {m!r}")
    chain = chain or ChainConfig()
    jobs = []
    for si, gs in enumerate(grid):
        for start in range(0, reps, chunk_size):
            jobs.append((si, gs, range(start, min(start + chunk_size, reps)), list(methods), target, chain, master_seed))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(job) for job in jobs]
    return [rec for chunk in results for rec in chunk]


def failure_fraction(records: list[CalibrationRecord]) -> float:
    """Fraction of (setting, replication) pairs with at least one failed method."""
    keys = {(r.setting_id, r.rep) for r in records}
    bad = {(r.setting_id, r.rep) for r in records if not r.fit_ok}
    return len(bad) / len(keys) if keys else 0.0


def g_values(records, measure: str) -> np.ndarray:
    return np.array([r.monitored[measure][1] for r in records if r.fit_ok])


def h_values(records, measure: str) -> np.ndarray:
    return np.array([r.monitored[measure][0] for r in records if r.fit_ok])


def ecdf_curve(records: list[CalibrationRecord], measure: str, min_records: int = 50) -> CalibrationCurve:
    """Empirical CDF of g on the nominal grid 0.01..0.99."""
    usable = [r for r in records if r.fit_ok]
    if len(usable) < min_records:
        raise InsufficientRecords(f"need at least {min_records} usable records, got {len(usable)}")
    g = np.sort(g_values(usable, measure))
    effective = np.searchsorted(g, NOMINAL_GRID, side="right") / g.size
    return CalibrationCurve(
        grid=NOMINAL_GRID.copy(),
        effective=effective,
        n_replications=g.size,
        setting_id=usable[0].curve_key(),
        method=usable[0].method,
        measure=measure,
    )


def all_curves(records: list[CalibrationRecord], min_records: int = 50) -> list[CalibrationCurve]:
    """One curve per (setting/theta label, method, measure); groups too small are skipped."""
    groups = defaultdict(list)
    for r in records:
        groups[(r.curve_key(), r.method)].append(r)
    curves = []
    for (_, _), recs in sorted(groups.items()):
        for measure in MONITORED:
            try:
                curves.append(ecdf_curve(recs, measure.label, min_records))
            except InsufficientRecords:
                logger.warning("skipping curve %s %s %s: too few records", recs[0].curve_key(), recs[0].method, measure.label)
    return curves


def uniformity_check(records, measure: str, min_records: int = 100):
    """One-sample KS test of h against Uniform[0, 1]; returns (statistic, p-value)."""
    h = h_values(records, measure)
    if h.size < min_records:
        raise InsufficientRecords(f"need at least {min_records} usable records, got {h.size}")
    res = stats.kstest(h, "uniform")
    return float(res.statistic), float(res.pvalue)


def _fmt(x: float) -> str:
    return repr(float(x))


RECORD_COLUMNS = ["setting_id", "family", "tau", "phase", "theta_label", "rep", "method", "measure", "h", "g", "fit_ok"]
CURVE_COLUMNS = ["setting_id", "method", "measure", "nominal", "effective", "n"]


def records_to_csv(records: list[CalibrationRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for r in records:
        for measure in MONITORED:
            label = measure.label
            if r.fit_ok:
                h, g = r.monitored[label]
                hs, gs = _fmt(h), _fmt(g)
            else:
                hs = gs = ""
            writer.writerow(
                [r.setting_id, r.family, _fmt(r.tau), r.phase, r.theta_label, r.rep, r.method, label, hs, gs, int(r.fit_ok)]
            )
    return buf.getvalue()


def records_from_csv(text: str) -> list[CalibrationRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    grouped = {}
    order = []
    for row in rows:
        key = (row["setting_id"], row["theta_label"], int(row["rep"]), row["method"])
        if key not in grouped:
            grouped[key] = dict(
                setting_id=row["setting_id"],
                family=row["family"],
                tau=float(row["tau"]),
                phase=int(row["phase"]),
                theta_label=row["theta_label"],
                rep=int(row["rep"]),
                method=row["method"],
                monitored={},
                fit_ok=row["fit_ok"] == "1",
            )
            order.append(key)
        if row["fit_ok"] == "1":
            grouped[key]["monitored"][row["measure"]] = (float(row["h"]), float(row["g"]))
    return [CalibrationRecord(**grouped[k]) for k in order]


def curves_to_csv(curves: list[CalibrationCurve]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for c in curves:
        for p, e in zip(c.grid, c.effective):
            writer.writerow([c.setting_id, c.method, c.measure, f"{p:.2f}", _fmt(e), c.n_replications])
    return buf.getvalue()


def failures_to_csv(records: list[CalibrationRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["setting_id", "rep", "method", "reason"])
    for r in records:
        if not r.fit_ok:
            writer.writerow([r.setting_id, r.rep, r.method, r.reason])
    return buf.getvalue()
