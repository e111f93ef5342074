"""Monte Carlo campaigns, latency benchmarks and CSV persistence.

Every campaign is a pure function of its :class:`CampaignSpec` apart from
wall-clock timings, which are kept in separate records. Per-run seeds are
derived from ``(master seed, cell, run index)`` so the worker pool size never
changes a result.
"""

from __future__ import annotations

import csv
import functools
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .asymptotics import (
    GaussianDensity,
    crb_snr,
    quantile_clt_check,
    scaled_quantile_errors,
    standardized_moments,
    ts_asymptotic_variance,
)
from .baselines import EkfConfig, PemConfig, ekf_estimate, pem_estimate
from .compression import ArxOrder, QuantileCompressor, QuantileLevels
from .core import ConfigurationError, PriorSpec, RankDeficiencyWarning, SeedSpec, sample_prior
from .estimator import PolyConfig, TsConfig, infer, train
from .regression import LinearSecondStage, MlpConfig
from .simulators import NonlinearSystemSpec, SnrModelSpec

EXPERIMENTS = ("consistency", "normality", "baseline-compare", "bench", "asymptotics")
BENCH_METHODS = ("ts-quantile", "ts-quantile-2n", "ts-arx-mlp", "ekf-large", "pem")

# seed streams under the master seed
_TRAIN, _TEST, _THETA0, _PEM, _CRB, _CLT = 0, 1, 2, 3, 4, 5


@dataclass(frozen=True)
class CampaignSpec:
    experiment: str
    grid: tuple = ((1000, 1000),)
    runs: int = 100
    theta0: float = 5.0
    seed: int = 0
    jobs: int = 1
    mu: float = 5.0
    prior: PriorSpec = field(default_factory=lambda: PriorSpec((2.0,), (10.0,)))
    n_quantiles: int = 5
    degree: int = 2
    ridge: float = 0.0
    arx_order: tuple = (5, 5)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    n_inits: tuple = (1, 5, 10)
    test_N: int = 1000
    warmup: int = 30
    repeats: int = 200
    bench_m: int = 500
    bench_methods: tuple = BENCH_METHODS
    crb_records: int = 100_000
    clt_N: int = 10_000
    clt_runs: int = 2000

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}")
        grid = tuple((int(m), int(N)) for m, N in self.grid)
        if not grid:
            raise ConfigurationError("grid must be nonempty")
        if any(m < 1 or N < 1 for m, N in grid):
            raise ConfigurationError("grid cells need m >= 1 and N >= 1")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "n_inits", tuple(int(k) for k in self.n_inits))
        object.__setattr__(self, "bench_methods", tuple(self.bench_methods))
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        if self.experiment == "bench" and (self.warmup < 30 or self.repeats < 200):
            raise ConfigurationError("bench needs at least 30 warm-up and 200 measured repetitions")
        unknown = set(self.bench_methods) - set(BENCH_METHODS)
        if unknown:
            raise ConfigurationError(f"unknown bench methods {sorted(unknown)}")

    @property
    def master(self) -> SeedSpec:
        return SeedSpec(self.seed)


def default_campaign(experiment: str) -> CampaignSpec:
    if experiment == "consistency":
        return CampaignSpec(experiment, grid=((100, 100), (1000, 1000), (10_000, 10_000)), runs=100)
    if experiment == "normality":
        return CampaignSpec(experiment, grid=((10_000, 10_000),), runs=500)
    if experiment == "baseline-compare":
        return CampaignSpec(experiment, grid=((2000, 1000),), runs=100, theta0=float("nan"),
                            prior=PriorSpec((-0.9,), (0.9,)))
    if experiment == "bench":
        return CampaignSpec(experiment, grid=((1000, 10_000),), runs=1)
    if experiment == "asymptotics":
        return CampaignSpec(experiment, grid=((1000, 1000),), runs=200)
    raise ConfigurationError(f"unknown experiment {experiment!r}")


@dataclass(frozen=True)
class RunRecord:
    cell: int
    m: int
    N: int
    run: int
    method: str
    theta0: float
    theta_hat: float
    error: float
    scaled_error: float
    status: str = "ok"


@dataclass(frozen=True)
class CellSummary:
    cell: int
    method: str
    m: int
    N: int
    n_ok: int
    n_failed: int
    mse: float
    bias: float
    variance: float
    median_abs_error: float
    crb_paper: float
    crb_independent: float


@dataclass(frozen=True)
class TimingRecord:
    method: str
    N: int
    run: int
    micros: float


@dataclass(frozen=True)
class TimingSummary:
    method: str
    N: int
    n: int
    median_us: float
    q1_us: float
    q3_us: float
    iqr_us: float
    n_outliers: int


@dataclass
class McSummary:
    spec: CampaignSpec
    cells: list
    runs: list
    timings: list = field(default_factory=list)
    statistics: list = field(default_factory=list)  # (quantity, value, reference, ratio, note)
    training_seconds: dict = field(default_factory=dict)

    def timing_table(self) -> list:
        return summarize_timings(self.timings)


def _ok(theta0, theta_hat, N, **kw) -> dict:
    err = float(theta_hat) - float(theta0)
    return dict(theta0=float(theta0), theta_hat=float(theta_hat), error=err,
                scaled_error=math.sqrt(N) * err, **kw)


def _failed(exc: BaseException) -> str:
    return f"failed:{type(exc).__name__}"


def _map(fn, items, jobs: int) -> list:
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _crb_pair(spec: CampaignSpec, N: int) -> tuple:
    if spec.experiment not in ("consistency", "normality") or not spec.theta0 > 0:
        return float("nan"), float("nan")
    return (crb_snr(spec.mu, spec.theta0, N, "paper"),
            crb_snr(spec.mu, spec.theta0, N, "independent",
                    seed=spec.master.stream(_CRB).spawn(N), n_records=spec.crb_records))


def aggregate_runs(runs, spec: CampaignSpec) -> list:
    """Per-(cell, method) moments; groups appear in order of first occurrence, runs by index."""
    groups: dict = {}
    for r in runs:
        groups.setdefault((r.cell, r.method), []).append(r)
    crb_cache: dict = {}
    out = []
    for (cell, method), rows in groups.items():
        rows = sorted(rows, key=lambda r: r.run)
        ok = [r for r in rows if r.status == "ok"]
        e = np.array([r.error for r in ok], dtype=np.float64)
        if e.size:
            bias = float(np.mean(e))
            mse = float(np.mean(e * e))
            var = float(np.mean((e - bias) ** 2))
            med = float(np.median(np.abs(e)))
        else:
            bias = mse = var = med = float("nan")
        N = rows[0].N
        if N not in crb_cache:
            crb_cache[N] = _crb_pair(spec, N)
        out.append(CellSummary(cell, method, rows[0].m, N, len(ok), len(rows) - len(ok),
                               mse, bias, var, med, *crb_cache[N]))
    return out


def summarize_timings(timings) -> list:
    groups: dict = {}
    for t in timings:
        groups.setdefault((t.method, t.N), []).append(t.micros)
    out = []
    for (method, N), xs in groups.items():
        x = np.asarray(xs, dtype=np.float64)
        q1, med, q3 = np.percentile(x, [25, 50, 75])
        iqr = q3 - q1
        n_out = int(np.sum((x < q1 - 1.5 * iqr) | (x > q3 + 1.5 * iqr)))
        out.append(TimingSummary(method, N, x.size, float(med), float(q1), float(q3), float(iqr), n_out))
    return out


# --- campaigns ----------------------------------------------------------------

def _snr_ts_config(spec: CampaignSpec, cell: int, m: int, N: int) -> TsConfig:
    return TsConfig(spec.prior, SnrModelSpec(spec.mu, N), QuantileLevels(spec.n_quantiles),
                    PolyConfig(spec.degree, spec.ridge), m, N,
                    spec.master.stream(_TRAIN).spawn(cell), jobs=spec.jobs)


def _snr_test_runs(spec: CampaignSpec, cell: int, m: int, N: int, estimator, method: str = "ts"):
    model = SnrModelSpec(spec.mu, N)
    theta0 = np.array([spec.theta0])
    base = spec.master.stream(_TEST).spawn(cell)
    timings = []

    def one(r):
        rec = model.simulate(theta0, base.spawn(r))
        try:
            t0 = time.perf_counter_ns()
            th = float(np.ravel(estimator.predict_one(rec))[0])
            timings.append(TimingRecord(method, N, r, (time.perf_counter_ns() - t0) / 1e3))
            return RunRecord(cell, m, N, r, method, **_ok(spec.theta0, th, N))
        except Exception as exc:  # recorded, not fatal
            return RunRecord(cell, m, N, r, method, spec.theta0, math.nan, math.nan, math.nan, _failed(exc))

    runs = _map(one, range(spec.runs), spec.jobs)
    return runs, sorted(timings, key=lambda t: t.run)


def _failed_cell(spec, cell, m, N, exc, method="ts") -> list:
    return [RunRecord(cell, m, N, r, method, spec.theta0, math.nan, math.nan, math.nan, _failed(exc))
            for r in range(spec.runs)]


def _train_quiet(config: TsConfig):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficiencyWarning)
        return train(config)


def run_consistency(spec: CampaignSpec) -> McSummary:
    """Train a fresh estimator per grid cell and evaluate ``runs`` test records at ``theta0``."""
    if spec.experiment != "consistency":
        raise ConfigurationError("run_consistency needs experiment = consistency")
    runs, timings, train_s = [], [], {}
    for cell, (m, N) in enumerate(spec.grid):
        try:
            est = _train_quiet(_snr_ts_config(spec, cell, m, N))
        except Exception as exc:
            runs += _failed_cell(spec, cell, m, N, exc)
            continue
        train_s[cell] = est.training_seconds_
        r, t = _snr_test_runs(spec, cell, m, N, est)
        runs += r
        timings += t
    return McSummary(spec, aggregate_runs(runs, spec), runs, timings, training_seconds=train_s)


def run_normality(spec: CampaignSpec, estimator=None) -> McSummary:
    """Standardized errors ``sqrt(N)(theta_hat - theta0)`` at the largest grid cell.

    ``estimator`` replaces the trained model when given; it only needs a
    ``predict_one(record)`` method.
    """
    if spec.experiment != "normality":
        raise ConfigurationError("run_normality needs experiment = normality")
    cell = max(range(len(spec.grid)), key=lambda c: spec.grid[c][0] * spec.grid[c][1])
    m, N = spec.grid[cell]
    train_s = {}
    if estimator is None:
        estimator = _train_quiet(_snr_ts_config(spec, cell, m, N))
        train_s[cell] = estimator.training_seconds_
    runs, timings = _snr_test_runs(spec, cell, m, N, estimator)
    summary = McSummary(spec, aggregate_runs(runs, spec), runs, timings, training_seconds=train_s)
    z = np.array([r.scaled_error for r in runs if r.status == "ok"])
    mom = standardized_moments(z)
    nan = float("nan")
    stats_rows = [
        ("degenerate", float(mom["degenerate"]), nan, nan, "1 means zero spread; moments undefined"),
        ("skewness", mom["skewness"], 0.0, nan, ""),
        ("excess_kurtosis", mom["excess_kurtosis"], 0.0, nan, ""),
        ("ks_distance", mom["ks_distance"], nan, nan, "against a normal with fitted mean and sd"),
        ("scaled_mean", mom["mean"], 0.0, nan, ""),
        ("scaled_sd", mom["sd"], nan, nan, ""),
    ]
    stage = getattr(estimator, "stage", None)
    if (isinstance(stage, LinearSecondStage) and isinstance(getattr(estimator, "compressor_", None), QuantileCompressor)
            and spec.theta0 > 0):
        density = GaussianDensity.snr(spec.mu, spec.theta0)
        sigma_ts = float(ts_asymptotic_variance(stage, density, estimator.compressor_.levels)[0, 0])
        theta_hat = np.array([r.theta_hat for r in runs if r.status == "ok"])
        emp = float(np.var(theta_hat, ddof=1)) if theta_hat.size > 1 else nan
        stats_rows.append(("sigma_ts_over_N", sigma_ts / N, emp, sigma_ts / N / emp if emp > 0 else nan,
                           "reference is the empirical variance of theta_hat"))
    summary.statistics = stats_rows
    return summary


def _arx_mlp_config(spec: CampaignSpec, m: int, N: int) -> TsConfig:
    return TsConfig(spec.prior, NonlinearSystemSpec(N=N), ArxOrder(*spec.arx_order), spec.mlp, m, N,
                    spec.master.stream(_TRAIN), jobs=spec.jobs)


def run_baseline_compare(spec: CampaignSpec) -> McSummary:
    """TS (trained once) against both EKF variants and multi-start PEM on shared test records."""
    if spec.experiment != "baseline-compare":
        raise ConfigurationError("run_baseline_compare needs experiment = baseline-compare")
    m, N_train = spec.grid[0]
    N = spec.test_N
    est = _train_quiet(_arx_mlp_config(spec, m, N_train))
    thetas = sample_prior(spec.prior, spec.runs, spec.master.stream(_THETA0))[:, 0]
    model = NonlinearSystemSpec(N=N)
    test_seed = spec.master.stream(_TEST)
    pem_seed = spec.master.stream(_PEM)
    ekfs = (("ekf-large", EkfConfig.large()), ("ekf-small", EkfConfig.small()))

    def one(r):
        theta0 = float(thetas[r])
        rec = model.simulate(np.array([theta0]), test_seed.spawn(r))
        rows, times = [], []

        def timed(method, mm, fn):
            try:
                t0 = time.perf_counter_ns()
                th = float(fn())
                times.append(TimingRecord(method, N, r, (time.perf_counter_ns() - t0) / 1e3))
                rows.append(RunRecord(0, mm, N, r, method, **_ok(theta0, th, N)))
            except Exception as exc:
                rows.append(RunRecord(0, mm, N, r, method, theta0, math.nan, math.nan, math.nan, _failed(exc)))

        timed("ts", m, lambda: infer(est, rec)[0])
        for name, cfg in ekfs:
            timed(name, 0, lambda cfg=cfg: ekf_estimate(rec, cfg).theta_hat)
        for k in spec.n_inits:
            cfg = PemConfig(n_init=k, seed=pem_seed.spawn(r))
            timed(f"pem-{k}", 0, lambda cfg=cfg: pem_estimate(rec, cfg).theta_hat)
        return rows, times

    results = _map(one, range(spec.runs), spec.jobs)
    order = ["ts", "ekf-large", "ekf-small"] + [f"pem-{k}" for k in spec.n_inits]
    rank = {name: i for i, name in enumerate(order)}
    runs = sorted((row for rows, _ in results for row in rows), key=lambda x: (rank[x.method], x.run))
    timings = sorted((t for _, ts in results for t in ts), key=lambda x: (rank[x.method], x.run))
    return McSummary(spec, aggregate_runs(runs, spec), runs, timings,
                     training_seconds={0: est.training_seconds_})


def _time_repeated(fn, warmup: int, repeats: int, method: str, N: int):
    for _ in range(warmup):
        fn()
    out = []
    for i in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        out.append(TimingRecord(method, N, i, (time.perf_counter_ns() - t0) / 1e3))
    return out


def run_bench(spec: CampaignSpec) -> McSummary:
    """Steady-state per-record inference latency for each method in ``spec.bench_methods``."""
    if spec.experiment != "bench":
        raise ConfigurationError("run_bench needs experiment = bench")
    m, N = spec.grid[0]
    theta_snr = spec.theta0 if spec.theta0 > 0 else 5.0
    runs, timings, train_s = [], [], {}
    methods = spec.bench_methods
    if {"ts-quantile", "ts-quantile-2n"} & set(methods):
        est = _train_quiet(_snr_ts_config(spec, 0, m, N))
        train_s["ts-quantile"] = est.training_seconds_
        for method, n in (("ts-quantile", N), ("ts-quantile-2n", 2 * N)):
            if method not in methods:
                continue
            rec = SnrModelSpec(spec.mu, n).simulate(np.array([theta_snr]), spec.master.stream(_TEST).spawn(n))
            th = float(est.predict_one(rec)[0])
            runs.append(RunRecord(0, m, n, 0, method, **_ok(theta_snr, th, n)))
            timings += _time_repeated(lambda: est.predict_one(rec), spec.warmup, spec.repeats, method, n)
    nl = [x for x in ("ts-arx-mlp", "ekf-large", "pem") if x in methods]
    if nl:
        n = spec.test_N
        theta0 = 0.5
        rec = NonlinearSystemSpec(N=n).simulate(np.array([theta0]), spec.master.stream(_TEST).spawn(n))
        fns = {}
        if "ts-arx-mlp" in nl:
            mlp_spec = replace(spec, prior=PriorSpec((-0.9,), (0.9,)))
            est_nl = _train_quiet(_arx_mlp_config(mlp_spec, spec.bench_m, n))
            train_s["ts-arx-mlp"] = est_nl.training_seconds_
            fns["ts-arx-mlp"] = lambda: est_nl.predict_one(rec)[0]
        if "ekf-large" in nl:
            fns["ekf-large"] = lambda: ekf_estimate(rec, EkfConfig.large()).theta_hat
        if "pem" in nl:
            cfg = PemConfig(n_init=max(spec.n_inits), seed=spec.master.stream(_PEM))
            fns["pem"] = lambda: pem_estimate(rec, cfg).theta_hat
        for method in nl:
            th = float(fns[method]())
            runs.append(RunRecord(0, m if method.startswith("ts") else 0, n, 0, method, **_ok(theta0, th, n)))
            timings += _time_repeated(fns[method], spec.warmup, spec.repeats, method, n)
    return McSummary(spec, aggregate_runs(runs, spec), runs, timings, training_seconds=train_s)


def run_asymptotics(spec: CampaignSpec) -> McSummary:
    """Closed-form references next to their Monte Carlo counterparts.

    Rows of ``statistics`` are ``(quantity, value, reference, ratio, note)``.
    The per-run records hold the scaled median errors of the quantile check.
    """
    if spec.experiment != "asymptotics":
        raise ConfigurationError("run_asymptotics needs experiment = asymptotics")
    m, N = spec.grid[-1]
    density = GaussianDensity.snr(spec.mu, spec.theta0)
    nan = float("nan")
    rows = []
    crb_p = crb_snr(spec.mu, spec.theta0, N, "paper")
    crb_i = crb_snr(spec.mu, spec.theta0, N, "independent", seed=spec.master.stream(_CRB).spawn(N),
                    n_records=spec.crb_records)
    exact = 2 * spec.theta0**2 / N  # inverse of the exact score variance N / (2 theta^2)
    rows.append(("crb_paper", crb_p, 4 * spec.theta0 * spec.mu**2 / N, 1.0, "4 theta mu^2 / N"))
    rows.append(("crb_independent", crb_i, exact, crb_i / exact, "inverse score variance; reference 2 theta^2 / N"))
    flag = "DISCREPANCY" if not math.isclose(crb_p, crb_i, rel_tol=0.1) else "agree"
    rows.append(("crb_discrepancy", crb_p, crb_i, crb_p / crb_i, f"{flag}: paper-mode bound vs score-variance bound"))

    clt = quantile_clt_check(density, 0.5, spec.clt_N, spec.clt_runs, spec.master.stream(_CLT))
    rows.append(("quantile_clt_variance", clt.empirical_var_scaled, clt.theoretical_var, clt.ratio,
                 f"gamma 0.5, N {spec.clt_N}, {spec.clt_runs} runs"))

    est = _train_quiet(_snr_ts_config(spec, 0, m, N))
    sigma = float(ts_asymptotic_variance(est.stage, density, est.compressor_.levels)[0, 0])
    test, _ = _snr_test_runs(spec, 0, m, N, est)
    th = np.array([r.theta_hat for r in test if r.status == "ok"])
    emp = float(np.var(th, ddof=1)) if th.size > 1 else nan
    rows.append(("sigma_ts_over_N", sigma / N, emp, sigma / N / emp if emp > 0 else nan,
                 f"reference is the empirical variance over {spec.runs} runs at m {m}, N {N}"))

    z = scaled_quantile_errors(density, 0.5, spec.clt_N, spec.clt_runs, spec.master.stream(_CLT))
    q = float(density.ppf(0.5))
    runs = [RunRecord(0, 0, spec.clt_N, r, "median-quantile", q, q + float(z[r]) / math.sqrt(spec.clt_N),
                      float(z[r]) / math.sqrt(spec.clt_N), float(z[r])) for r in range(z.size)]
    return McSummary(spec, [], runs + test, statistics=rows, training_seconds={0: est.training_seconds_})


def _quiet(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankDeficiencyWarning)
            return fn(*args, **kwargs)
    return wrapper


run_consistency = _quiet(run_consistency)
run_normality = _quiet(run_normality)
run_baseline_compare = _quiet(run_baseline_compare)
run_bench = _quiet(run_bench)
run_asymptotics = _quiet(run_asymptotics)

RUNNERS = {
    "consistency": run_consistency,
    "normality": run_normality,
    "baseline-compare": run_baseline_compare,
    "bench": run_bench,
    "asymptotics": run_asymptotics,
}


def run_campaign(spec: CampaignSpec) -> McSummary:
    return RUNNERS[spec.experiment](spec)


# --- persistence --------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _dataclass_rows(items, cls):
    names = [f.name for f in fields(cls)]
    return names, [[getattr(x, n) for n in names] for x in items]


def write_runs(path, runs) -> None:
    write_rows(path, *_dataclass_rows(runs, RunRecord))


def read_runs(path) -> list:
    types = {f.name: f.type for f in fields(RunRecord)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = types[k]
                kw[k] = int(v) if t == "int" else float(v) if t == "float" else v
            out.append(RunRecord(**kw))
    return out


def write_cells(path, cells) -> None:
    write_rows(path, *_dataclass_rows(cells, CellSummary))


STATISTICS_HEADER = ("quantity", "value", "reference", "ratio", "note")


def write_statistics(path, statistics) -> None:
    write_rows(path, STATISTICS_HEADER, statistics)


def write_timing(path, summary: McSummary) -> None:
    header, rows = _dataclass_rows(summary.timing_table(), TimingSummary)
    for key, seconds in summary.training_seconds.items():
        rows.append([f"training:{key}", 0, 1, seconds * 1e6, seconds * 1e6, seconds * 1e6, 0.0, 0])
    write_rows(path, header, rows)


def write_summary(out_dir, summary: McSummary) -> list:
    """Write runs first, then the aggregates derived from them; timings go to ``timing.csv``.

    ``summary.csv`` is the cell table, except for the asymptotics campaign
    whose summary is the ``quantity, value, reference, ratio, note`` table.
    Campaigns with extra statistics also get ``statistics.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_runs(out / "runs.csv", summary.runs)
    written = [out / "runs.csv"]
    if summary.spec.experiment == "asymptotics":
        write_statistics(out / "summary.csv", summary.statistics)
    else:
        cells = aggregate_runs(read_runs(out / "runs.csv"), summary.spec)
        write_cells(out / "summary.csv", cells)
        if summary.statistics:
            write_statistics(out / "statistics.csv", summary.statistics)
            written.append(out / "statistics.csv")
    written.append(out / "summary.csv")
    if summary.timings or summary.training_seconds:
        write_timing(out / "timing.csv", summary)
        written.append(out / "timing.csv")
    return written
