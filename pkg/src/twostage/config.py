"""INI-style campaign configuration (flat ``key = value`` within named sections)."""

from __future__ import annotations

import configparser
from pathlib import Path

from .compression import ArxOrder, QuantileLevels
from .core import ConfigurationError, PriorSpec, SeedSpec
from .estimator import PolyConfig, TsConfig
from .harness import CampaignSpec, default_campaign
from .regression import MlpConfig
from .simulators import NonlinearSystemSpec, SnrModelSpec

SECTIONS = ("campaign", "model", "prior", "compressor", "second_stage", "train", "pem", "bench", "asymptotics")


def read_config(path=None) -> dict:
    """Parse a config file into ``{section: {key: str}}``; missing file means defaults."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} not found")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read(path)
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    return {s: dict(parser[s]) for s in parser.sections()}


def _get(cfg, section, key, cast, default):
    raw = cfg.get(section, {}).get(key)
    if raw is None or raw.strip() == "":
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigurationError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _ints(raw: str) -> tuple:
    return tuple(int(v) for v in raw.replace(",", " ").split())


def _names(raw: str) -> tuple:
    return tuple(raw.replace(",", " ").split())


def parse_grid(raw: str) -> tuple:
    """``"100x100, 1000x1000"`` -> ``((100, 100), (1000, 1000))``."""
    cells = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            m, N = item.lower().split("x")
            cells.append((int(m), int(N)))
        except ValueError:
            raise ConfigurationError(f"grid cell {item!r} is not of the form MxN") from None
    if not cells:
        raise ConfigurationError("grid is empty")
    return tuple(cells)


def campaign_from_config(cfg: dict, experiment: str, *, seed=None, jobs=None, runs=None, grid=None) -> CampaignSpec:
    base = default_campaign(experiment)
    kw = dict(
        experiment=experiment,
        grid=_get(cfg, "campaign", "grid", parse_grid, base.grid),
        runs=_get(cfg, "campaign", "runs", int, base.runs),
        theta0=_get(cfg, "campaign", "theta0", float, base.theta0),
        seed=_get(cfg, "campaign", "seed", int, base.seed),
        jobs=_get(cfg, "campaign", "jobs", int, base.jobs),
        mu=_get(cfg, "model", "mu", float, base.mu),
        n_quantiles=_get(cfg, "compressor", "n", int, base.n_quantiles),
        degree=_get(cfg, "second_stage", "degree", int, base.degree),
        ridge=_get(cfg, "second_stage", "ridge", float, base.ridge),
        arx_order=(
            _get(cfg, "compressor", "n_a", int, base.arx_order[0]),
            _get(cfg, "compressor", "n_b", int, base.arx_order[1]),
        ),
        mlp=MlpConfig(
            hidden_width=_get(cfg, "second_stage", "hidden_width", int, base.mlp.hidden_width),
            epochs=_get(cfg, "second_stage", "epochs", int, base.mlp.epochs),
            batch_size=_get(cfg, "second_stage", "batch_size", int, base.mlp.batch_size),
            step_size=_get(cfg, "second_stage", "step_size", float, base.mlp.step_size),
            seed=_get(cfg, "second_stage", "seed", int, base.mlp.seed),
        ),
        n_inits=_get(cfg, "pem", "n_init", _ints, base.n_inits),
        test_N=_get(cfg, "campaign", "test_n", int, base.test_N),
        warmup=_get(cfg, "bench", "warmup", int, base.warmup),
        repeats=_get(cfg, "bench", "repeats", int, base.repeats),
        bench_m=_get(cfg, "bench", "m", int, base.bench_m),
        bench_methods=_get(cfg, "bench", "methods", _names, base.bench_methods),
        crb_records=_get(cfg, "asymptotics", "crb_records", int, base.crb_records),
        clt_N=_get(cfg, "asymptotics", "clt_n", int, base.clt_N),
        clt_runs=_get(cfg, "asymptotics", "clt_runs", int, base.clt_runs),
    )
    lower = _get(cfg, "prior", "lower", _floats, base.prior.lower)
    upper = _get(cfg, "prior", "upper", _floats, base.prior.upper)
    kw["prior"] = PriorSpec(lower, upper)
    if seed is not None:
        kw["seed"] = int(seed)
    if jobs is not None:
        kw["jobs"] = int(jobs)
    if runs is not None:
        kw["runs"] = int(runs)
    if grid is not None:
        kw["grid"] = parse_grid(grid) if isinstance(grid, str) else tuple(grid)
    return CampaignSpec(**kw)


def ts_config_from_config(cfg: dict, *, seed=None, jobs=None, m=None, N=None) -> TsConfig:
    """Training configuration for the ``train`` subcommand."""
    kind = _get(cfg, "model", "kind", str, "snr")
    mm = m if m is not None else _get(cfg, "train", "m", int, 1000)
    NN = N if N is not None else _get(cfg, "train", "n", int, 1000)
    if kind == "snr":
        model = SnrModelSpec(_get(cfg, "model", "mu", float, 5.0), NN)
        default_prior = ((2.0,), (10.0,))
        default_comp = "quantile"
        default_stage = "poly"
    elif kind == "nonlinear":
        model = NonlinearSystemSpec(N=NN)
        default_prior = ((-0.9,), (0.9,))
        default_comp = "arx"
        default_stage = "mlp"
    else:
        raise ConfigurationError(f"unknown model kind {kind!r}")
    prior = PriorSpec(
        _get(cfg, "prior", "lower", _floats, default_prior[0]),
        _get(cfg, "prior", "upper", _floats, default_prior[1]),
    )
    comp_kind = _get(cfg, "compressor", "kind", str, default_comp)
    if comp_kind == "quantile":
        comp = QuantileLevels(_get(cfg, "compressor", "n", int, 5))
    elif comp_kind == "arx":
        comp = ArxOrder(_get(cfg, "compressor", "n_a", int, 5), _get(cfg, "compressor", "n_b", int, 5))
    else:
        raise ConfigurationError(f"unknown compressor kind {comp_kind!r}")
    stage_kind = _get(cfg, "second_stage", "kind", str, default_stage)
    if stage_kind == "poly":
        stage = PolyConfig(_get(cfg, "second_stage", "degree", int, 2), _get(cfg, "second_stage", "ridge", float, 0.0))
    elif stage_kind == "mlp":
        d = MlpConfig()
        stage = MlpConfig(
            _get(cfg, "second_stage", "hidden_width", int, d.hidden_width),
            _get(cfg, "second_stage", "epochs", int, d.epochs),
            _get(cfg, "second_stage", "batch_size", int, d.batch_size),
            _get(cfg, "second_stage", "step_size", float, d.step_size),
            _get(cfg, "second_stage", "seed", int, d.seed),
        )
    else:
        raise ConfigurationError(f"unknown second stage kind {stage_kind!r}")
    master = int(seed) if seed is not None else _get(cfg, "campaign", "seed", int, 0)
    return TsConfig(prior, model, comp, stage, mm, NN, SeedSpec(master),
                    jobs=int(jobs) if jobs is not None else _get(cfg, "campaign", "jobs", int, 1))
