"""Monte-Carlo orchestration: one trial end to end, and seeded parameter sweeps.

Every trial derives its random streams from
``SeedSequence(seed, spawn_key=(value_index, trial))``, so results do not
depend on the order trials run in or on the number of worker processes.
"""

from __future__ import annotations

import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .beamformer import BEAM_SCHEMES, evaluate_scheme
from .channel import build_channel
from .config import ConfigError, SystemConfig, config_from_dict, profile, read_mapping, with_measurement_length
from .dictionary import build_dictionary
from .estimator import amp_em_estimate, omp_estimate, reconstruct_spatial
from .io import write_csv, write_json
from .locator import locate
from .metrics import nmse, polar_of, rmse, to_db
from .pilots import build_pilot_frame, simulate_uplink
from .scenario import sample_scenario

log = logging.getLogger(__name__)

# estimation scheme -> (solver, dictionary variant)
ESTIMATION_SCHEMES = {
    "amp-polar-fd": ("amp", "fd"),
    "omp-polar-fd": ("omp", "fd"),
    "omp-polar-flat": ("omp", "flat"),
    "omp-dft": ("omp", "dft"),
}
LOCATION_STAGES = ("los-only", "coarse", "refined")
SWEEP_VARIABLES = ("p_meas", "scatterer_distance", "snr", "n_bs", "p_t_dl", "bandwidth")
STAGES = ("estimate", "locate", "beamform")


def apply_sweep_value(cfg: SystemConfig, variable: str | None, value) -> SystemConfig:
    """Config for one point of a sweep."""
    if variable is None:
        return cfg
    if variable == "p_meas":
        return with_measurement_length(cfg, int(value))
    if variable == "scatterer_distance":
        return cfg.replace(scatterer_range=(float(value), float(value)))
    if variable == "snr":
        return cfg.replace(snr_target_db=float(value))
    if variable == "n_bs":
        return cfg.replace(n_bs=int(value))
    if variable == "p_t_dl":
        return cfg.replace(p_t_dl=float(value))
    if variable == "bandwidth":
        return cfg.replace(bandwidth=float(value))
    raise ConfigError(f"unknown sweep variable {variable!r}; choose from {SWEEP_VARIABLES}")


@dataclass
class ExperimentSpec:
    """What to run.

    Attributes:
        config: base system configuration.
        variable: swept field (one of :data:`SWEEP_VARIABLES`) or None.
        values: sweep values; ignored (one pass) when ``variable`` is None.
        trials: Monte-Carlo trials per value.
        schemes: estimation schemes (keys of :data:`ESTIMATION_SCHEMES`).
        beam_schemes: beamforming schemes (see
            :data:`ilsc.beamformer.BEAM_SCHEMES`).
        stages: subset of ``("estimate", "locate", "beamform")``.
        seed: root seed.
        workers: worker processes (1 runs in-process).
        out_dir: where :func:`sweep` writes its files.
    """

    config: SystemConfig
    variable: str | None = None
    values: list = field(default_factory=lambda: [None])
    trials: int = 20
    schemes: list = field(default_factory=lambda: list(ESTIMATION_SCHEMES))
    beam_schemes: list = field(default_factory=lambda: ["proposed", "focused", "center-ideal"])
    stages: list = field(default_factory=lambda: ["estimate"])
    seed: int = 0
    workers: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if self.variable is None:
            self.values = [None]
        if not self.values:
            raise ConfigError("sweep value list is empty")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.variable is not None and self.variable not in SWEEP_VARIABLES:
            raise ConfigError(f"unknown sweep variable {self.variable!r}")
        for s in self.schemes:
            if s not in ESTIMATION_SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}; choose from {list(ESTIMATION_SCHEMES)}")
        for s in self.beam_schemes:
            if s not in BEAM_SCHEMES:
                raise ConfigError(f"unknown beam scheme {s!r}; choose from {list(BEAM_SCHEMES)}")
        for s in self.stages:
            if s not in STAGES:
                raise ConfigError(f"unknown stage {s!r}; choose from {list(STAGES)}")
        if ("locate" in self.stages or "beamform" in self.stages) and not any(
                ESTIMATION_SCHEMES[s][1] != "dft" for s in self.schemes):
            raise ConfigError("locate/beamform need a polar-dictionary scheme")

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "variable": self.variable,
                "values": list(self.values), "trials": self.trials, "schemes": list(self.schemes),
                "beam_schemes": list(self.beam_schemes), "stages": list(self.stages),
                "seed": self.seed}

    @classmethod
    def from_mapping(cls, data: dict, base: SystemConfig | None = None) -> "ExperimentSpec":
        data = dict(data)
        cfg_data = dict(data.pop("config", {}) or {})
        prof = cfg_data.pop("profile", data.pop("profile", None))
        base = profile(prof) if prof else (base or profile("desk"))
        cfg = config_from_dict(cfg_data, base)
        known = {"variable", "values", "trials", "schemes", "beam_schemes", "stages", "seed",
                 "workers", "out_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(config=cfg, **data)

    @classmethod
    def load(cls, path, base: SystemConfig | None = None) -> "ExperimentSpec":
        return cls.from_mapping(read_mapping(path), base)


def trial_seeds(seed: int, value_index: int, trial: int) -> dict:
    """Independent integer seeds for each random stage of one trial."""
    ss = np.random.SeedSequence(seed, spawn_key=(value_index, trial))
    words = ss.generate_state(5, dtype=np.uint32)
    return {"scenario": int(words[0]), "pilots": int(words[1]), "noise": int(words[2]),
            "cluster": int(words[3]), "trial_seed": int(words[4])}


_DICT_CACHE: dict = {}


def cached_dictionary(cfg: SystemConfig, variant: str):
    key = (cfg.digest(), variant)
    if key not in _DICT_CACHE:
        if len(_DICT_CACHE) > 8:
            _DICT_CACHE.clear()
        _DICT_CACHE[key] = build_dictionary(cfg, variant)
    return _DICT_CACHE[key]


def estimate_with(scheme: str, ms, frame, cfg: SystemConfig, n_mpc: int):
    solver, variant = ESTIMATION_SCHEMES[scheme]
    dic = cached_dictionary(cfg, variant)
    if solver == "amp":
        est = amp_em_estimate(ms, dic, frame, t_iter=cfg.t_iter, damping=cfg.damping,
                              init_snr_db=cfg.amp_init_snr_db, tol=cfg.amp_tol)
    else:
        est = omp_estimate(ms, dic, frame, min(n_mpc, frame.p_meas))
    return est, dic


@dataclass
class TrialArtifacts:
    """Intermediate objects of one trial, kept when ``keep=True``."""

    geometry: object = None
    channel: object = None
    frame: object = None
    measurements: object = None
    estimates: dict = field(default_factory=dict)
    dictionaries: dict = field(default_factory=dict)
    report: object = None
    rates: dict = field(default_factory=dict)


def run_trial(cfg: SystemConfig, seeds: dict, schemes, stages, beam_schemes=(),
              keep: bool = False):
    """Scenario to metrics for one trial.

    Returns:
        ``(rows, rate_rows, artifacts)``: ``rows`` are dicts with keys
        ``scheme, metric, value, status``; ``rate_rows`` are
        ``(scheme, m, f_m, SE)``; ``artifacts`` is a TrialArtifacts or None.
    """
    art = TrialArtifacts()
    rows: list[dict] = []
    rate_rows: list[tuple] = []

    def record(scheme, metric, value, status="ok"):
        rows.append({"scheme": scheme, "metric": metric, "value": value, "status": status})

    geom = sample_scenario(cfg, seeds["scenario"])
    chan = build_channel(geom, cfg)
    frame = build_pilot_frame(cfg, seeds["pilots"])
    ms = simulate_uplink(chan, frame, cfg, seeds["noise"])
    n_mpc = geom.n_paths + (1 if geom.los_present else 0)
    if keep:
        art.geometry, art.channel, art.frame, art.measurements = geom, chan, frame, ms

    estimates = {}
    for scheme in schemes:
        try:
            est, dic = estimate_with(scheme, ms, frame, cfg, n_mpc)
            estimates[scheme] = (est, dic)
            record(scheme, "nmse_db", nmse(chan, reconstruct_spatial(est, dic)))
        except Exception as exc:  # recorded, trial excluded for this scheme
            record(scheme, "nmse_db", math.nan, f"error:{type(exc).__name__}:{exc}")
    if keep:
        art.estimates = {k: v[0] for k, v in estimates.items()}
        art.dictionaries = {k: v[1] for k, v in estimates.items()}

    polar = [s for s in schemes if ESTIMATION_SCHEMES[s][1] != "dft" and s in estimates]
    if not ({"locate", "beamform"} & set(stages)):
        return rows, rate_rows, art if keep else None
    if not polar:
        for st in LOCATION_STAGES:
            record(st, "ut_theta_err", math.nan, "error:no-polar-estimate")
        return rows, rate_rows, art if keep else None

    src = polar[0]
    est, dic = estimates[src]
    truth_th, truth_r = polar_of(geom.ut_position)
    try:
        report = locate(est, ms.y, dic.lattice, cfg, seed=seeds["cluster"])
        if keep:
            art.report = report
        for stage, pos in (("los-only", report.los_only_ut), ("coarse", report.coarse_ut),
                           ("refined", report.refined_ut)):
            th, r = polar_of(pos)
            d_th = float(np.angle(np.exp(1j * (th - truth_th)))) if math.isfinite(th) else math.inf
            d_r = r - truth_r
            record(f"{src}/{stage}", "ut_theta_err", d_th)
            record(f"{src}/{stage}", "ut_r_err", d_r)
    except Exception as exc:
        report = None
        for stage in LOCATION_STAGES:
            record(f"{src}/{stage}", "ut_r_err", math.nan, f"error:{type(exc).__name__}:{exc}")

    if "beamform" in stages and report is not None:
        true_dl = chan.downlink()
        est_dl = reconstruct_spatial(est, dic).downlink()
        for bs in beam_schemes:
            try:
                rates, _ = evaluate_scheme(bs, true_dl, est_dl, report, cfg)
                record(bs, "se", float(np.mean(rates)))
                record(bs, "se_spread", float(np.max(rates) - np.min(rates)))
                record(bs, "se_edge", float(min(rates[0], rates[-1])))
                for m, (f, r) in enumerate(zip(cfg.subcarrier_freqs, rates)):
                    rate_rows.append((bs, m, f, float(r)))
                if keep:
                    art.rates[bs] = rates
            except Exception as exc:
                record(bs, "se", math.nan, f"error:{type(exc).__name__}:{exc}")
    return rows, rate_rows, art if keep else None


def _task(args):
    cfg, seed, vi, value, trial, variable, schemes, stages, beam_schemes = args
    seeds = trial_seeds(seed, vi, trial)
    try:
        point = apply_sweep_value(cfg, variable, value)
        rows, rates, _ = run_trial(point, seeds, schemes, stages, beam_schemes)
    except Exception as exc:
        log.debug("trial failed: %s", traceback.format_exc())
        rows = [{"scheme": "*", "metric": "trial", "value": math.nan,
                 "status": f"error:{type(exc).__name__}:{exc}"}]
        rates = []
    return vi, trial, seeds["trial_seed"], rows, rates


@dataclass
class MetricsTable:
    """Per-trial rows and the aggregates computed from them."""

    variable: str | None
    trial_rows: list
    rate_rows: list
    summary_rows: list

    TRIAL_HEADER = ("value_index", "value", "trial", "seed", "scheme", "metric", "result", "status")
    SUMMARY_HEADER = ("value_index", "value", "scheme", "metric", "n_ok", "n_failed",
                      "aggregate", "median")
    RATE_HEADER = ("value_index", "value", "trial", "seed", "scheme", "m", "f_m", "SE")

    def lookup(self, scheme: str, metric: str, value_index: int = 0) -> dict:
        for row in self.summary_rows:
            if row[0] == value_index and row[2] == scheme and row[3] == metric:
                return dict(zip(self.SUMMARY_HEADER, row))
        raise KeyError((scheme, metric, value_index))

    def per_trial(self, scheme: str, metric: str, value_index: int = 0) -> np.ndarray:
        return np.array([r[6] for r in self.trial_rows
                         if r[0] == value_index and r[4] == scheme and r[5] == metric
                         and r[7] == "ok"], dtype=float)


def aggregate(metric: str, values: np.ndarray) -> float:
    """Aggregate per-trial results the way each metric is defined.

    NMSE averages the linear ratios; angle and distance errors become a
    ``20 log10`` RMSE; rates are plain means.
    """
    if len(values) == 0:
        return math.nan
    if metric == "nmse_db":
        return to_db(float(np.mean(10 ** (values / 10))))
    if metric == "ut_theta_err":
        return rmse(np.zeros((len(values), 2)), np.column_stack([values, np.zeros(len(values))])).theta_db
    if metric == "ut_r_err":
        return rmse(np.zeros((len(values), 2)), np.column_stack([np.zeros(len(values)), values])).r_db
    return float(np.mean(values))


def summarise(variable, values, trial_rows) -> list:
    groups: dict = {}
    for vi, val, trial, seed, scheme, metric, result, status in trial_rows:
        g = groups.setdefault((vi, scheme, metric), {"ok": [], "failed": 0, "value": val})
        if status == "ok":
            g["ok"].append(result)
        else:
            g["failed"] += 1
    out = []
    for (vi, scheme, metric), g in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])):
        arr = np.asarray(g["ok"], dtype=float)
        med = float(np.median(np.abs(arr) if metric.endswith("_err") else arr)) if len(arr) else math.nan
        out.append((vi, g["value"], scheme, metric, len(arr), g["failed"], aggregate(metric, arr), med))
    return out


def run_pipeline(spec: ExperimentSpec) -> MetricsTable:
    """Run every (value, trial) of ``spec`` and aggregate; writes nothing."""
    tasks = [(spec.config, spec.seed, vi, v, t, spec.variable, list(spec.schemes),
              list(spec.stages), list(spec.beam_schemes))
             for vi, v in enumerate(spec.values) for t in range(spec.trials)]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))
    trial_rows, rate_rows = [], []
    for vi, trial, seed, rows, rates in results:
        val = spec.values[vi]
        for r in sorted(rows, key=lambda r: (r["scheme"], r["metric"])):
            trial_rows.append((vi, val, trial, seed, r["scheme"], r["metric"], r["value"], r["status"]))
        for scheme, m, f, se in rates:
            rate_rows.append((vi, val, trial, seed, scheme, m, f, se))
    return MetricsTable(spec.variable, trial_rows, rate_rows,
                        summarise(spec.variable, spec.values, trial_rows))


def write_outputs(table: MetricsTable, spec: ExperimentSpec, out_dir) -> dict:
    """metrics.csv, trials.csv, rates.csv and manifest.json under ``out_dir``."""
    out = Path(out_dir)
    paths = {
        "metrics": write_csv(out / "metrics.csv", MetricsTable.SUMMARY_HEADER, table.summary_rows),
        "trials": write_csv(out / "trials.csv", MetricsTable.TRIAL_HEADER, table.trial_rows),
        "rates": write_csv(out / "rates.csv", MetricsTable.RATE_HEADER, table.rate_rows),
    }
    excluded = sum(1 for r in table.trial_rows if r[7] != "ok")
    manifest = {
        "code_version": __version__,
        "config_hash": spec.config.digest(),
        "spec": spec.to_dict(),
        "excluded_results": excluded,
        "files": {k: p.name for k, p in paths.items()},
    }
    paths["manifest"] = write_json(out / "manifest.json", manifest)
    return paths


def sweep(spec: ExperimentSpec, out_dir=None) -> MetricsTable:
    """:func:`run_pipeline` plus file outputs."""
    table = run_pipeline(spec)
    target = out_dir or spec.out_dir
    if target is not None:
        write_outputs(table, spec, target)
    return table
