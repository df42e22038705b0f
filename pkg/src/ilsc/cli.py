"""Command-line entry point: ``ilsc simulate|sweep|locate|beamform``.

Every command exits 0 on success. On failure it prints one JSON error
record to stderr (and to ``<out>/error.json`` when ``--out`` is given) and
exits 2 for invalid input or 1 for a failure during the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .beamformer import BEAM_SCHEMES, evaluate_scheme
from .channel import ChannelTensor
from .config import ConfigError, SystemConfig, load_config, profile
from .estimator import reconstruct_spatial
from .harness import (ESTIMATION_SCHEMES, SWEEP_VARIABLES, ExperimentSpec, estimate_with,
                      run_trial, sweep, trial_seeds)
from .io import (read_channel, read_location, write_channel, write_estimate, write_json,
                 write_location, write_rates, write_tensor)
from .locator import locate
from .pilots import build_pilot_frame, simulate_uplink

log = logging.getLogger("ilsc")

EXIT_INPUT = 2
EXIT_RUNTIME = 1


class InputError(Exception):
    """Bad arguments or inconsistent input files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _base_config(args) -> SystemConfig:
    base = profile(args.profile)
    if args.config:
        return load_config(args.config, base)
    return base


def _common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--config", metavar="PATH", help="JSON/YAML file of config overrides")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk",
                   help="base parameter set (default: desk)")
    p.add_argument("--seed", type=int, default=0, help="root random seed")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ilsc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one trial and dump every intermediate")
    _common(p)
    p.add_argument("--schemes", type=_csv_list, default=["amp-polar-fd"],
                   help=f"estimation schemes, from {','.join(ESTIMATION_SCHEMES)}")
    p.add_argument("--beam-schemes", type=_csv_list, default=["proposed", "focused", "center-ideal"],
                   help=f"beamforming schemes, from {','.join(BEAM_SCHEMES)}")
    p.add_argument("--format", choices=["csv", "npz"], default="csv", help="tensor dump format")

    p = sub.add_parser("sweep", help="Monte-Carlo sweep from an experiment file or flags")
    p.add_argument("spec", nargs="?", metavar="SPEC", help="experiment file (JSON/YAML)")
    _common(p)
    p.add_argument("--schemes", type=_csv_list, help="estimation schemes")
    p.add_argument("--beam-schemes", type=_csv_list, help="beamforming schemes")
    p.add_argument("--stages", type=_csv_list, help="subset of estimate,locate,beamform")
    p.add_argument("--trials", type=int, help="trials per sweep value")
    p.add_argument("--variable", choices=SWEEP_VARIABLES, help="swept parameter")
    p.add_argument("--values", type=lambda s: [float(v) for v in _csv_list(s)],
                   help="comma-separated sweep values")
    p.add_argument("--workers", type=int, default=None, help="worker processes")
    p.set_defaults(seed=None)

    p = sub.add_parser("locate", help="channel dump in, location report out")
    _common(p)
    p.add_argument("--channel", required=True, metavar="PATH", help="uplink channel dump")
    p.add_argument("--schemes", type=_csv_list, default=["amp-polar-fd"],
                   help="estimation scheme used before locating (polar dictionary)")
    p.add_argument("--format", choices=["csv", "npz"], default="csv")

    p = sub.add_parser("beamform", help="location report and channel in, SE table out")
    _common(p)
    p.add_argument("--report", required=True, metavar="PATH", help="location report JSON")
    p.add_argument("--channel", required=True, metavar="PATH", help="true uplink channel dump")
    p.add_argument("--estimate", metavar="PATH",
                   help="estimated uplink channel dump (default: the true channel)")
    p.add_argument("--schemes", type=_csv_list, default=["proposed", "focused", "center-ideal"],
                   help=f"beamforming schemes, from {','.join(BEAM_SCHEMES)}")
    return parser


# ------------------------------------------------------------- commands

def cmd_simulate(args) -> dict:
    cfg = _base_config(args)
    out = Path(args.out)
    ext = "." + args.format
    seeds = trial_seeds(args.seed, 0, 0)
    stages = ["estimate", "locate", "beamform"]
    if not any(ESTIMATION_SCHEMES.get(s, ("", "dft"))[1] != "dft" for s in args.schemes):
        stages = ["estimate"]
    for s in args.schemes:
        if s not in ESTIMATION_SCHEMES:
            raise InputError(f"unknown scheme {s!r}")
    rows, _, art = run_trial(cfg, seeds, args.schemes, stages, args.beam_schemes, keep=True)
    geom = art.geometry
    write_json(out / "config.json", cfg.to_dict())
    write_json(out / "geometry.json", {
        "ut_position": geom.ut_position, "ut_orientation": geom.ut_orientation,
        "scatterers": geom.scatterers, "bs_polar": geom.bs_polar, "ut_polar": geom.ut_polar,
        "los_present": geom.los_present, "alpha_re": geom.alpha.real, "alpha_im": geom.alpha.imag,
        "beta_los": geom.beta_los, "beta_nlos": geom.beta_nlos})
    write_channel(out / f"channel_uplink{ext}", art.channel)
    write_tensor(out / f"measurements{ext}", art.measurements.y)
    write_json(out / "measurements.json", {"noise_var": art.measurements.noise_var,
                                           "snr_db": art.measurements.snr_db,
                                           "tx_power_mw": art.measurements.tx_power_mw})
    for scheme, est in art.estimates.items():
        write_estimate(out / f"estimate_{scheme}{ext}", est)
    if art.report is not None:
        write_location(out / "location", art.report, geom.ut_position, geom.scatterers)
    for bs, rates in art.rates.items():
        write_rates(out / f"se_{bs}.csv", cfg.subcarrier_freqs, rates)
    summary = {"seed": args.seed, "seeds": seeds,
               "results": [dict(r) for r in rows]}
    write_json(out / "summary.json", summary)
    return {"out": str(out), "results": len(rows)}


def cmd_sweep(args) -> dict:
    if args.spec:
        spec = ExperimentSpec.load(args.spec, _base_config(args))
    else:
        spec = ExperimentSpec(config=_base_config(args))
    updates = {}
    for name in ("schemes", "beam_schemes", "stages", "trials", "workers"):
        val = getattr(args, name)
        if val is not None:
            updates[name] = val
    if args.variable is not None:
        if not args.values:
            raise InputError("--variable needs --values")
        updates["variable"] = args.variable
        updates["values"] = args.values
    updates["seed"] = spec.seed if args.seed is None else args.seed
    data = spec.to_dict()
    data.pop("config")
    data.update(updates)
    data.setdefault("workers", spec.workers)
    spec = ExperimentSpec(config=spec.config, **data)
    table = sweep(spec, args.out)
    failed = sum(1 for r in table.trial_rows if r[7] != "ok")
    return {"out": args.out, "rows": len(table.trial_rows), "failed": failed}


def _check_shape(channel: ChannelTensor, cfg: SystemConfig):
    want = (cfg.m_subcarriers, cfg.n_bs, cfg.n_ut)
    if channel.direction != "uplink":
        channel = channel.downlink()
    if channel.data.shape != want:
        raise InputError(f"channel shape {channel.data.shape} does not match config {want}")
    return channel


def cmd_locate(args) -> dict:
    cfg = _base_config(args)
    chan = _check_shape(read_channel(args.channel), cfg)
    if len(args.schemes) != 1 or ESTIMATION_SCHEMES.get(args.schemes[0], ("", "dft"))[1] == "dft":
        raise InputError("locate needs exactly one polar-dictionary scheme")
    scheme = args.schemes[0]
    seeds = trial_seeds(args.seed, 0, 0)
    frame = build_pilot_frame(cfg, seeds["pilots"])
    ms = simulate_uplink(chan, frame, cfg, seeds["noise"])
    est, dic = estimate_with(scheme, ms, frame, cfg, n_mpc=cfg.l_max + 1)
    report = locate(est, ms.y, dic.lattice, cfg, seed=seeds["cluster"])
    out = Path(args.out)
    write_estimate(out / f"estimate_{scheme}.{args.format}", est)
    write_channel(out / f"channel_estimate.{args.format}", reconstruct_spatial(est, dic))
    write_location(out / "location", report)
    return {"out": str(out), "n_paths": report.n_paths, "flags": report.flags}


def cmd_beamform(args) -> dict:
    cfg = _base_config(args)
    true_ul = _check_shape(read_channel(args.channel), cfg)
    est_ul = _check_shape(read_channel(args.estimate), cfg) if args.estimate else true_ul
    report = read_location(args.report)
    out = Path(args.out)
    summary = {}
    for bs in args.schemes:
        if bs not in BEAM_SCHEMES:
            raise InputError(f"unknown beam scheme {bs!r}")
        rates, hyb = evaluate_scheme(bs, true_ul.downlink(), est_ul.downlink(), report, cfg)
        write_rates(out / f"se_{bs}.csv", cfg.subcarrier_freqs, rates)
        summary[bs] = {"se": float(np.mean(rates)), "selected": hyb.selected, "flags": hyb.flags}
    write_json(out / "se_summary.json", summary)
    return {"out": str(out), "schemes": list(summary)}


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "locate": cmd_locate,
            "beamform": cmd_beamform}


def _error_record(command, exc, code) -> dict:
    return {"status": "error", "command": command, "exit_code": code,
            "error_type": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        result = COMMANDS[args.command](args)
        # a record left by an earlier failed run in the same directory is stale now
        if getattr(args, "out", None):
            Path(args.out, "error.json").unlink(missing_ok=True)
        print(json.dumps({"status": "ok", "command": args.command, **result}, default=str))
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (InputError, ConfigError, FileNotFoundError) as exc:
        code = EXIT_INPUT
        err = exc
    except Exception as exc:
        code = EXIT_RUNTIME
        err = exc
        log.debug("command failed", exc_info=True)
    record = _error_record(getattr(args, "command", None), err, code)
    print(json.dumps(record), file=sys.stderr)
    out = getattr(args, "out", None)
    if out:
        try:
            write_json(Path(out) / "error.json", record)
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
