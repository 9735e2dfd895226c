"""Command-line entry point: simulate, fit, correct, validate."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import DEFAULT_GUARD, correct_grid
from .errors import AQFusionError, ConfigurationError
from .inference import (ParameterLayout, SamplerConfig, diagnostics, gibbs_fit, gls_fit,
                        init_from_collocation, posterior_estimate, read_collocation,
                        read_parameters, resolve_priors, save_priors, write_parameters)
from .io import (assemble, list_grids, load_config, load_spatial_stack, read_grid, read_temporal,
                 write_grid)
from .io.timeaxis import format_hour, traffic_hours_filter
from .measurement import build_rows
from .synth import SynthSpec, generate, write_campaign
from .validation import (MODES, apply_mode, diurnal_profile, loo_station_cv, score_rows,
                         split_train_test, split_validation, summary_block, write_rows_csv)

log = logging.getLogger("aqfusion")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunManifest:
    """Records inputs, outputs and timing of one command; written last."""

    def __init__(self, command, out_dir, argv, seed=None, config=None):
        self.command = command
        self.out_dir = Path(out_dir)
        self.argv = list(argv)
        self.seed = seed
        self.config = str(config) if config else None
        self.inputs = {}
        self.outputs = []
        self.started = time.time()

    def add_input(self, path):
        path = Path(path)
        self.inputs[str(path)] = sha256(path)

    def add_output(self, path):
        self.outputs.append(Path(path))

    def write(self):
        outputs = {str(p.relative_to(self.out_dir)): sha256(p) for p in sorted(set(self.outputs))}
        doc = {
            "command": self.command,
            "version": __version__,
            "argv": self.argv,
            "config": self.config,
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": outputs,
            "output_dir": str(self.out_dir),
            "timing": {"started": self.started, "elapsed_s": round(time.time() - self.started, 3)},
        }
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=2) + "\n")
        return path


def _campaign_inputs(cfg, manifest, config_path):
    manifest.add_input(config_path)
    for _, p in list_grids(cfg):
        manifest.add_input(p)
    for cov in cfg.spatial:
        manifest.add_input(cfg.resolve(cov.path))
    manifest.add_input(cfg.resolve(cfg.temporal_path))
    for dev in cfg.devices:
        manifest.add_input(cfg.resolve(dev.path))


def _hours_scope(obs_hours, cfg, scope):
    if scope == "all":
        return obs_hours
    if scope == "traffic":
        return obs_hours[traffic_hours_filter(obs_hours, cfg.traffic)]
    raise ConfigurationError(f"unknown hour scope {scope!r}")


def _sampler_config(args):
    return SamplerConfig(n_adapt=args.adapt, n_burn=args.burn, n_keep=args.keep,
                         n_chains=args.chains, seed=args.seed, guard=args.guard,
                         form=args.likelihood, noise=args.noise)


def _priors(args, obs):
    return resolve_priors(args.priors, obs.spatial_names, obs.temporal_names, obs.channels)


def _bayes_fitter(args, obs, record=None):
    priors = _priors(args, obs)
    cfg = _sampler_config(args)

    def fit(rows):
        layout = ParameterLayout.from_rows(rows, obs.spatial_names, obs.temporal_names)
        init = _initial_values(args, layout, priors)
        chains = gibbs_fit(rows, priors, cfg, init, layout=layout)
        if record is not None:
            record.append(chains)
        return posterior_estimate(chains, args.estimate, layout)

    return fit


def _gls_fitter(args, obs):
    def fit(rows):
        return gls_fit(rows, guard=args.guard, spatial_names=obs.spatial_names,
                       temporal_names=obs.temporal_names).params

    return fit


def _initial_values(args, layout, priors):
    if args.init == "prior-means":
        return None
    table = read_collocation(None if args.init == "collocation" else args.init)
    return init_from_collocation(table, layout, priors)


# --- commands -----------------------------------------------------------------

def cmd_simulate(args):
    spec = SynthSpec.load(args.spec) if args.spec else SynthSpec()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.hours is not None:
        changes["n_hours"] = args.hours
    if changes:
        spec = SynthSpec.from_dict({**spec.to_dict(), **changes})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("simulate", out, args.argv, spec.seed, args.spec)
    if args.spec:
        manifest.add_input(args.spec)
    camp = generate(spec)
    cfg_path = write_campaign(camp, out, binary=not args.ascii, latent=not args.no_latent)
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            manifest.add_output(p)
    log.info("wrote synthetic campaign (%d hours, %d devices) to %s",
             camp.hours.size, len(camp.observations.device_ids), cfg_path.parent)
    manifest.write()
    return 0


def cmd_fit(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("fit", out, args.argv, args.seed, args.config)
    _campaign_inputs(cfg, manifest, args.config)
    obs = assemble(cfg)
    obs = obs.select_hours(_hours_scope(obs.hours, cfg, args.hours))
    all_rows = build_rows(obs)
    data = apply_mode(obs, args.mode)
    rows = build_rows(data)
    log.info("mode %s: %d rows (%d dropped with sensors, %d incomplete device-hours skipped)",
             args.mode, len(rows), len(all_rows) - len(rows), rows.n_skipped)
    if args.sampler == "gls":
        if rows.sensor_ids:
            raise ConfigurationError("the GLS estimator uses station rows only; rerun with --mode S")
        res = gls_fit(rows, guard=args.guard, spatial_names=obs.spatial_names,
                      temporal_names=obs.temporal_names)
        write_parameters(out / "parameters.yaml", res.params, {}, obs.channels,
                         meta={"estimator": "gls", "iterations": res.n_iter, "converged": res.converged})
        hist = {"columns": res.columns, "coef": res.coef.tolist(), "stderr": res.stderr.tolist(),
                "coef_history": [c.tolist() for c in res.coef_history]}
        (out / "gls.json").write_text(json.dumps(hist, indent=2) + "\n")
        manifest.add_output(out / "parameters.yaml")
        manifest.add_output(out / "gls.json")
        manifest.write()
        return 0

    priors = _priors(args, obs)
    if args.priors not in ("appendix-b", "default", "weak"):
        manifest.add_input(args.priors)
    if args.init not in ("prior-means", "collocation"):
        manifest.add_input(args.init)
    layout = ParameterLayout.from_rows(rows, obs.spatial_names, obs.temporal_names)
    scfg = _sampler_config(args)
    init = _initial_values(args, layout, priors)

    def progress(chain, phase, done, total):
        if done == total:
            log.info("chain %d: %s phase done (%d iterations)", chain, phase, total)

    chains = gibbs_fit(rows, priors, scfg, init, layout=layout, progress=progress)
    bias, cals = posterior_estimate(chains, args.estimate, layout)
    write_parameters(out / "parameters.yaml", bias, cals, obs.channels,
                     meta={"estimator": f"posterior {args.estimate}", "mode": args.mode})
    chains.to_csv(out / "draws.csv")
    diag = diagnostics(chains)
    write_rows_csv(out / "diagnostics.csv", diag.rows())
    (out / "diagnostics.txt").write_text(diag.table() + "\n")
    save_priors(priors, out / "priors.yaml")
    (out / "sampler.json").write_text(json.dumps(scfg.to_dict(), indent=2) + "\n")
    if diag.flagged:
        log.warning("R-hat above 1.05 for %s", ", ".join(diag.flagged))
    for name in ("parameters.yaml", "draws.csv", "diagnostics.csv", "diagnostics.txt",
                 "priors.yaml", "sampler.json"):
        manifest.add_output(out / name)
    manifest.write()
    return 0


def cmd_correct(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("correct", out, args.argv, None, args.config)
    manifest.add_input(args.config)
    manifest.add_input(args.params)
    bias, _ = read_parameters(args.params)
    grids = list_grids(cfg)
    hours = np.array([ts for ts, _ in grids], dtype=np.int64)
    in_window = traffic_hours_filter(hours, cfg.traffic)
    if args.hours == "traffic":
        keep = in_window
    else:
        keep = np.ones(hours.size, bool)
        n_out = int(np.count_nonzero(~in_window))
        if n_out:
            msg = f"{n_out} grids lie outside the traffic-hour window the parameters are fitted on"
            if args.outside == "refuse":
                raise ConfigurationError(msg + " (use --hours traffic or --outside warn)")
            log.warning(msg)
    first = read_grid(grids[0][1])
    for cov in cfg.spatial:
        manifest.add_input(cfg.resolve(cov.path))
    manifest.add_input(cfg.resolve(cfg.temporal_path))
    stack = load_spatial_stack(cfg, first)
    t_hours, t_data = read_temporal(cfg)
    xt_by_hour = {int(h): row for h, row in zip(t_hours, t_data)}
    log_rows = []
    ext = ".grid" if args.ascii else ".bgrid"
    for (ts, path), k in zip(grids, keep):
        if not k:
            continue
        manifest.add_input(path)
        xt = xt_by_hour.get(int(ts))
        if xt is None or not np.all(np.isfinite(xt)):
            log.warning("no temporal covariates for %s; grid skipped", format_hour(ts))
            log_rows.append({"timestamp": format_hour(ts), "status": "skipped", "clamped": 0, "nodata": 0})
            continue
        grid = read_grid(path)
        corrected = correct_grid(grid, stack, xt, bias, args.guard)
        target = out / f"corrected_{ts}{ext}"
        write_grid(corrected, target, binary=not args.ascii)
        manifest.add_output(target)
        log_rows.append({"timestamp": format_hour(ts), "status": "ok",
                         "clamped": corrected.n_clamped, "nodata": corrected.n_nodata})
    write_rows_csv(out / "corrections.csv", log_rows)
    manifest.add_output(out / "corrections.csv")
    log.info("corrected %d grids", sum(r["status"] == "ok" for r in log_rows))
    manifest.write()
    return 0


def cmd_validate(args):
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("validate", out, args.argv, args.seed, args.config)
    _campaign_inputs(cfg, manifest, args.config)
    obs = assemble(cfg)
    eligible = _hours_scope(obs.hours, cfg, args.hours)
    obs = obs.select_hours(eligible)
    train, test = split_train_test(eligible, args.fraction, args.seed)
    modes = MODES if args.mode == "both" else (args.mode,)
    results = []
    for mode in modes:
        fitter = _gls_fitter(args, obs) if args.sampler == "gls" else _bayes_fitter(args, obs)
        if args.sampler == "gls" and mode == "S+LCS":
            raise ConfigurationError("the GLS estimator uses station rows only; use --mode S")
        if args.protocol == "split":
            res = split_validation(obs, fitter, train, test, mode, args.guard)
        else:
            fit_hours = train if args.fit_hours == "train" else eligible
            eval_hours = test if args.fit_hours == "train" and args.eval_hours == "test" else eligible
            res = loo_station_cv(obs, fitter, mode, fit_hours, eval_hours, args.guard)
        results.append(res)
    write_rows_csv(out / "scores.csv", score_rows(results))
    (out / "summary.txt").write_text(summary_block(results) + "\n")
    scope = test if args.protocol == "split" or args.fit_hours == "train" else eligible
    profile = []
    for res in results:
        for row in diurnal_profile(obs, res.series, scope):
            profile.append({"mode": res.mode, **row})
    write_rows_csv(out / "diurnal.csv", profile)
    for name in ("scores.csv", "summary.txt", "diurnal.csv"):
        manifest.add_output(out / name)
    sys.stderr.write(summary_block(results) + "\n")
    manifest.write()
    return 0


# --- parser -----------------------------------------------------------------------

def _sampler_args(p):
    p.add_argument("--sampler", choices=("gibbs", "gls"), default="gibbs")
    p.add_argument("--priors", default="appendix-b",
                   help="appendix-b, weak, or a prior YAML file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=3)
    p.add_argument("--adapt", type=int, default=8000)
    p.add_argument("--burn", type=int, default=2000)
    p.add_argument("--keep", type=int, default=2500)
    p.add_argument("--init", default="prior-means",
                   help="prior-means, collocation (bundled table) or a collocation CSV")
    p.add_argument("--estimate", choices=("mean", "mode"), default="mean")
    p.add_argument("--likelihood", choices=("measurement", "output"), default="measurement")
    p.add_argument("--noise", choices=("signal", "literal"), default="signal")
    p.add_argument("--guard", type=float, default=DEFAULT_GUARD)
    p.add_argument("--hours", choices=("all", "traffic"), default="traffic")


def build_parser():
    parser = argparse.ArgumentParser(prog="aqfusion", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic campaign")
    p.add_argument("--spec", help="synthetic spec YAML")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--hours", type=int, help="number of hours to generate")
    p.add_argument("--ascii", action="store_true", help="ASCII instead of binary grids")
    p.add_argument("--no-latent", action="store_true", help="skip latent concentration grids")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="estimate bias and calibration parameters")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES, default="S+LCS")
    _sampler_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("correct", help="apply fitted bias parameters to model grids")
    p.add_argument("--config", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hours", choices=("all", "traffic"), default="all")
    p.add_argument("--outside", choices=("warn", "refuse"), default="warn",
                   help="grids outside the traffic window when --hours all")
    p.add_argument("--guard", type=float, default=DEFAULT_GUARD)
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("validate", help="score corrected output against stations")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--protocol", choices=("split", "loo"), default="loo")
    p.add_argument("--mode", choices=(*MODES, "both"), default="both")
    p.add_argument("--fraction", type=float, default=0.7)
    p.add_argument("--fit-hours", choices=("train", "all"), default="train",
                   help="hours used by leave-one-out fits")
    p.add_argument("--eval-hours", choices=("all", "test"), default="all",
                   help="hours scored by leave-one-out")
    _sampler_args(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except AQFusionError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except OSError as exc:
        # unreadable or missing input paths are a configuration problem
        log.error("%s: %s", type(exc).__name__, exc)
        return ConfigurationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
