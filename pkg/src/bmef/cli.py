"""Command-line workflow: ``simulate`` -> ``fit`` -> ``summarize`` / ``metrics``.

Every command writes a ``manifest.json`` into its output directory. Set
``BMEF_LOG`` (e.g. ``DEBUG``, ``INFO``, ``WARNING``) to control verbosity.
"""

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import load_dataset_dir, save_dataset
from .errors import BMEFError, NumericalDivergenceError, SamplerDegenerateError, ScenarioError, SpecError
from .posterior import (
    align_components,
    base_patterns,
    load_chain,
    posterior_mean_fixed,
    posterior_mean_random,
    principal_function_summary,
    save_chain,
    summarize_draws,
    waic,
    weight_summary,
)
from .sampler import FitConfig, fit, load_fit_config
from .simulate import GroundTruth, SimulationConfig, cmse, generate, mse_fixed, mse_random

log = logging.getLogger("bmef")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
MANIFEST = "manifest.json"
CHAIN_NAMES = {"jsonl": "chain.jsonl", "binary": "chain.npz"}
RANDOM_EFFECT_KEYS = ("a_gamma", "b_gamma", "a_omega", "b_omega", "variance_mode")


class ConfigFileError(Exception):
    pass


def _read_config(path):
    if path is None:
        return {}
    path = str(path)
    try:
        if path.endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigFileError(f"{path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise ConfigFileError(f"{path}: {exc}") from exc


def _validated(factory, raw, path):
    try:
        return factory(raw)
    except (SpecError, ScenarioError, TypeError) as exc:
        raise ConfigFileError(f"{path or '<defaults>'}: {exc}") from exc


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out_dir, command, config, seed, started, outputs):
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "code_version": __version__,
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
    path = Path(out_dir) / MANIFEST
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return Path(path)


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ------------------------------------------------------------------- commands

def cmd_simulate(args):
    started = _now()
    raw = _read_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = _validated(SimulationConfig.from_dict, raw, args.config)
    out = Path(args.out)
    ds, truth = generate(cfg)
    save_dataset(ds, out)
    truth.save(out / "truth.json")
    outputs = [out / f for f in ("responses.csv", "covariates.csv", "grid.json", "truth.json")]
    write_manifest(out, "simulate", cfg.to_dict(), cfg.seed, started, outputs)
    log.info("wrote %d pairs for %d subjects to %s", ds.n_pairs, ds.n_subjects, out)
    return EXIT_OK


def cmd_fit(args):
    started = _now()
    raw = _read_config(args.config)
    overrides = {"seed": args.seed, "threads": args.threads}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    if raw.get("model_spec") == "A":
        ignored = [k for k in RANDOM_EFFECT_KEYS if k in raw]
        if ignored:
            log.warning("model_spec A has no random effects; ignoring %s", ", ".join(ignored))
    cfg = _validated(FitConfig.from_dict, raw, args.config)
    ds = load_dataset_dir(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chain_path = out / CHAIN_NAMES[args.chain_format]
    checkpoint_path = out / ("checkpoint." + chain_path.name.split(".", 1)[1])
    outputs = [chain_path]

    def checkpoint(chain):
        save_chain(chain, checkpoint_path, args.chain_format)

    try:
        chain = fit(ds, cfg, checkpoint=checkpoint if cfg.checkpoint_every else None,
                    progress_every=args.progress_every)
    except NumericalDivergenceError as exc:
        partial = out / ("partial." + chain_path.name.split(".", 1)[1])
        if exc.partial_chain is not None:
            save_chain(exc.partial_chain, partial, args.chain_format)
        print(json.dumps({"error": "numerical_divergence", "message": str(exc), "iteration": exc.iteration,
                          "partial_chain": str(partial)}), file=sys.stderr)
        write_manifest(out, "fit", cfg.to_dict(), cfg.seed, started, [partial])
        return EXIT_DIVERGED
    save_chain(chain, chain_path, args.chain_format)
    if cfg.checkpoint_every:
        outputs.append(checkpoint_path)
    if args.gram_diag_csv:
        gpath = out / args.gram_diag_csv
        _write_csv(gpath, ["l", "gram_diag"], [[l, repr(float(v))] for l, v in enumerate(chain.basis.gram_diag)])
        outputs.append(gpath)
    write_manifest(out, "fit", cfg.to_dict(), cfg.seed, started, outputs)
    fb = chain.meta["fisher_bingham"]
    print(f"final rank R={chain.rank}; Fisher-Bingham acceptance {fb['acceptance_rate']:.3f}; "
          f"{chain.meta['elapsed_seconds']:.1f}s", file=sys.stderr)
    return EXIT_OK


def _default_profiles(p):
    """Intercept-only profile plus one profile per extra covariate switched on."""
    profiles = [np.eye(p)[0]]
    for k in range(1, p):
        x = np.eye(p)[0].copy()
        x[k] = 1.0
        profiles.append(x)
    return np.array(profiles)


def cmd_summarize(args):
    started = _now()
    ds = load_dataset_dir(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    waic_rows = []
    for k, path in enumerate(args.chain):
        chain = align_components(load_chain(path))
        waic_rows.append([chain.model_spec, chain.meta.get("config", {}).get("variance_mode", ""), str(path),
                          repr(waic(chain, ds))])
        if k:
            continue
        basis = chain.basis
        time_sum, freq_sum = principal_function_summary(chain, args.level)
        rows = []
        for axis, summ, grid in (("time", time_sum, basis.time.grid_points), ("freq", freq_sum, basis.freq.grid_points)):
            for r in range(chain.rank):
                for g, point in enumerate(grid):
                    rows.append([axis, r, repr(float(point)), repr(float(summ.mean[r, g])),
                                 repr(float(summ.lower[r, g])), repr(float(summ.upper[r, g]))])
        outputs.append(_write_csv(out / "principal_functions.csv",
                                  ["axis", "rank", "point", "mean", "lower", "upper"], rows))

        patterns = summarize_draws(np.stack([base_patterns(chain.fixed(s), basis) for s in range(chain.n_draws)]),
                                   args.level)
        rows = []
        for r in range(chain.rank):
            for t, tv in enumerate(basis.time.grid_points):
                for f, fv in enumerate(basis.freq.grid_points):
                    rows.append([r, repr(float(tv)), repr(float(fv)), repr(float(patterns.mean[r, t, f]))])
        outputs.append(_write_csv(out / "base_patterns.csv", ["rank", "time", "freq", "mean"], rows))

        profiles = np.loadtxt(args.profiles, delimiter=",", ndmin=2) if args.profiles else \
            _default_profiles(chain.covariates.shape[1])
        rows = [[w["condition"] + 1, w["profile"], w["rank"], ";".join(repr(float(v)) for v in profiles[w["profile"]]),
                 repr(w["mean"]), repr(w["lower"]), repr(w["upper"])] for w in weight_summary(chain, profiles, args.level)]
        outputs.append(_write_csv(out / "weights.csv",
                                  ["condition", "profile", "rank", "covariates", "mean", "lower", "upper"], rows))
    outputs.append(_write_csv(out / "waic.csv", ["model_spec", "variance_mode", "chain", "waic"], waic_rows))
    write_manifest(out, "summarize", {"chains": [str(c) for c in args.chain], "level": args.level}, None, started,
                   outputs)
    return EXIT_OK


def cmd_metrics(args):
    started = _now()
    chain = align_components(load_chain(args.chain))
    truth = GroundTruth.load(args.truth)
    rows = [["mse_A", repr(mse_fixed(truth, posterior_mean_fixed(chain)))]]
    for level, key in (("B", "gamma"), ("C", "omega")):
        if key in chain.arrays:
            rows.append([f"mse_{level}", repr(mse_random(truth, posterior_mean_random(chain, level), level))])
    for k in range(1, truth.covariates.shape[1]):
        rows.append([f"cmse_x{k + 1}", repr(cmse(truth, chain, k))])
    rows.append(["selected_rank", chain.rank])
    rows.append(["true_rank", truth.fixed.rank])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = _write_csv(out / "metrics.csv", ["metric", "value"], rows)
    write_manifest(out, "metrics", {"chain": str(args.chain), "truth": str(args.truth)}, None, started, [path])
    return EXIT_OK


# ----------------------------------------------------------------------- main

def build_parser():
    parser = argparse.ArgumentParser(prog="bmef", description="Bayesian CP mixed-effects models for two-way functional data")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset and its ground truth")
    p.add_argument("--config", help="simulation config (JSON or TOML)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler on a dataset directory")
    p.add_argument("--data", required=True, help="directory with responses.csv, covariates.csv, grid.json")
    p.add_argument("--config", help="fit config (JSON or TOML)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--chain-format", choices=sorted(CHAIN_NAMES), default="jsonl")
    p.add_argument("--gram-diag-csv", metavar="NAME", help="also write the basis Gram diagonal to this CSV")
    p.add_argument("--progress-every", type=int, default=100)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="posterior summary tables and WAIC")
    p.add_argument("--chain", required=True, action="append", help="chain file; repeat to compare WAIC")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--profiles", help="CSV of covariate profiles for the weight table")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("metrics", help="estimation error against a simulation ground truth")
    p.add_argument("--chain", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)
    return parser


def _configure_logging():
    level = os.environ.get("BMEF_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigFileError as exc:
        print(json.dumps({"error": "config_parse", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except SamplerDegenerateError as exc:
        print(json.dumps({"error": "sampler_degenerate", "message": str(exc), "attempts": exc.attempts,
                          "context": exc.context}, default=str), file=sys.stderr)
        return EXIT_ERROR
    except (BMEFError, OSError, KeyError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
