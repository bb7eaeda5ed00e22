"""Command-line entry point: simulate, fit, diagnose, agreement, cluster, compare.

Every run writes a manifest (tool version, resolved configuration, master
seed, input digests, timing) next to its outputs; rerunning with the same
configuration reproduces all numeric outputs byte-exactly.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .agreement import observed_agreement, posterior_predictive_agreement
from .clustering import (cocluster_matrix, merge_classes, partition_summary,
                         write_cocluster_binary)
from .data import load_dataset, pairing_summary, save_dataset
from .diagnostics import batch_means_se, dic3, gelman_rubin
from .errors import ProbecalError
from .inference import SCALAR_NAMES, ModelSpec, PosteriorSamples, run_chains
from .simulate import (BiasRule, Design, TruthParams, default_truth_params,
                       randomized_design, simulate_dataset, standard_design)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(directory: Path, subcommand: str, config: dict,
                    seed, inputs: dict, started: float) -> None:
    manifest = {
        "tool": "probecal",
        "version": __version__,
        "subcommand": subcommand,
        "config": config,
        "master_seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs.values() if p},
        "elapsed_seconds": round(time.perf_counter() - started, 3),
    }
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _truth_params_from_config(cfg: dict) -> TruthParams:
    kwargs = {}
    for key in ("mu", "sigma_b", "sigma_eps", "n_subjects"):
        if key in cfg:
            kwargs[key] = cfg[key]
    if "sigma" in cfg:
        kwargs["sigma"] = {k: float(v) for k, v in cfg["sigma"].items()}
    if "bias_rules" in cfg:
        rules = []
        for r in cfg["bias_rules"]:
            rules.append(BiasRule(
                examiner=r["examiner"], magnitude=float(r["magnitude"]),
                min_depth_mm=r.get("min_depth_mm"),
                locations=tuple(r["locations"]) if r.get("locations") else None,
                arches=tuple(r["arches"]) if r.get("arches") else None,
                tooth_types=tuple(r["tooth_types"]) if r.get("tooth_types") else None))
        kwargs["bias_rules"] = tuple(rules)
    design = cfg.get("design", "standard")
    if design == "standard":
        kwargs["design"] = standard_design()
    elif isinstance(design, str) and design.startswith("randomized:"):
        kwargs["design"] = randomized_design(int(design.split(":", 1)[1]))
    elif isinstance(design, list):
        kwargs["design"] = Design(tuple(tuple(row) for row in design))
    else:
        raise ValueError(f"unrecognized design setting {design!r}")
    if "n_subjects" not in kwargs:
        kwargs["n_subjects"] = kwargs.get("design", standard_design()).n_subjects
    return TruthParams(**kwargs)


def _config_to_json(params: TruthParams) -> dict:
    return {
        "mu": params.mu, "sigma_b": params.sigma_b,
        "sigma_eps": params.sigma_eps,
        "sigma": dict(params.sigma),
        "bias_rules": [
            {k: v for k, v in {
                "examiner": r.examiner, "magnitude": r.magnitude,
                "min_depth_mm": r.min_depth_mm,
                "locations": list(r.locations) if r.locations else None,
                "arches": list(r.arches) if r.arches else None,
                "tooth_types": list(r.tooth_types) if r.tooth_types else None,
            }.items() if v is not None}
            for r in params.bias_rules],
        "n_subjects": params.n_subjects,
        "design": [list(row) for row in params.design.assignments],
    }


def _cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    params = _truth_params_from_config(cfg)
    data, truth = simulate_dataset(params, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out)
    if args.latent_out:
        with open(args.latent_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject_id", "tooth", "site_index",
                             "pocket_depth_mm", "observed_1_mm", "observed_2_mm"])
            for i in range(truth.theta.shape[0]):
                writer.writerow([int(truth.subjects[i]), int(truth.teeth[i]),
                                 int(truth.locations[i]),
                                 repr(float(truth.theta[i])),
                                 repr(float(truth.obs_depth[i, 0])),
                                 repr(float(truth.obs_depth[i, 1]))])
    _write_manifest(out.parent, "simulate", _config_to_json(params),
                    args.seed, {"config": args.config}, started)
    summary = pairing_summary(data)
    print(f"wrote {data.n_records} records ({data.n_sites} sites, "
          f"{data.n_subjects} subjects) to {out}")
    for row in summary:
        print(f"  {row.pair}: {row.n_subjects} subjects, {row.n_sites} sites")
    return 0


def _fit_once(data, args, model: int, out_dir: Path) -> PosteriorSamples:
    spec = ModelSpec(variant=model)
    samples = run_chains(data, spec, n_chains=args.chains, burn_in=args.burnin,
                         n_keep=args.keep, seeds=args.seed, thin=args.thin,
                         keep_latent=args.keep_latent, n_jobs=args.jobs,
                         validate_censoring=True)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples.save(out_dir)
    save_dataset(data, out_dir / "data.csv")
    return samples


def _cmd_fit(args) -> int:
    started = time.perf_counter()
    data = load_dataset(args.data)
    out_dir = Path(args.out)
    samples = _fit_once(data, args, args.model, out_dir)
    _write_manifest(out_dir, "fit",
                    {"model": args.model, "chains": args.chains,
                     "burnin": args.burnin, "keep": args.keep,
                     "thin": args.thin, "keep_latent": args.keep_latent},
                    args.seed, {"data": args.data}, started)
    print(f"model {args.model}: {args.chains} chains x {args.keep} retained "
          f"draws in {samples.elapsed:.1f}s -> {out_dir}")
    return 0


def _cmd_diagnose(args) -> int:
    started = time.perf_counter()
    run_dir = Path(args.run)
    samples = PosteriorSamples.load(run_dir)
    report = {"run": str(run_dir), "psrf": {}, "mcse_mean": {},
              "mcse_median": {}}
    for name in SCALAR_NAMES:
        if samples.n_chains >= 2 and samples.n_keep >= 10:
            psrf = gelman_rubin(samples, name)
            report["psrf"][name] = {"point": psrf.point, "upper": psrf.upper}
        pooled = samples.pooled(name)
        if pooled.size >= 4:
            report["mcse_mean"][name] = batch_means_se(pooled, "mean")
            report["mcse_median"][name] = batch_means_se(pooled, "quantile", 0.5)
    if args.dic3:
        if not args.data:
            raise ProbecalError("--dic3 requires --data")
        data = load_dataset(args.data)
        report["dic3"] = dic3(samples, data).to_json()
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
        _write_manifest(Path(args.out).parent, "diagnose",
                        {"dic3": args.dic3}, None,
                        {"data": args.data}, started)
    else:
        print(text)
    return 0


def _cmd_agreement(args) -> int:
    started = time.perf_counter()
    run_dir = Path(args.run)
    samples = PosteriorSamples.load(run_dir)
    data = load_dataset(args.data if args.data else run_dir / "data.csv")
    table = posterior_predictive_agreement(samples, data, n_rep=args.reps,
                                           seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table.to_json(), indent=2))
    _write_manifest(out.parent, "agreement",
                    {"reps": args.reps, "run": str(run_dir)}, args.seed,
                    {"data": args.data}, started)
    print(f"wrote {len(table.rows)} table rows to {out}")
    return 0


def _cmd_cluster(args) -> int:
    started = time.perf_counter()
    run_dir = Path(args.run)
    samples = PosteriorSamples.load(run_dir)
    data = load_dataset(args.data if args.data else run_dir / "data.csv")
    summary = partition_summary(samples, args.examiner, data,
                                deep_threshold_mm=args.deep_threshold)
    if args.merge:
        ids = [int(x) for x in args.merge.split(",") if x.strip()]
        summary = merge_classes(summary, ids, samples, data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(summary.to_json(), indent=2))
    if args.delta_out:
        delta = cocluster_matrix(samples.pooled_alloc(args.examiner))
        write_cocluster_binary(delta, args.delta_out)
    _write_manifest(out.parent, "cluster",
                    {"examiner": args.examiner, "merge": args.merge,
                     "run": str(run_dir)}, None, {"data": args.data}, started)
    sizes = [c.size for c in summary.classes]
    print(f"examiner {args.examiner}: {summary.n_classes} classes, "
          f"sizes {sizes}, loss {summary.loss:.2f} -> {out}")
    return 0


def _cmd_compare(args) -> int:
    started = time.perf_counter()
    data = load_dataset(args.data)
    out_dir = Path(args.out)
    reports = []
    for model in (0, 1, 2, 3):
        samples = _fit_once(data, args, model, out_dir / f"model{model}")
        report = dic3(samples, data)
        reports.append(report)
        print(f"model {model}: DIC3 = {report.dic3:.2f}")
    ranking = sorted(reports, key=lambda r: r.dic3)
    payload = {"ranking": [r.to_json() for r in ranking],
               "best_variant": ranking[0].variant}
    (out_dir / "comparison.json").write_text(json.dumps(payload, indent=2))
    _write_manifest(out_dir, "compare",
                    {"chains": args.chains, "burnin": args.burnin,
                     "keep": args.keep}, args.seed, {"data": args.data},
                    started)
    print(f"best model by DIC3: {ranking[0].variant}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probecal",
        description="Examiner-calibration modeling for recorded probing depths")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON file mirroring the truth parameters")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--latent-out", help="optional CSV of latent depths")
    p.set_defaults(func=_cmd_simulate)

    def add_fit_args(p):
        p.add_argument("--data", required=True)
        p.add_argument("--chains", type=int, default=3)
        p.add_argument("--burnin", type=int, default=5000)
        p.add_argument("--keep", type=int, default=2000)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--thin", type=int, default=1)
        p.add_argument("--keep-latent", action="store_true")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("fit", help="run MCMC for one model")
    p.add_argument("--model", type=int, choices=(0, 1, 2, 3), required=True)
    add_fit_args(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("diagnose", help="convergence diagnostics and DIC3")
    p.add_argument("--run", required=True)
    p.add_argument("--dic3", action="store_true")
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("agreement", help="predictive agreement table")
    p.add_argument("--run", required=True)
    p.add_argument("--data")
    p.add_argument("--reps", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_agreement)

    p = sub.add_parser("cluster", help="posterior partition of bias effects")
    p.add_argument("--run", required=True)
    p.add_argument("--examiner", choices=("A", "B", "C"), required=True)
    p.add_argument("--merge", help='comma list of class ids, e.g. "2,4"')
    p.add_argument("--data")
    p.add_argument("--deep-threshold", type=float, default=4.0)
    p.add_argument("--delta-out", help="binary co-clustering matrix path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("compare", help="fit Models 0-3 and rank by DIC3")
    add_fit_args(p)
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ProbecalError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
