"""Campaign orchestration: the command surface tying the engine together.

Commands: ``generate``, ``filter``, ``dedup``, ``metrics``,
``select train``, ``select eval``, ``report``.  Every command takes an
archive directory produced by ``generate`` (or ``dedup``), holds a lock
file while it runs, exits 0 only when it completed with all invariants
intact, and names the offending entity in any diagnostic.

Environment overrides: ``LATENTDIFF_OUT_DIR`` (default output directory
for ``generate``) and ``LATENTDIFF_WORKERS`` (evaluation workers).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__, metrics, modelhub, persist, report
from .filtering import run_filter_pipeline
from .metrics import coefficient_of_variation, improvement_ratio
from .modelhub import TestbedConfig
from .nsga2 import SearchConfig, run_search
from .selection import (
    build_selection_dataset,
    eval_selector,
    majority_baseline,
    train_selector,
)


class CliError(Exception):
    """Operator-facing failure; printed and mapped to a nonzero exit."""


@dataclass
class CampaignConfig:
    """Everything a campaign needs, validated up front."""

    out_dir: str
    generator: str = "testbed"          # "testbed" or a PFN directory
    model_a: str = "testbed"
    model_b: str = "testbed"
    discriminator: str | None = "testbed"
    extractor: str = "testbed"
    population: int = 100
    latent_dim: int = 100
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    mutation_gene_prob: float | None = None
    eta_crossover: float = 15.0
    eta_mutation: float = 20.0
    budget_evals: int | None = None
    budget_seconds: float | None = None
    seed: int = 0
    repetitions: int = 1
    workers: int = 1
    disc_threshold: float = 0.5
    ssim_threshold: float = 0.40
    testbed_side: int = 16
    testbed_spread: float = 2.0
    testbed_threshold_a: float | None = None
    testbed_threshold_b: float | None = None
    testbed_threshold_truth: float | None = None
    testbed_tau: float = 2.0

    def validate(self):
        if self.repetitions < 1:
            raise CliError("repetitions must be at least 1")
        if (self.budget_evals is None) == (self.budget_seconds is None):
            raise CliError("set exactly one of --budget-evals / --budget-seconds")
        for role, value in (("generator", self.generator),
                            ("model-a", self.model_a),
                            ("model-b", self.model_b),
                            ("discriminator", self.discriminator),
                            ("extractor", self.extractor)):
            if value and value != "testbed" and not Path(value).is_dir():
                raise CliError(f"{role} path {value} does not exist")

    def testbed_config(self) -> TestbedConfig:
        return TestbedConfig(
            side=self.testbed_side,
            spread=self.testbed_spread,
            threshold_a=self.testbed_threshold_a,
            threshold_b=self.testbed_threshold_b,
            threshold_truth=self.testbed_threshold_truth,
            tau=self.testbed_tau,
        )


class _Lock:
    """One command per archive directory, via an O_EXCL lock file."""

    def __init__(self, directory):
        self.path = Path(directory) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise CliError(
                f"archive {self.path.parent} is locked by another command "
                f"(remove {self.path} if that command died)") from None
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _build_roles(cfg: CampaignConfig):
    if cfg.generator == "testbed" or cfg.model_a == "testbed" or cfg.model_b == "testbed":
        if not (cfg.generator == cfg.model_a == cfg.model_b == "testbed"):
            raise CliError("testbed roles cannot be mixed with PFN models")
        tb = cfg.testbed_config()
        gen, ma, mb, _, _ = modelhub.testbed_roles(tb, latent_dim=cfg.latent_dim)
        return gen, ma, mb
    return (modelhub.pfn_generator(cfg.generator),
            modelhub.pfn_classifier(cfg.model_a),
            modelhub.pfn_classifier(cfg.model_b))


def _load_role_from_header(header: dict, role: str):
    cfg_dict = header.get("config", {})
    value = cfg_dict.get(role)
    if value == "testbed":
        tb = TestbedConfig(
            side=cfg_dict.get("testbed_side", 16),
            spread=cfg_dict.get("testbed_spread", 2.0),
            threshold_a=cfg_dict.get("testbed_threshold_a"),
            threshold_b=cfg_dict.get("testbed_threshold_b"),
            threshold_truth=cfg_dict.get("testbed_threshold_truth"),
            tau=cfg_dict.get("testbed_tau", 2.0),
        )
        if role == "discriminator":
            return modelhub.TestbedDiscriminator()
        if role == "extractor":
            return modelhub.TestbedExtractor(tb)
        raise CliError(f"role {role} cannot be rebuilt from the manifest")
    if not value:
        return None
    if role == "discriminator":
        return modelhub.pfn_discriminator(value)
    if role == "extractor":
        return modelhub.pfn_extractor(value)
    raise CliError(f"role {role} cannot be rebuilt from the manifest")


def _search_config(cfg: CampaignConfig, seed: int) -> SearchConfig:
    return SearchConfig(
        population_size=cfg.population,
        latent_dim=cfg.latent_dim,
        crossover_rate=cfg.crossover_rate,
        mutation_rate=cfg.mutation_rate,
        mutation_gene_prob=cfg.mutation_gene_prob,
        eta_crossover=cfg.eta_crossover,
        eta_mutation=cfg.eta_mutation,
        budget_evaluations=cfg.budget_evals,
        budget_seconds=cfg.budget_seconds,
        seed=seed,
        workers=cfg.workers,
    )


def cmd_generate(cfg: CampaignConfig) -> int:
    cfg.validate()
    out_root = Path(cfg.out_dir)
    load_start = time.monotonic()
    gen, ma, mb = _build_roles(cfg)
    load_seconds = time.monotonic() - load_start

    counts = []
    for rep in range(cfg.repetitions):
        run_seed = cfg.seed + rep
        run_dir = out_root / f"run_{rep:03d}"
        if (run_dir / persist.MANIFEST_NAME).exists():
            raise CliError(
                f"{run_dir} already holds an archive; refusing to overwrite")
        with _Lock(run_dir):
            t0 = time.monotonic()
            archive = run_search(_search_config(cfg, run_seed), gen, ma, mb)
            search_seconds = time.monotonic() - t0
            snapshot = asdict(cfg)
            del snapshot["out_dir"]   # environment detail; identically seeded
            #                           runs must compare byte for byte
            header = {
                "engine_version": __version__,
                "seed": run_seed,
                "total_evaluations": archive.total_evaluations,
                "config": snapshot,
            }
            persist.write_archive(archive, run_dir, header)
            # timings stay out of the manifest so identically seeded
            # eval-budget runs compare byte for byte
            (run_dir / "run_info.json").write_text(json.dumps({
                "search_seconds": search_seconds,
                "model_load_seconds": load_seconds,
                "budget_seconds": cfg.budget_seconds,
                "budget_evals": cfg.budget_evals,
            }, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        counts.append(len(archive))
        print(f"run {rep}: {len(archive)} triggering inputs "
              f"({archive.total_evaluations} evaluations, {search_seconds:.1f}s)")
    if len(counts) >= 2 and sum(counts) > 0:
        print(f"coefficient of variation: "
              f"{coefficient_of_variation(counts):.2f}%")
    return 0


def cmd_filter(args) -> int:
    root = Path(args.archive)
    with _Lock(root):
        archive, header, _ = persist.load_archive(root)
        disc = None
        if not args.no_discriminator:
            if args.discriminator:
                disc = (modelhub.TestbedDiscriminator()
                        if args.discriminator == "testbed"
                        else modelhub.pfn_discriminator(args.discriminator))
            else:
                disc = _load_role_from_header(header, "discriminator")
            if disc is None:
                raise CliError(
                    "no discriminator recorded in the manifest; pass "
                    "--discriminator or --no-discriminator")
        refs = None
        if not args.no_ssim:
            if not args.refs:
                raise CliError(
                    "SSIM filtering needs --refs <directory of reference "
                    "images>; pass --no-ssim to skip that stage")
            refs = persist.load_reference_images(args.refs)
        kept, rep = run_filter_pipeline(
            archive.records, disc=disc, refs=refs,
            disc_threshold=args.disc_threshold,
            ssim_threshold=args.ssim_threshold)
        verdicts = {v.record_id: v for v in rep.verdicts}
        persist.write_manifest(archive.records, root / persist.MANIFEST_NAME,
                               header, verdicts)
        persist.write_filter_report(rep, root / "filter_report.json")
    print(f"kept {rep.kept_count} of {rep.input_count} "
          f"(duplicates {rep.removed_duplicate}, "
          f"discriminator {rep.removed_by_discriminator}, "
          f"ssim {rep.removed_by_ssim})")
    return 0


def cmd_dedup(args) -> int:
    out = Path(args.out)
    if (out / persist.MANIFEST_NAME).exists():
        raise CliError(f"{out} already holds an archive; refusing to overwrite")
    from .fitness import Archive, TriggeringRecord, archive_insert
    merged = Archive()
    duplicates = 0
    headers = []
    for directory in args.archives:
        archive, header, _ = persist.load_archive(directory)
        headers.append({"source": str(directory), "seed": header.get("seed")})
        for rec in archive.records:
            fresh = TriggeringRecord(
                record_id=f"d{len(merged.records):08d}",
                latent=rec.latent, image=rec.image,
                content_hash=rec.content_hash,
                label_a=rec.label_a, label_b=rec.label_b,
                probs_a=rec.probs_a, probs_b=rec.probs_b,
                divergence=rec.divergence,
                diversity_at_insert=rec.diversity_at_insert,
                generation=rec.generation,
                evaluation_index=rec.evaluation_index)
            if not archive_insert(merged, fresh):
                duplicates += 1
    with _Lock(out):
        persist.write_archive(merged, out, {
            "engine_version": __version__,
            "merged_from": headers,
            "duplicates_removed": duplicates,
        })
    print(f"merged {len(args.archives)} archives: "
          f"{len(merged)} unique records, {duplicates} duplicates removed")
    return 0


def _extractor_for(args, header):
    if args.extractor and args.extractor != "testbed":
        return modelhub.pfn_extractor(args.extractor)
    extractor = _load_role_from_header(header, "extractor")
    if extractor is None:
        raise CliError("no feature extractor available; pass --extractor")
    return extractor


def cmd_metrics(args) -> int:
    root = Path(args.archive)
    archive, header, _ = persist.load_archive(root)
    if not archive.records:
        raise CliError(f"archive {root} is empty; nothing to measure")
    extractor = _extractor_for(args, header)
    rep = metrics.sampled_diversity_report(
        archive, extractor, sample=args.sample, repeats=args.repeats,
        seed=args.seed)
    payload = {
        "records": len(archive),
        "total_evaluations": archive.total_evaluations,
        "sample_size": rep.sample_size,
        "repeats": rep.repeats,
        "used_full_archive": rep.used_full_archive,
        "mean_shannon_nats": rep.mean_shannon,
        "mean_exp_shannon": rep.mean_exp_shannon,
        "mean_geometric_logdet": (None if rep.mean_geometric == metrics.DEGENERATE
                                  else rep.mean_geometric),
        "degenerate_geometric_repeats": rep.degenerate_geometric,
        "seed": rep.seed,
    }
    if args.initial_count is not None:
        payload["improvement_percent"] = improvement_ratio(
            len(archive), args.initial_count)
    (root / "metrics.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    lines = ["metric\tvalue"]
    for key in sorted(payload):
        lines.append(f"{key}\t{payload[key]}")
    (root / "metrics.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    geo = ("degenerate" if rep.mean_geometric == metrics.DEGENERATE
           else f"{rep.mean_geometric:.4f}")
    print(f"{len(archive)} records; Shannon {rep.mean_shannon:.4f} nats "
          f"(e^H {rep.mean_exp_shannon:.2f}); geometric log-det {geo}"
          + (f"; flagged: sample fell back to the full archive"
             if rep.used_full_archive else ""))
    if args.initial_count is not None:
        print(f"improvement over {args.initial_count} initial triggering "
              f"inputs: {payload['improvement_percent']:.1f}%")
    return 0


def _truth_for(args, archive, header) -> dict:
    if args.labels:
        return persist.read_truth_labels(args.labels)
    if args.testbed_truth:
        cfg_dict = header.get("config", {})
        tb = TestbedConfig(
            side=cfg_dict.get("testbed_side", 16),
            spread=cfg_dict.get("testbed_spread", 2.0),
            threshold_a=cfg_dict.get("testbed_threshold_a"),
            threshold_b=cfg_dict.get("testbed_threshold_b"),
            threshold_truth=cfg_dict.get("testbed_threshold_truth"),
            tau=cfg_dict.get("testbed_tau", 2.0),
        )
        return {rec.record_id: modelhub.testbed_truth(rec.latent, tb)
                for rec in archive.records}
    raise CliError("pass --labels FILE or --testbed-truth")


def cmd_select_train(args) -> int:
    root = Path(args.archive)
    archive, header, _ = persist.load_archive(root)
    truth = _truth_for(args, archive, header)
    extractor = _extractor_for(args, header)
    dataset = build_selection_dataset(archive, truth, extractor)
    examples = dataset.examples
    if args.limit and args.limit < len(examples):
        rng = np.random.default_rng(args.seed)
        idx = rng.permutation(len(examples))[:args.limit]
        examples = [examples[i] for i in sorted(idx)]
    selector = train_selector(examples, k=args.k, seed=args.seed)
    persist.save_selector(selector, args.out)
    print(f"trained on {len(examples)} examples "
          f"(dropped {dataset.n_both_wrong} where neither model was right); "
          f"selector written to {args.out}")
    return 0


def cmd_select_eval(args) -> int:
    root = Path(args.archive)
    archive, header, _ = persist.load_archive(root)
    truth = _truth_for(args, archive, header)
    extractor = _extractor_for(args, header)
    selector = persist.load_selector(args.selector)
    dataset = build_selection_dataset(archive, truth, extractor)
    holdout = dataset.examples
    if not args.include_train:
        trained = set(selector.train_record_ids)
        holdout = [ex for ex in holdout if ex.record_id not in trained]
    if args.limit and args.limit < len(holdout):
        rng = np.random.default_rng(args.seed)
        idx = rng.permutation(len(holdout))[:args.limit]
        holdout = [holdout[i] for i in sorted(idx)]
    if not holdout:
        raise CliError("holdout is empty after excluding training records")
    acc = eval_selector(selector, holdout)
    base = majority_baseline(holdout)
    payload = {"accuracy": acc, "majority_baseline": base,
               "holdout_size": len(holdout),
               "dropped_both_wrong": dataset.n_both_wrong}
    out = Path(args.out) if args.out else root / "selector_eval.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    print(f"selector accuracy {acc:.4f} on {len(holdout)} examples "
          f"(majority baseline {base:.4f})")
    return 0


def cmd_report(args) -> int:
    root = Path(args.archive)
    archive, header, _ = persist.load_archive(root)
    report.write_generation_table(archive, root / "report.tsv")
    figures = report.render_figures(archive, root / "figures")
    print(f"wrote {root / 'report.tsv'} and "
          f"{', '.join(str(f) for f in figures)}")
    return 0


def _add_generate_parser(sub):
    p = sub.add_parser("generate", help="run the search and write an archive")
    p.add_argument("--out", default=os.environ.get("LATENTDIFF_OUT_DIR"),
                   help="output directory (env LATENTDIFF_OUT_DIR)")
    p.add_argument("--testbed", action="store_true",
                   help="use the built-in synthetic testbed for all roles")
    p.add_argument("--generator", default=None, help="PFN generator directory")
    p.add_argument("--model-a", default=None, help="PFN classifier A directory")
    p.add_argument("--model-b", default=None, help="PFN classifier B directory")
    p.add_argument("--discriminator", default=None,
                   help="PFN discriminator directory (optional)")
    p.add_argument("--extractor", default=None,
                   help="PFN feature extractor directory (optional)")
    p.add_argument("--budget-evals", type=int, default=None)
    p.add_argument("--budget-seconds", type=float, default=None)
    p.add_argument("--population", type=int, default=100)
    p.add_argument("--latent-dim", type=int, default=100)
    p.add_argument("--crossover-rate", type=float, default=0.9)
    p.add_argument("--mutation-rate", type=float, default=0.1)
    p.add_argument("--mutation-gene-prob", type=float, default=None,
                   help="per-gene mutation probability inside a mutated "
                        "offspring (default 1/latent-dim)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("LATENTDIFF_WORKERS", "1")))
    p.add_argument("--testbed-side", type=int, default=16)
    p.add_argument("--testbed-spread", type=float, default=2.0)
    p.add_argument("--testbed-threshold-a", type=float, default=None)
    p.add_argument("--testbed-threshold-b", type=float, default=None)
    p.add_argument("--testbed-threshold-truth", type=float, default=None)
    p.add_argument("--testbed-tau", type=float, default=2.0)


def _campaign_from_args(args) -> CampaignConfig:
    if not args.out:
        raise CliError("pass --out or set LATENTDIFF_OUT_DIR")
    if args.testbed:
        roles = dict(generator="testbed", model_a="testbed", model_b="testbed",
                     discriminator="testbed", extractor="testbed")
    else:
        missing = [n for n, v in (("--generator", args.generator),
                                  ("--model-a", args.model_a),
                                  ("--model-b", args.model_b)) if not v]
        if missing:
            raise CliError(f"pass --testbed or {', '.join(missing)}")
        roles = dict(generator=args.generator, model_a=args.model_a,
                     model_b=args.model_b, discriminator=args.discriminator,
                     extractor=args.extractor)
    return CampaignConfig(
        out_dir=args.out,
        population=args.population,
        latent_dim=args.latent_dim,
        crossover_rate=args.crossover_rate,
        mutation_rate=args.mutation_rate,
        mutation_gene_prob=args.mutation_gene_prob,
        budget_evals=args.budget_evals,
        budget_seconds=args.budget_seconds,
        seed=args.seed,
        repetitions=args.repetitions,
        workers=args.workers,
        testbed_side=args.testbed_side,
        testbed_spread=args.testbed_spread,
        testbed_threshold_a=args.testbed_threshold_a,
        testbed_threshold_b=args.testbed_threshold_b,
        testbed_threshold_truth=args.testbed_threshold_truth,
        testbed_tau=args.testbed_tau,
        **roles,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentdiff",
        description="differential testing by latent-space search")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_generate_parser(sub)

    p = sub.add_parser("filter", help="dedup + discriminator + SSIM filter")
    p.add_argument("--archive", required=True)
    p.add_argument("--refs", default=None,
                   help="directory of reference images for the SSIM stage")
    p.add_argument("--discriminator", default=None,
                   help="'testbed' or a PFN directory; defaults to the "
                        "discriminator recorded in the manifest")
    p.add_argument("--disc-threshold", type=float, default=0.5)
    p.add_argument("--ssim-threshold", type=float, default=0.40)
    p.add_argument("--no-discriminator", action="store_true")
    p.add_argument("--no-ssim", action="store_true")

    p = sub.add_parser("dedup", help="merge archives, dropping byte duplicates")
    p.add_argument("--archives", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("metrics", help="diversity and count metrics")
    p.add_argument("--archive", required=True)
    p.add_argument("--extractor", default=None)
    p.add_argument("--sample", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial-count", type=int, default=None,
                   help="triggering inputs already present in the test set, "
                        "for the improvement ratio")

    p = sub.add_parser("select", help="model-selection harness")
    sel_sub = p.add_subparsers(dest="select_command", required=True)
    pt = sel_sub.add_parser("train", help="build dataset and train a selector")
    pt.add_argument("--archive", required=True)
    pt.add_argument("--labels", default=None, help="record_id<TAB>label file")
    pt.add_argument("--testbed-truth", action="store_true",
                    help="derive truth labels from the testbed's exact rule")
    pt.add_argument("--extractor", default=None)
    pt.add_argument("--out", required=True)
    pt.add_argument("--limit", type=int, default=None)
    pt.add_argument("--k", type=int, default=5)
    pt.add_argument("--seed", type=int, default=0)
    pe = sel_sub.add_parser("eval", help="evaluate a trained selector")
    pe.add_argument("--archive", required=True)
    pe.add_argument("--labels", default=None)
    pe.add_argument("--testbed-truth", action="store_true")
    pe.add_argument("--extractor", default=None)
    pe.add_argument("--selector", required=True)
    pe.add_argument("--out", default=None)
    pe.add_argument("--limit", type=int, default=None)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--include-train", action="store_true")

    p = sub.add_parser("report", help="figures and per-generation table")
    p.add_argument("--archive", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(_campaign_from_args(args))
        if args.command == "filter":
            return cmd_filter(args)
        if args.command == "dedup":
            return cmd_dedup(args)
        if args.command == "metrics":
            return cmd_metrics(args)
        if args.command == "select":
            if args.select_command == "train":
                return cmd_select_train(args)
            return cmd_select_eval(args)
        if args.command == "report":
            return cmd_report(args)
        raise CliError(f"unknown command {args.command}")
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
