"""Command-line entry point: ``secsigan <command> [options]``.

Every command writes into ``<out>/runs/<run_id>/``: the merged configuration
(``run.json``: parameters, seed, content hashes of the config and input
files, library versions), a structured ``log.jsonl`` and its artifacts.

Parameters come from built-in defaults, then the ``--config`` JSON document,
then explicit flags. Exit codes: 0 success, 1 runtime failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import __version__

log = logging.getLogger("secsigan")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags or configuration values (exit code 2)."""


def git_blob_hash(data: bytes) -> str:
    """Content hash in the same form git uses for blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()


class RunContext:
    """Owns one run directory and its structured log."""

    def __init__(self, command: str, params: dict, seed: int, out: Path, run_id: str | None):
        self.command = command
        self.params = params
        self.seed = seed
        self.run_id = run_id or f"{command}-{time.strftime('%Y%m%d-%H%M%S')}-s{seed}"
        self.dir = Path(out) / "runs" / self.run_id
        self.dir.mkdir(parents=True, exist_ok=True)
        self._log = (self.dir / "log.jsonl").open("a")

    def write_config(self, inputs: list[str]) -> Path:
        hashes = {}
        for p in inputs:
            path = Path(p)
            if path.is_file():
                hashes[str(path)] = git_blob_hash(path.read_bytes())
        doc = {
            "command": self.command,
            "run_id": self.run_id,
            "seed": self.seed,
            "params": self.params,
            "config_hash": git_blob_hash(canonical_json(self.params)),
            "input_hashes": hashes,
            "versions": {
                "secsigan": __version__,
                "python": platform.python_version(),
                "torch": torch.__version__,
                "numpy": np.__version__,
            },
            "argv": sys.argv[1:],
        }
        path = self.dir / "run.json"
        path.write_text(json.dumps(doc, indent=2, default=str))
        return path

    def event(self, name: str, **fields) -> None:
        rec = {"time": time.time(), "event": name, **fields}
        self._log.write(json.dumps(rec, default=str) + "\n")
        self._log.flush()
        log.info("%s %s", name, json.dumps(fields, default=str))

    def close(self) -> None:
        self._log.close()


# --------------------------------------------------------------------------- helpers


def _load_manifest(path):
    from .dataio import load_manifest

    if not path:
        raise UsageError("--manifest is required")
    return load_manifest(path)


def _load_split(manifest, path):
    from .dataio import SplitSpec

    if not path:
        raise UsageError("--split is required")
    return SplitSpec.from_json(path, manifest)


def _experiment_config(params: dict):
    from .experiments import ExperimentConfig, desk_scale_config

    scale = params.get("scale", "full")
    if scale not in ("full", "desk"):
        raise UsageError(f"scale must be full or desk, got {scale!r}")
    base = desk_scale_config(int(params.get("image_size") or 32)) if scale == "desk" else ExperimentConfig()
    doc = base.to_dict()
    for key in ("classifier", "train", "gan_train", "gan_arch"):
        doc[key].update(params.get(key, {}))
    if "secsigan_pseudo_label_input" in params:
        doc["secsigan_pseudo_label_input"] = params["secsigan_pseudo_label_input"]
    if params.get("image_size") and scale == "full":
        doc["gan_train"]["image_size"] = [int(params["image_size"])] * 2
    if params.get("epochs") is not None:
        doc["gan_train"]["epochs"] = int(params["epochs"])
    if params.get("classifier_epochs") is not None:
        doc["train"]["epochs"] = int(params["classifier_epochs"])
    try:
        return ExperimentConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid experiment config: {exc}") from None


def _size(cfg) -> tuple[int, int]:
    return tuple(cfg.gan_train.image_size)


def _experiment_data(params, cfg):
    from .experiments import ExperimentData

    manifest = _load_manifest(params.get("manifest"))
    split = _load_split(manifest, params.get("split"))
    return ExperimentData.from_split(split, _size(cfg))


def _gan(path):
    from .csigan import load_gan

    if not path or not (Path(path) / "config.json").is_file():
        raise FileNotFoundError(f"GAN checkpoint not found: {path!r}")
    return load_gan(path)[0]


def _classifier(path):
    from .classify import load_classifier

    if not path or not (Path(path) / "config.json").is_file():
        raise FileNotFoundError(f"classifier checkpoint not found: {path!r}")
    return load_classifier(path)


def _records_images(records, size, value_range):
    from .dataio import load_images

    return load_images(records, size, value_range)


def _report_dict(reports: dict) -> dict:
    return {k: v.to_dict() for k, v in reports.items()}


# --------------------------------------------------------------------------- commands


def cmd_prepare_data(ctx: RunContext, p: dict) -> dict:
    from .dataio import compose_gan_dataset, load_manifest, save_manifest
    from .synthetic import BenchmarkSpec, channel_swap_benchmark, tissue_benchmark

    out = ctx.dir / "manifest.csv"
    if p.get("synthetic") == "tissue":
        spec = BenchmarkSpec(**p.get("benchmark", {}))
        manifest = tissue_benchmark(ctx.dir / "images", spec, seed=ctx.seed)
    elif p.get("synthetic") == "channel-swap":
        manifest = channel_swap_benchmark(ctx.dir / "images", **p.get("benchmark", {"n_a": 100, "n_b": 100, "size": 64}), seed=ctx.seed)
    elif p.get("manifests"):
        parts = [load_manifest(m) for m in p["manifests"]]
        comp = p.get("composition") or "CUSTOM"
        if comp == "CUSTOM":
            from .dataio import DatasetManifest

            manifest = DatasetManifest([r for part in parts for r in part.records])
        else:
            manifest = compose_gan_dataset(parts, comp)
    else:
        raise UsageError("pass --synthetic {tissue,channel-swap} or --manifests")
    save_manifest(manifest, out)
    info = {"manifest": str(out), "records": len(manifest), "domain_counts": manifest.domain_counts(), **manifest.metadata}
    (ctx.dir / "counts.json").write_text(json.dumps(info, indent=2, default=str))
    return info


def cmd_split(ctx: RunContext, p: dict) -> dict:
    from .dataio import split_holdout

    manifest = _load_manifest(p.get("manifest"))
    split = split_holdout(manifest, int(p.get("n_test_patients", 4)), float(p.get("ratio", 0.75)), seed=ctx.seed)
    path = split.to_json(ctx.dir / "split.json")
    return {"split": str(path), "test_patients": split.test_patients, "sizes": {k: len(v) for k, v in split.to_dict().items() if isinstance(v, list) and k != "test_patients"}}


def cmd_train_gan(ctx: RunContext, p: dict) -> dict:
    from .csigan import fit_gan, init_gan
    from .dataio import DomainTag, ValueRange
    from .experiments import derive_seed

    cfg = _experiment_config(p)
    manifest = _load_manifest(p.get("manifest"))
    records = _load_split(manifest, p["split"]).train_records if p.get("split") else manifest.records
    recs_a = [r for r in records if r.domain is DomainTag.WLI]
    recs_b = [r for r in records if r.domain is DomainTag.NBI]
    if not recs_a or not recs_b:
        raise UsageError("GAN training needs WLI and NBI records")
    seed = derive_seed(ctx.seed, "gan")
    gcfg = replace(cfg.gan_train, seed=seed)
    x_a = _records_images(recs_a, _size(cfg), ValueRange.SYMMETRIC)
    x_b = _records_images(recs_b, _size(cfg), ValueRange.SYMMETRIC)
    gan = init_gan(cfg.gan_arch, seed, gcfg.gan_loss_mode)
    ckpt = ctx.dir / "gan"
    _, history = fit_gan(gan, x_a, x_b, gcfg, ckpt, on_epoch=lambda e, row: ctx.event("gan_epoch", **row))
    return {"checkpoint": str(ckpt), "final": history.epochs[-1] if history.epochs else {}}


def cmd_translate(ctx: RunContext, p: dict) -> dict:
    from .csigan import translate_batch
    from .dataio import DomainTag, ValueRange, save_image

    gan = _gan(p.get("gan"))
    manifest = _load_manifest(p.get("manifest"))
    size = (int(p["image_size"]),) * 2 if p.get("image_size") else _gan_size(p["gan"])
    out_dir = ctx.dir / "translations"
    rows = []
    for domain in DomainTag:
        recs = [r for r in manifest.records if r.domain is domain]
        if not recs:
            continue
        x = _records_images(recs, size, ValueRange.SYMMETRIC)
        trans, rec = translate_batch(gan, x, domain)
        for r, t, rr in zip(recs, trans, rec):
            stem = Path(r.image_path).stem
            tp = save_image(t.permute(1, 2, 0).numpy(), out_dir / domain.value / f"{stem}_translated.png", ValueRange.SYMMETRIC)
            rp = save_image(rr.permute(1, 2, 0).numpy(), out_dir / domain.value / f"{stem}_reconstructed.png", ValueRange.SYMMETRIC)
            rows.append([r.image_path, str(tp), str(rp), domain.value])
    with (ctx.dir / "triples.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["original", "translated", "reconstructed", "origin_domain"])
        w.writerows(rows)
    return {"triples": str(ctx.dir / "triples.csv"), "count": len(rows)}


def _gan_size(path) -> tuple[int, int]:
    doc = json.loads((Path(path) / "config.json").read_text())
    return tuple(doc.get("image_size", (256, 256)))


def cmd_train_teacher(ctx: RunContext, p: dict) -> dict:
    from .classify import save_classifier
    from .evaluate import per_domain_report
    from .classify import predict
    from .experiments import derive_seed, train_baseline

    cfg = _experiment_config(p)
    data = _experiment_data(p, cfg)
    seed = derive_seed(ctx.seed, "teacher")
    model, hist = train_baseline(data, cfg, seed)
    save_classifier(model, ctx.dir / "teacher", replace(cfg.train, seed=seed), hist)
    reports = per_domain_report(predict(model, None, data.test).numpy(), data.test.labels.numpy(), data.test.domain_tags)
    (ctx.dir / "metrics.json").write_text(json.dumps(_report_dict(reports), indent=2))
    return {"checkpoint": str(ctx.dir / "teacher"), "best_epoch": hist.best_epoch, "test_accuracy": {k: v.accuracy for k, v in reports.items()}}


def cmd_train_student(ctx: RunContext, p: dict) -> dict:
    from .classify import init_classifier, predict, save_classifier, train_student_semisup
    from .evaluate import per_domain_report
    from .experiments import derive_seed

    gan = _gan(p.get("gan"))
    teacher = _classifier(p.get("teacher"))
    cfg = _experiment_config(p)
    data = _experiment_data(p, cfg)
    seed = derive_seed(ctx.seed, "student")
    tc = replace(cfg.train, seed=seed, pseudo_label_input=p.get("pseudo_label_input", cfg.secsigan_pseudo_label_input))
    student = init_classifier(cfg.classifier, seed, multi_input=True)
    student, hist = train_student_semisup(student, teacher, gan, data.labeled, data.unlabeled, data.val, tc)
    save_classifier(student, ctx.dir / "student", tc, hist)
    reports = per_domain_report(predict(student, gan, data.test).numpy(), data.test.labels.numpy(), data.test.domain_tags)
    (ctx.dir / "metrics.json").write_text(json.dumps(_report_dict(reports), indent=2))
    return {"checkpoint": str(ctx.dir / "student"), "n_pseudo": hist.metadata.get("n_pseudo"), "test_accuracy": {k: v.accuracy for k, v in reports.items()}}


def _image_source(path, size):
    """Unit-range images from a manifest CSV or a directory of PNG/JPEG files."""
    from .dataio import ImageRecord, DomainTag, TissueClass, ValueRange

    path = Path(path)
    if path.is_dir():
        files = sorted(f for f in path.rglob("*") if f.suffix.lower() in (".png", ".jpg", ".jpeg"))
        records = [ImageRecord(str(f), "", DomainTag.NBI, TissueClass.UNLABELED) for f in files]
    else:
        records = _load_manifest(path).records
    if len(records) < 2:
        raise UsageError(f"{path}: need at least 2 images")
    return _records_images(records, size, ValueRange.UNIT)


def cmd_eval_fid(ctx: RunContext, p: dict) -> dict:
    from .evaluate import extract_features, fid

    if not p.get("real") or not p.get("generated"):
        raise UsageError("--real and --generated are required")
    size = (int(p.get("image_size") or 64),) * 2
    extractor = p.get("extractor", "toy")
    real = extract_features(_image_source(p["real"], size), extractor)
    gen = extract_features(_image_source(p["generated"], size), extractor)
    value = fid(real.stats, gen.stats)
    out = {"fid": value, "extractor": extractor, "n_real": len(real.features), "n_generated": len(gen.features)}
    (ctx.dir / "fid.json").write_text(json.dumps(out, indent=2))
    return out


def cmd_eval_sensitivity(ctx: RunContext, p: dict) -> dict:
    from .dataio import ValueRange
    from .evaluate import DEFAULT_SIGMAS, curve_auc, sensitivity_curve
    from .experiments import derive_seed

    gan = _gan(p.get("gan"))
    manifest = _load_manifest(p.get("manifest"))
    size = _gan_size(p["gan"])
    images = _records_images(manifest.records, size, ValueRange.SYMMETRIC)
    sigmas = [float(s) for s in (p.get("sigmas") or DEFAULT_SIGMAS)]
    curve = sensitivity_curve(gan, images, [r.domain for r in manifest.records], sigmas, seed=derive_seed(ctx.seed, "noise"))
    curve.to_csv(ctx.dir / "sensitivity.csv")
    out = {"points": curve.points, "auc": curve_auc(curve) if len(sigmas) > 1 else None, "value_range": "symmetric"}
    (ctx.dir / "sensitivity.json").write_text(json.dumps(out, indent=2))
    return out


def _read_predictions(path) -> dict[str, np.ndarray | str]:
    from .dataio import CLASSES

    names = [c.value for c in CLASSES]
    out = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "image_path" not in cols:
            raise UsageError("predictions CSV needs an image_path column")
        for row in reader:
            if all(n in cols for n in names):
                out[row["image_path"]] = np.array([float(row[n]) for n in names])
            elif "predicted" in cols:
                out[row["image_path"]] = row["predicted"]
            else:
                raise UsageError("predictions CSV needs HGC,LGC,NTL,NST probability columns or a predicted column")
    return out


def cmd_eval_classifier(ctx: RunContext, p: dict) -> dict:
    from .classify import ClassPrediction, ImageSet, predict
    from .dataio import CLASS_INDEX, DomainTag, TissueClass
    from .evaluate import per_domain_report

    average = p.get("average", "macro")
    if p.get("predictions"):
        if not p.get("truth"):
            raise UsageError("--truth is required with --predictions")
        preds = _read_predictions(p["predictions"])
        truth, domains, pred_list = [], [], []
        with Path(p["truth"]).open(newline="") as fh:
            for row in csv.DictReader(fh):
                if row["image_path"] not in preds:
                    raise UsageError(f"no prediction for {row['image_path']}")
                truth.append(TissueClass(row["tissue_class"]))
                domains.append(DomainTag(row.get("domain") or "WLI"))
                v = preds[row["image_path"]]
                pred_list.append(ClassPrediction(v) if isinstance(v, np.ndarray) else CLASS_INDEX[TissueClass(v)])
        reports = per_domain_report(pred_list, truth, domains, average)
    else:
        model = _classifier(p.get("model"))
        gan = _gan(p["gan"]) if p.get("gan") else None
        cfg = _experiment_config(p)
        manifest = _load_manifest(p.get("manifest"))
        split = _load_split(manifest, p.get("split"))
        test = ImageSet.from_records([r for r in split.test_records if r.labeled], _size(cfg))
        probs = predict(model, gan, test)
        reports = per_domain_report(probs.numpy(), test.labels.numpy(), test.domain_tags, average)
    doc = _report_dict(reports)
    (ctx.dir / "metrics.json").write_text(json.dumps(doc, indent=2))
    return {k: {"accuracy": v["accuracy"], "f1": v["f1"]} for k, v in doc.items()}


def cmd_survey_gen(ctx: RunContext, p: dict) -> dict:
    from .dataio import DomainTag
    from .surveykit import gen_classification_task, gen_realfake_task, load_pair_candidates

    task = p.get("task")
    if task == "realfake":
        if not p.get("real") or not p.get("generated"):
            raise UsageError("realfake needs --real and --generated manifests")
        real = _load_manifest(p["real"])
        gen = _load_manifest(p["generated"])
        pools = [{d: [r.image_path for r in m.records if r.domain is d] for d in DomainTag} for m in (real, gen)]
        manifest = gen_realfake_task(pools[0], pools[1], seed=ctx.seed)
    elif task == "classify":
        if not p.get("pairs"):
            raise UsageError("classify needs --pairs")
        manifest = gen_classification_task(load_pair_candidates(p["pairs"]), seed=ctx.seed)
    else:
        raise UsageError("--task must be realfake or classify")
    paths = manifest.write(ctx.dir / "survey")
    return {k: str(v) for k, v in paths.items()} | {"items": len(manifest)}


def cmd_survey_score(ctx: RunContext, p: dict) -> dict:
    from .surveykit import load_key, load_response_sheet, load_survey, score_responses

    if not p.get("survey") or not p.get("sheets"):
        raise UsageError("--survey and --sheets are required")
    manifest = load_survey(p["survey"])
    key = load_key(p["key"]) if p.get("key") else None
    sheets = [load_response_sheet(s) for s in p["sheets"]]
    report = score_responses(manifest, key, sheets)
    report.to_json(ctx.dir / "survey_report.json")
    return {"respondents": len(sheets), "groups": sorted(report.groups), "warnings": report.warnings}


def cmd_preset(ctx: RunContext, p: dict) -> dict:
    from .classify import load_classifier, save_classifier
    from .csigan import load_gan
    from .experiments import NEEDS_GAN, NEEDS_TEACHER, PRESETS, derive_seed, run_preset, train_baseline, train_gan_for

    name = p.get("name")
    if name not in PRESETS:
        raise UsageError(f"preset must be one of {PRESETS}")
    cfg = _experiment_config(p)
    data = _experiment_data(p, cfg)
    chain = bool(p.get("chain"))
    gan = teacher = None
    if name in NEEDS_GAN:
        if p.get("gan"):
            gan = _gan(p["gan"])
        elif chain:
            ctx.event("chain", step="train-gan")
            gan = train_gan_for(data, cfg, derive_seed(ctx.seed, "gan"), ctx.dir / "gan")
        else:
            raise FileNotFoundError(f"preset {name} needs --gan (or --chain to train one)")
    if name in NEEDS_TEACHER:
        if p.get("teacher"):
            teacher = _classifier(p["teacher"])
        elif chain:
            ctx.event("chain", step="train-teacher")
            seed_t = derive_seed(ctx.seed, "teacher")
            teacher, hist = train_baseline(data, cfg, seed_t)
            save_classifier(teacher, ctx.dir / "teacher", replace(cfg.train, seed=seed_t), hist)
        else:
            raise FileNotFoundError(f"preset {name} needs --teacher (or --chain to train one)")
    model, result = run_preset(name, data, cfg, derive_seed(ctx.seed, "classifier"), gan=gan, teacher=teacher)
    save_classifier(model, ctx.dir / "model", history=None)
    (ctx.dir / "report.json").write_text(json.dumps(result.to_dict(), indent=2))
    return {k: {"accuracy": v["accuracy"], "f1": v["f1"]} for k, v in result.reports.items()}


def cmd_ablation_suite(ctx: RunContext, p: dict) -> dict:
    from .experiments import PRESETS, ablation_suite, derive_seed

    cfg = _experiment_config(p)
    data = _experiment_data(p, cfg)
    presets = p.get("presets") or list(PRESETS)
    n_seeds = int(p.get("seeds", 10))
    if n_seeds < 1:
        raise UsageError("--seeds must be >= 1")
    seeds = [derive_seed(ctx.seed, f"seed{i}") for i in range(n_seeds)]
    gan = _gan(p["gan"]) if p.get("gan") else None
    table = ablation_suite(
        data,
        cfg,
        presets,
        seeds,
        gan=gan,
        gan_seed=derive_seed(ctx.seed, "gan"),
        on_result=lambda r: ctx.event("preset_done", preset=r.preset, seed=r.seed, accuracy={k: v["accuracy"] for k, v in r.reports.items()}),
    )
    table.to_json(ctx.dir / "ablation.json")
    table.to_csv(ctx.dir / "ablation.csv")
    summ = table.summary()
    return {pr: {c: round(summ[pr][c]["mean"], 4) for c in ("Accuracy_ALL", "Accuracy_WLI", "Accuracy_NBI")} for pr in table.presets}


COMMANDS: dict[str, Callable[[RunContext, dict], dict]] = {
    "prepare-data": cmd_prepare_data,
    "split": cmd_split,
    "train-gan": cmd_train_gan,
    "translate": cmd_translate,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "eval-fid": cmd_eval_fid,
    "eval-sensitivity": cmd_eval_sensitivity,
    "eval-classifier": cmd_eval_classifier,
    "survey-gen": cmd_survey_gen,
    "survey-score": cmd_survey_score,
    "preset": cmd_preset,
    "ablation-suite": cmd_ablation_suite,
}

# files whose content hashes go into run.json
_INPUT_KEYS = ("manifest", "split", "real", "generated", "pairs", "predictions", "truth", "config")


# --------------------------------------------------------------------------- parser


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON config document; flags override its values")
    parser.add_argument("--seed", type=int, default=d if suppress else 0, help="root seed (default 0)")
    parser.add_argument("--run-id", default=d, help="run directory name under <out>/runs/")
    parser.add_argument("--out", default=d if suppress else ".", help="output root (default .)")
    parser.add_argument("-v", "--verbose", action="store_true", default=d if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secsigan", description="Cycle GAN with SSIM loss and semi-supervised multi-input classification.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    S = argparse.SUPPRESS

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        return sp

    def data_flags(sp, split=True):
        sp.add_argument("--manifest", default=S)
        if split:
            sp.add_argument("--split", default=S)

    def scale_flags(sp):
        sp.add_argument("--scale", choices=("full", "desk"), default=S, help="full-size defaults or desk-scale toy models")
        sp.add_argument("--image-size", type=int, default=S)

    sp = add("prepare-data", "write a manifest (synthetic benchmark or composition of manifests)")
    sp.add_argument("--synthetic", choices=("tissue", "channel-swap"), default=S)
    sp.add_argument("--manifests", nargs="+", default=S)
    sp.add_argument("--composition", choices=("D1", "D2", "D3", "CUSTOM"), default=S)

    sp = add("split", "patient-level hold-out split")
    data_flags(sp, split=False)
    sp.add_argument("--n-test-patients", type=int, default=S)
    sp.add_argument("--ratio", type=float, default=S)

    sp = add("train-gan", "train the cycle GAN with similarity loss")
    data_flags(sp)
    scale_flags(sp)
    sp.add_argument("--epochs", type=int, default=S)

    sp = add("translate", "write translations and reconstructions for a manifest")
    data_flags(sp, split=False)
    sp.add_argument("--gan", default=S)
    sp.add_argument("--image-size", type=int, default=S)

    sp = add("train-teacher", "train the supervised WLI teacher")
    data_flags(sp)
    scale_flags(sp)
    sp.add_argument("--classifier-epochs", type=int, default=S)

    sp = add("train-student", "train the semi-supervised three-branch student")
    data_flags(sp)
    scale_flags(sp)
    sp.add_argument("--gan", default=S)
    sp.add_argument("--teacher", default=S)
    sp.add_argument("--classifier-epochs", type=int, default=S)
    sp.add_argument("--pseudo-label-input", choices=("original", "labeled_domain_view"), default=S)

    sp = add("eval-fid", "Frechet distance between two image sets")
    sp.add_argument("--real", default=S)
    sp.add_argument("--generated", default=S)
    sp.add_argument("--extractor", choices=("toy", "inception"), default=S)
    sp.add_argument("--image-size", type=int, default=S)

    sp = add("eval-sensitivity", "noise-sensitivity curve of a GAN")
    data_flags(sp, split=False)
    sp.add_argument("--gan", default=S)
    sp.add_argument("--sigmas", type=float, nargs="+", default=S)

    sp = add("eval-classifier", "classification metrics from predictions or a checkpoint")
    sp.add_argument("--predictions", default=S)
    sp.add_argument("--truth", default=S)
    sp.add_argument("--model", default=S)
    sp.add_argument("--gan", default=S)
    sp.add_argument("--average", choices=("macro", "weighted"), default=S)
    data_flags(sp)
    scale_flags(sp)

    sp = add("survey-gen", "generate a specialist survey manifest and hidden key")
    sp.add_argument("--task", choices=("realfake", "classify"), default=S)
    sp.add_argument("--real", default=S)
    sp.add_argument("--generated", default=S)
    sp.add_argument("--pairs", default=S)

    sp = add("survey-score", "score response sheets against a survey key")
    sp.add_argument("--survey", default=S, help="directory written by survey-gen")
    sp.add_argument("--key", default=S)
    sp.add_argument("--sheets", nargs="+", default=S)

    sp = add("preset", "train and evaluate one ablation preset")
    sp.add_argument("name")
    data_flags(sp)
    scale_flags(sp)
    sp.add_argument("--gan", default=S)
    sp.add_argument("--teacher", default=S)
    sp.add_argument("--chain", action="store_true", default=S, help="train a missing GAN/teacher first")
    sp.add_argument("--epochs", type=int, default=S)
    sp.add_argument("--classifier-epochs", type=int, default=S)

    sp = add("ablation-suite", "all presets over several seeds with significance tests")
    data_flags(sp)
    scale_flags(sp)
    sp.add_argument("--presets", nargs="+", default=S)
    sp.add_argument("--seeds", type=int, default=S, help="number of seeds (default 10)")
    sp.add_argument("--gan", default=S)
    sp.add_argument("--epochs", type=int, default=S)
    sp.add_argument("--classifier-epochs", type=int, default=S)
    return parser


def _merge_params(args: argparse.Namespace) -> dict:
    params: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        params.update(doc)
    skip = {"command", "config", "seed", "run_id", "out", "verbose"}
    for k, v in vars(args).items():
        if k not in skip:
            params[k] = v
    return params


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    ctx = None
    try:
        params = _merge_params(args)
        ctx = RunContext(args.command, params, args.seed, Path(args.out), args.run_id)
        inputs = [str(params[k]) for k in _INPUT_KEYS if isinstance(params.get(k), str)]
        if args.config:
            inputs.append(args.config)
        ctx.write_config(inputs)
        ctx.event("start", command=args.command, seed=args.seed)
        torch.manual_seed(args.seed)
        result = COMMANDS[args.command](ctx, params)
        (ctx.dir / "result.json").write_text(json.dumps(result, indent=2, default=str))
        ctx.event("done", result=result)
        print(json.dumps({"run_dir": str(ctx.dir), **(result or {})}, indent=2, default=str))
        return EXIT_OK
    except UsageError as exc:
        print(f"secsigan {args.command}: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        if ctx:
            ctx.event("usage_error", message=str(exc))
        return EXIT_USAGE
    except Exception as exc:  # runtime failure: report and leave diagnostics in the run log
        print(f"secsigan {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if ctx:
            ctx.event("failure", error=type(exc).__name__, message=str(exc), traceback=traceback.format_exc())
        return EXIT_RUNTIME
    finally:
        if ctx:
            ctx.close()


if __name__ == "__main__":
    sys.exit(main())
