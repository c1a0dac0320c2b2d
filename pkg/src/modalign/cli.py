"""Command-line entry point.

Each subcommand reads one JSON config (strictly parsed), writes its outputs
under --out, and always leaves a RunReport behind — including on failure,
where the report carries an error section and the exit status is nonzero.
Stage commands check their dependencies by checkpoint digest, not just file
presence, and name the command that produces a missing input.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .align import ProjectionHead, project, save_projection_head, train_alignment
from .checkpoint import digest_params
from .config import (ConfigError, config_snapshot, load_config, pipeline_config,
                     resolve_path, synthetic_spec)
from .data import (Standardizer, class_weight_vector, derive_seed, export_split,
                   load_cohort, load_paired, load_split, save_cohort,
                   stratified_split)
from .gradcheck import run_gradient_suite
from .hpo import (PrunerState, best_config_fragment, default_align_grids,
                  default_mae_space, default_teacher_space, grid_search_align,
                  make_mae_trainer, make_teacher_trainer, random_search,
                  write_trials)
from .inference import infer_fusion, infer_mri_only, infer_speech_only, load_bundle
from .metrics import metric_report, pca_2d, roc_points
from .report import RunReport, update_manifest, write_report
from .speech import (build_speech_stack, encode_speech, finetune_speech,
                     load_speech_stack, pretrain_mae, save_speech_stack)
from .synthetic import generate_synthetic_cohort
from .teacher import (embed_mri, freeze_teacher, load_teacher, save_teacher,
                      teacher_cv_auc, train_teacher)
from . import ablation as ablation_mod
from . import plots

GRADCHECK_TOLERANCE = 1e-4


class DependencyError(RuntimeError):
    """A required input from an earlier command is missing."""


def _require_file(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DependencyError(f"{path} not found; {hint}")
    return path


def _require_checkpoint(path: Path, producer: str) -> Path:
    if not path.with_suffix(".json").exists():
        raise DependencyError(
            f"checkpoint {path}.json not found; run `modalign {producer}` first")
    return path


def _rel(path: Path, out_dir: Path) -> str:
    return path.relative_to(out_dir).as_posix()


def _track(report: RunReport, out_dir: Path, *paths) -> None:
    report.outputs.extend(_rel(Path(p), out_dir) for p in paths)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: dict, out_dir: Path, report: RunReport, args) -> None:
    spec = synthetic_spec(cfg)
    data = generate_synthetic_cohort(spec)
    targets = {
        "unlabeled_speech": (data.unlabeled_speech, "speech"),
        "mri_cohort": (data.mri_cohort, "mri"),
        "paired_speech": (data.paired_cohort, "speech"),
        "paired_mri": (data.paired_cohort, "mri"),
    }
    for key, (cohort, schema) in targets.items():
        path = resolve_path(cfg, key, out_dir)
        save_cohort(cohort, path, schema)
        _track(report, out_dir, path)
        report.metrics[f"rows_{key}"] = len(cohort)
    prov_path = resolve_path(cfg, "unlabeled_speech", out_dir).parent / "provenance.json"
    prov_path.write_text(json.dumps({"spec": spec.to_dict()}, indent=2,
                                    sort_keys=True) + "\n", encoding="utf-8")
    _track(report, out_dir, prov_path)


def cmd_pretrain(cfg: dict, out_dir: Path, report: RunReport, args) -> None:
    pool_path = _require_file(resolve_path(cfg, "unlabeled_speech", out_dir),
                              "run `modalign synth` first or point "
                              "paths.unlabeled_speech at an existing file")
    pc = pipeline_config(cfg)
    pool = load_cohort(pool_path, "speech").feature_matrix("speech")
    stack = build_speech_stack(seed=pc.seed)
    scaler, history = pretrain_mae(pool, stack, pc.mae, seed=pc.seed)

    ckpt = resolve_path(cfg, "checkpoints", out_dir) / "speech_pretrained"
    digest = save_speech_stack(ckpt, stack, scaler, seed=pc.seed, stage="pretrain",
                               training_config=pc.mae.to_dict(),
                               history=history.to_dict())
    report.checkpoints["speech_pretrained"] = digest
    report.metrics["best_epoch"] = history.best_epoch
    report.metrics["best_val_loss"] = min(history.val_loss)
    fig = plots.save_loss_curves(history, out_dir / "figures" / "pretrain_loss.png",
                                 "masked-autoencoder pretraining")
    _track(report, out_dir, ckpt.with_suffix(".json"), ckpt.with_suffix(".bin"), fig)


def cmd_finetune(cfg: dict, out_dir: Path, report: RunReport, args) -> None:
    paired_path = _require_file(resolve_path(cfg, "paired_speech", out_dir),
                                "run `modalign synth` first")
    pc = pipeline_config(cfg)
    paired = load_cohort(paired_path, "speech")

    refs = None
    if pc.pretrain_enabled:
        pre = resolve_path(cfg, "checkpoints", out_dir) / "speech_pretrained"
        if not pre.with_suffix(".json").exists():
            raise DependencyError(
                f"checkpoint {pre}.json not found; run `modalign pretrain` "
                f"first, or set finetune.from_scratch for a random encoder")
        stack, scaler, manifest = load_speech_stack(pre)
        refs = {"pretrained": manifest["blob_sha256"]}
    else:
        pool_path = _require_file(resolve_path(cfg, "unlabeled_speech", out_dir),
                                  "run `modalign synth` first (standardization "
                                  "uses the unlabeled pool)")
        stack = build_speech_stack(seed=pc.seed)
        scaler = Standardizer.fit(load_cohort(pool_path, "speech").feature_matrix("speech"))

    split = stratified_split(paired, fractions=pc.split_fractions, seed=pc.split_seed)
    split_path = resolve_path(cfg, "split", out_dir)
    split_path.parent.mkdir(parents=True, exist_ok=True)
    export_split(split, split_path)

    xs = {p: scaler.transform(paired.feature_matrix("speech", getattr(split, f"{p}_ids")))
          for p in ("train", "val")}
    ys = {p: paired.label_indices(getattr(split, f"{p}_ids")) for p in ("train", "val")}
    history = finetune_speech(stack, xs["train"], ys["train"], xs["val"], ys["val"],
                              class_weight_vector(ys["train"]), pc.finetune,
                              seed=pc.seed)

    ckpt = resolve_path(cfg, "checkpoints", out_dir) / "speech_finetuned"
    digest = save_speech_stack(ckpt, stack, scaler, seed=pc.seed, stage="finetune",
                               training_config=pc.finetune.to_dict(),
                               history=history.to_dict(), frozen=True, refs=refs)
    report.checkpoints["speech_finetuned"] = digest
    report.metrics["best_epoch"] = history.best_epoch
    report.metrics["best_val_auc"] = max(v for v in history.val_metric if v is not None)
    fig = plots.save_loss_curves(history, out_dir / "figures" / "finetune_loss.png",
                                 "speech fine-tuning")
    _track(report, out_dir, split_path, ckpt.with_suffix(".json"),
           ckpt.with_suffix(".bin"), fig)


def cmd_teacher(cfg: dict, out_dir: Path, report: RunReport, args) -> None:
    mri_path = _require_file(resolve_path(cfg, "mri_cohort", out_dir),
                             "run `modalign synth` first")
    pc = pipeline_config(cfg)
    cohort = load_cohort(mri_path, "mri")
    ids = cohort.labeled_ids()
    x = cohort.feature_matrix("mri", ids)
    y = cohort.label_indices(ids)

    if pc.teacher_cv_folds > 1:
        cv = teacher_cv_auc(x, y, pc.teacher_arch, pc.teacher, seed=pc.seed,
                            k=pc.teacher_cv_folds)
        report.metrics["cv_auc_mean"] = float(np.mean(cv))
        report.metrics["cv_auc_std"] = float(np.std(cv))
        report.metrics["cv_auc_folds"] = [float(a) for a in cv]

    teacher, scaler, history = train_teacher(x, y, pc.teacher_arch, pc.teacher,
                                             seed=pc.seed)
    freeze_teacher(teacher)
    ckpt = resolve_path(cfg, "checkpoints", out_dir) / "teacher"
    digest = save_teacher(ckpt, teacher, scaler, seed=pc.seed,
                          training_config=pc.teacher.to_dict(),
                          history=history.to_dict())
    report.checkpoints["teacher"] = digest
    report.metrics["best_epoch"] = history.best_epoch
    report.metrics["best_val_auc"] = max(v for v in history.val_metric if v is not None)
    fig = plots.save_loss_curves(history, out_dir / "figures" / "teacher_loss.png",
                                 "MRI teacher training")
    _track(report, out_dir, ckpt.with_suffix(".json"), ckpt.with_suffix(".bin"), fig)


def cmd_align(cfg: dict, out_dir: Path, report: RunReport, args) -> None:
    ckpt_dir = resolve_path(cfg, "checkpoints", out_dir)
    speech_ckpt = _require_checkpoint(ckpt_dir / "speech_finetuned", "finetune")
    teacher_ckpt = _require_checkpoint(ckpt_dir / "teacher", "teacher")
    split_path = _require_file(resolve_path(cfg, "split", out_dir),
                               "run `modalign finetune` first (it writes the split)")
    paired = load_paired(
        _require_file(resolve_path(cfg, "paired_speech", out_dir),
                      "run `modalign synth` first"),
        _require_file(resolve_path(cfg, "paired_mri", out_dir),
                      "run `modalign synth` first"))
    pc = pipeline_config(cfg)

    stack, speech_scaler, _ = load_speech_stack(speech_ckpt)
    teacher, mri_scaler, teacher_manifest = load_teacher(teacher_ckpt)
    teacher_ref = teacher_manifest["blob_sha256"]
    encoder_ref = digest_params([(p.name, p.value)
                                 for p in stack.encoder.parameters()])
    split = load_split(split_path)

    z = {}
    zm = {}
    ys = {}
    for part in ("train", "val"):
        ids = getattr(split, f"{part}_ids")
        z[part] = encode_speech(stack, speech_scaler.transform(
            paired.feature_matrix("speech", ids)))
        zm[part] = embed_mri(teacher, mri_scaler.transform(
            paired.feature_matrix("mri", ids)))
        ys[part] = paired.label_indices(ids)

    head = ProjectionHead(seed=pc.seed, hidden=pc.head_hidden,
                          dropout_rate=pc.head_dropout)
    history = train_alignment(head, z["train"], zm["train"], z["val"], ys["val"],
                              teacher, pc.align, seed=pc.seed,
                              expected_teacher_digest=teacher_ref, zm_val=zm["val"])

    ckpt = ckpt_dir / "projection_head"
    digest = save_projection_head(ckpt, head, seed=pc.seed,
                                  training_config=pc.align.to_dict(),
                                  history=history.to_dict(),
                                  refs={"teacher": teacher_ref,
                                        "encoder": encoder_ref})
    report.checkpoints["projection_head"] = digest
    report.metrics["best_epoch"] = history.best_epoch
    report.metrics["best_val_auc"] = max(v for v in history.val_metric if v is not None)
    fig = plots.save_loss_curves(history, out_dir / "figures" / "align_loss.png",
                                 "projection-head alignment")
    _track(report, out_dir, ckpt.with_suffix(".json"), ckpt.with_suffix(".bin"), fig)


def _write_pca(path_name: str, embeddings: np.ndarray, ids: list[str],
               labels: np.ndarray, modality: list[str], out_dir: Path,
               report: RunReport) -> None:
    coords, explained, _ = pca_2d(embeddings)
    csv_path = out_dir / "predictions" / f"pca_{path_name}.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("subject_id,pc1,pc2,label,modality\n")
        for sid, (pc1, pc2), lab, mod in zip(ids, coords, labels, modality):
            fh.write(f"{sid},{pc1!r},{pc2!r},{int(lab)},{mod}\n")
    fig = plots.save_pca_scatter(coords, labels, modality, explained,
                                 out_dir / "figures" / f"pca_{path_name}.png",
                                 f"test embeddings ({path_name})")
    _track(report, out_dir, csv_path, fig)


def cmd_eval(cfg: dict, out_dir: Path, report: RunReport, args) -> None:
    path_name = args.path
    ckpt_dir = resolve_path(cfg, "checkpoints", out_dir)
    bundle = load_bundle(
        _require_checkpoint(ckpt_dir / "speech_finetuned", "finetune"),
        _require_checkpoint(ckpt_dir / "teacher", "teacher"),
        _require_checkpoint(ckpt_dir / "projection_head", "align"))
    split = load_split(_require_file(resolve_path(cfg, "split", out_dir),
                                     "run `modalign finetune` first"))

    # the speech-only path must work with the MRI feature file absent
    if path_name == "speech_only":
        cohort = load_cohort(_require_file(resolve_path(cfg, "paired_speech", out_dir),
                                           "run `modalign synth` first"), "speech")
    elif path_name == "mri_only":
        cohort = load_cohort(_require_file(resolve_path(cfg, "paired_mri", out_dir),
                                           "the fusion/MRI paths need the MRI "
                                           "feature file; run `modalign synth` first"),
                             "mri")
    else:
        cohort = load_paired(
            _require_file(resolve_path(cfg, "paired_speech", out_dir),
                          "run `modalign synth` first"),
            _require_file(resolve_path(cfg, "paired_mri", out_dir),
                          "fusion needs the MRI feature file; "
                          "run `modalign synth` first"))

    known = set(cohort.ids())
    missing = [sid for sid in split.test_ids if sid not in known]
    if missing:
        raise ValueError(f"split-file/cohort id mismatch: {len(missing)} test "
                         f"ids missing from the cohort (first: {missing[0]})")

    # strictly the stored test split — train/val ids never scored
    infer = {"speech_only": infer_speech_only, "mri_only": infer_mri_only,
             "fusion": infer_fusion}[path_name]
    preds = infer(bundle, cohort, split.test_ids)
    y = preds.labels
    if np.any(y < 0):
        raise ValueError("test split contains unlabeled subjects")

    rep = metric_report(preds.scores, y,
                        resamples=cfg["evaluation"]["bootstrap_resamples"],
                        level=cfg["evaluation"]["level"],
                        seed=derive_seed(cfg["seed"], f"eval/{path_name}"))
    report.metrics[path_name] = rep.to_dict()

    pred_path = out_dir / "predictions" / f"{path_name}.csv"
    pred_path.parent.mkdir(parents=True, exist_ok=True)
    preds.to_csv(pred_path)
    metrics_path = out_dir / "metrics" / f"{path_name}_metrics.json"
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    metrics_path.write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
    fpr, tpr = roc_points(preds.scores, y)
    fig = plots.save_roc(fpr, tpr, rep.auc, out_dir / "figures" / f"roc_{path_name}.png",
                         f"ROC ({path_name})")
    _track(report, out_dir, pred_path, metrics_path, fig)

    if path_name in ("speech_only", "fusion"):
        x_speech = bundle.speech_scaler.transform(
            cohort.feature_matrix("speech", split.test_ids))
        z_hat = project(bundle.head, encode_speech(bundle.stack, x_speech))
    if path_name == "speech_only":
        _write_pca(path_name, z_hat, split.test_ids, y,
                   ["speech"] * len(split.test_ids), out_dir, report)
    elif path_name == "mri_only":
        z_m = embed_mri(bundle.teacher, bundle.mri_scaler.transform(
            cohort.feature_matrix("mri", split.test_ids)))
        _write_pca(path_name, z_m, split.test_ids, y,
                   ["mri"] * len(split.test_ids), out_dir, report)
    else:
        z_m = embed_mri(bundle.teacher, bundle.mri_scaler.transform(
            cohort.feature_matrix("mri", split.test_ids)))
        _write_pca(path_name, np.vstack([z_hat, z_m]),
                   list(split.test_ids) + list(split.test_ids),
                   np.concatenate([y, y]),
                   ["speech"] * len(split.test_ids) + ["mri"] * len(split.test_ids),
                   out_dir, report)


def cmd_ablate(cfg: dict, out_dir: Path, report: RunReport, args) -> None:
    unlabeled = load_cohort(_require_file(resolve_path(cfg, "unlabeled_speech", out_dir),
                                          "run `modalign synth` first"), "speech")
    mri_cohort = load_cohort(_require_file(resolve_path(cfg, "mri_cohort", out_dir),
                                           "run `modalign synth` first"), "mri")
    paired = load_paired(
        _require_file(resolve_path(cfg, "paired_speech", out_dir),
                      "run `modalign synth` first"),
        _require_file(resolve_path(cfg, "paired_mri", out_dir),
                      "run `modalign synth` first"))
    pc = pipeline_config(cfg)
    rows = ablation_mod.run_all_ablations(pc, unlabeled, mri_cohort, paired)

    table = [r.to_dict() for r in rows]
    json_path = out_dir / "ablation" / "ablation.json"
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(table, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    csv_path = out_dir / "ablation" / "ablation.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("variant,status,speech_auc,fusion_auc,delta_fusion\n")
        for r in table:
            vals = [("" if r[k] is None else repr(float(r[k])))
                    for k in ("speech_auc", "fusion_auc", "delta_fusion")]
            fh.write(f"{r['variant']},{r['status']}," + ",".join(vals) + "\n")
    fig = plots.save_ablation_chart(table, out_dir / "figures" / "ablation.png")
    for r in table:
        report.metrics[r["variant"]] = {k: r[k] for k in
                                        ("status", "speech_auc", "fusion_auc",
                                         "delta_fusion")}
    _track(report, out_dir, json_path, csv_path, fig)
    failed = [r["variant"] for r in table if r["status"] != "ok"]
    if failed:
        raise RuntimeError(f"ablation variants failed: {', '.join(failed)}")


def cmd_hpo(cfg: dict, out_dir: Path, report: RunReport, args) -> None:
    target = args.target
    pc = pipeline_config(cfg)
    hpo_cfg = cfg["hpo"]
    pruner = PrunerState(warmup_epochs=hpo_cfg["warmup_epochs"],
                         min_trials_before_pruning=hpo_cfg["min_trials_before_pruning"])
    search_seed = derive_seed(cfg["seed"], f"hpo/{target}")

    if target == "mae":
        pool_path = _require_file(resolve_path(cfg, "unlabeled_speech", out_dir),
                                  "run `modalign synth` first")
        pool = load_cohort(pool_path, "speech").feature_matrix("speech")
        space = default_mae_space(budget=hpo_cfg["budget"])
        trainer = make_mae_trainer(pool, epochs=hpo_cfg["trial_epochs"])
        best, records = random_search(space, trainer, seed=search_seed, pruner=pruner)
        best_params = best.params
    elif target == "teacher":
        mri_path = _require_file(resolve_path(cfg, "mri_cohort", out_dir),
                                 "run `modalign synth` first")
        cohort = load_cohort(mri_path, "mri")
        ids = cohort.labeled_ids()
        space = default_teacher_space(budget=hpo_cfg["budget"])
        trainer = make_teacher_trainer(cohort.feature_matrix("mri", ids),
                                       cohort.label_indices(ids),
                                       epochs=hpo_cfg["trial_epochs"])
        best, records = random_search(space, trainer, seed=search_seed, pruner=pruner)
        best_params = best.params
    elif target == "align":
        ckpt_dir = resolve_path(cfg, "checkpoints", out_dir)
        stack, speech_scaler, _ = load_speech_stack(
            _require_checkpoint(ckpt_dir / "speech_finetuned", "finetune"))
        teacher, mri_scaler, _ = load_teacher(
            _require_checkpoint(ckpt_dir / "teacher", "teacher"))
        split = load_split(_require_file(resolve_path(cfg, "split", out_dir),
                                         "run `modalign finetune` first"))
        paired = load_paired(
            _require_file(resolve_path(cfg, "paired_speech", out_dir),
                          "run `modalign synth` first"),
            _require_file(resolve_path(cfg, "paired_mri", out_dir),
                          "run `modalign synth` first"))
        z = encode_speech(stack, speech_scaler.transform(
            paired.feature_matrix("speech", split.train_ids)))
        zm = embed_mri(teacher, mri_scaler.transform(
            paired.feature_matrix("mri", split.train_ids)))
        y = paired.label_indices(split.train_ids)
        grids = default_align_grids()
        best_params, records = grid_search_align(
            *grids, z, zm, y, teacher, pc.align, seed=search_seed,
            k=hpo_cfg["cv_folds"], head_hidden=pc.head_hidden,
            head_dropout=pc.head_dropout)
    else:
        raise ValueError(f"unknown hpo target {target!r}")

    trials_path = out_dir / "hpo" / f"{target}_trials.jsonl"
    write_trials(trials_path, records)
    fragment = best_config_fragment(target, best_params)
    best_path = out_dir / "hpo" / f"{target}_best.json"
    best_path.write_text(json.dumps(fragment, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")
    statuses = [r.status for r in records]
    report.metrics["trials"] = len(records)
    report.metrics["completed"] = statuses.count("completed")
    report.metrics["pruned"] = statuses.count("pruned")
    report.metrics["failed"] = statuses.count("failed")
    report.metrics["best_params"] = {k: (list(v) if isinstance(v, tuple) else v)
                                     for k, v in best_params.items()}
    _track(report, out_dir, trials_path, best_path)


def cmd_gradcheck(cfg: dict, out_dir: Path, report: RunReport, args) -> None:
    start = time.perf_counter()
    results = run_gradient_suite(seed=cfg["seed"], probe_count=50)
    elapsed = time.perf_counter() - start
    report.metrics["max_rel_err"] = {k: float(v) for k, v in results.items()}
    report.metrics["elapsed_s"] = 0.0 if args.serial else elapsed
    worst = max(results.values())
    if worst >= GRADCHECK_TOLERANCE:
        raise RuntimeError(f"gradient check failed: worst relative error "
                           f"{worst:.3e} >= {GRADCHECK_TOLERANCE}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


_COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "teacher": cmd_teacher,
    "align": cmd_align,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "hpo": cmd_hpo,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalign",
        description="cross-modal alignment pipeline: train, evaluate, search")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--serial", action="store_true",
                       help="bit-reproducible mode (zeroes timings in reports)")
        p.add_argument("--small", action="store_true",
                       help="small synthetic profile")
        p.add_argument("--out", default="runs", help="output directory")
        if name == "eval":
            p.add_argument("--path", required=True,
                           choices=["speech_only", "mri_only", "fusion"])
        if name == "hpo":
            p.add_argument("--target", required=True,
                           choices=["mae", "teacher", "align"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    command = args.command
    if command == "eval":
        command = f"eval_{args.path}"
    elif command == "hpo":
        command = f"hpo_{args.target}"

    start = time.perf_counter()
    try:
        cfg = load_config(args.config, seed=args.seed,
                          profile="small" if args.small else None)
    except ConfigError as exc:
        report = RunReport(command=command, config={}, version=__version__).fail(exc)
    else:
        report = RunReport(command=command, config=config_snapshot(cfg),
                           version=__version__)
        try:
            _COMMANDS[args.command](cfg, out_dir, report, args)
        except Exception as exc:  # report the failure, then exit nonzero
            report.fail(exc)
    report.wall_time_s = time.perf_counter() - start

    report_path = write_report(report, out_dir, serial=args.serial)
    update_manifest(out_dir)
    if report.error is not None:
        print(f"[{command}] failed: {report.error['type']}: "
              f"{report.error['message']} (report: {report_path})", file=sys.stderr)
        return 1
    print(f"[{command}] ok (report: {report_path})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
