"""
Command-line entry point: ``python -m cli <command>`` with PYTHONPATH=lvfuse, or the ``lvfuse`` script.

Every command reads the pipeline config (defaults < --config file < flags), logs to stderr and
writes its artifacts under the directory it is given. Domain errors exit 1 with one diagnostic line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

import evaluation as ev
import fusion_search as fs
import localize as loc
import phantom as ph
import trainer as tr
import views as vw
from config import PipelineConfig, env_log_level, load_config, load_run_config, nested, save_run_config
from data_model import SeriesKind, Study, load_studies, validate_study
from errors import ConfigError
from feedback import FeedbackStore, feedback_converged
from nn.checkpoint import load_checkpoint
from nn.layers import Network
from services.json_store import write_json_atomic
from services.tables import read_table, read_volume_table, write_rows

log = logging.getLogger(__name__)

PROG = "lvfuse"
TARGET_PHASES = {"edv": vw.Phase.ED, "esv": vw.Phase.ES}
PREDICTION_COLUMNS = ("study_id", "edv_ml", "esv_ml", "age_years")
LOCATE_COLUMNS = (
    "study_id",
    "sax_row",
    "sax_col",
    "ed_index",
    "es_index",
    "coarse_in_extent",
    "lax_2ch_row",
    "lax_2ch_col",
    "lax_4ch_row",
    "lax_4ch_col",
)
DEFAULT_KERNELS = "3,7,11,15,19,23"


# --- shared helpers --------------------------------------------------------------------------------


def _require(value: Path | None, flag: str, key: str) -> Path:
    if value is None:
        raise ConfigError(f"{flag} is required (or set paths.{key} in the config file)")
    return Path(value)


def _data_root(args: argparse.Namespace, config: PipelineConfig) -> Path:
    return _require(getattr(args, "data", None) or config.paths.data_root, "--data", "data_root")


def _bank(args: argparse.Namespace, config: PipelineConfig) -> loc.AtlasBank:
    atlas_path = getattr(args, "atlas", None) or config.paths.atlas
    if atlas_path is not None:
        atlas = loc.load_atlas(Path(atlas_path))
        log.info("cli: atlas loaded from %s", atlas_path)
    else:
        atlas = loc.phantom_atlas(config.localization.atlas_patches)
        log.info("cli: using the built-in phantom atlas (%d patches)", config.localization.atlas_patches)
    return loc.expand_atlas(atlas, config.localization.r_count, config.localization.t_count)


def _targets(choice: str) -> list[str]:
    return ["edv", "esv"] if choice == "both" else [choice]


def _labelled(studies: Sequence[Study]) -> list[Study]:
    out = [s for s in studies if s.truth is not None]
    if len(out) < len(studies):
        log.warning("cli: %d studies without truth volumes ignored", len(studies) - len(out))
    return out


def _ids_from_table(path: Path) -> list[str]:
    return [str(x) for x in read_table(path, ("study_id",))["study_id"]]


# --- phantom / atlas -------------------------------------------------------------------------------


def cmd_phantom_gen(args: argparse.Namespace, config: PipelineConfig) -> int:
    base = ph.PhantomParams(
        seed=config.seed,
        frames=args.frames,
        sax_positions=args.sax_positions,
        noise_sigma=args.noise,
    )
    variation = ph.PhantomVariation.none() if args.no_jitter else ph.PhantomVariation()
    studies = ph.generate_dataset(args.n, base, variation, config.threads)
    ph.write_dataset(studies, args.out)
    return 0


def cmd_atlas_build(args: argparse.Namespace, config: PipelineConfig) -> int:
    count = args.count or config.localization.atlas_patches
    atlas = loc.build_atlas(ph.atlas_patches(count, config.seed))
    loc.save_atlas(atlas, args.out)
    log.info("cli: atlas from %d phantom patches written to %s", count, args.out)
    return 0


# --- locate / preprocess ---------------------------------------------------------------------------


def _center_or_blank(located: loc.StudyLocalization, kind: SeriesKind) -> tuple[float | None, float | None]:
    center = located.lax_centers.get(kind)
    return (None, None) if center is None else center


def cmd_locate(args: argparse.Namespace, config: PipelineConfig) -> int:
    studies = load_studies(_data_root(args, config), config.threads)
    for study in studies:
        report = validate_study(study)
        for finding in report.warnings:
            log.warning("cli: study=%s %s", study.study_id, finding.message)
        if report.fatal:
            reasons = "; ".join(f.message for f in report.findings if f.severity == "fatal")
            raise ValueError(f"study {study.study_id} failed validation: {reasons}")
    located = vw.localize_all(studies, _bank(args, config), config.localization, config.threads)
    rows = []
    for study in studies:
        item = located[study.study_id]
        rows.append(
            (
                study.study_id,
                item.sax_center[0],
                item.sax_center[1],
                item.ed_index,
                item.es_index,
                None if item.coarse is None else bool(item.coarse.in_extent),
                *_center_or_blank(item, SeriesKind.LAX_2CH),
                *_center_or_blank(item, SeriesKind.LAX_4CH),
            )
        )
    write_rows(args.out, LOCATE_COLUMNS, rows)
    log.info("cli: localized %d studies -> %s", len(rows), args.out)
    return 0


def cmd_preprocess(args: argparse.Namespace, config: PipelineConfig) -> int:
    studies = load_studies(_data_root(args, config), config.threads)
    view_set = config.view_set
    usable = [s for s in studies if vw.unusable_reason(s, view_set) is None]
    located = vw.localize_all(usable, _bank(args, config), config.localization, config.threads)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for study in usable:
        for phase in (vw.Phase.ED, vw.Phase.ES):
            fused = vw.assemble_input(study, view_set, phase, located[study.study_id], config.network.input_hw)
            name = f"{study.study_id}_{phase.value}.npy"
            np.save(out_dir / name, fused.tensor, allow_pickle=False)
            rows.append((study.study_id, phase.value, name))
    write_rows(out_dir / "index.csv", ("study_id", "phase", "file"), rows)
    log.info("cli: wrote %d fused inputs view_set=%s to %s", len(rows), config.views, out_dir)
    return 0


# --- train / predict -------------------------------------------------------------------------------


def _feedback_filter(studies: list[Study], directory: Path | None) -> list[Study]:
    if directory is None:
        return studies
    state = FeedbackStore(directory).load()
    kept = [s for s in studies if s.study_id in state.train_ids]
    log.info("cli: feedback pool restricts training to %d/%d studies", len(kept), len(studies))
    return kept


def cmd_train(args: argparse.Namespace, config: PipelineConfig) -> int:
    out_dir = _require(args.out or config.paths.checkpoint_dir, "--out", "checkpoint_dir")
    studies = _feedback_filter(_labelled(load_studies(_data_root(args, config), config.threads)), args.feedback_state)
    if len(studies) < 2:
        raise ValueError(f"need at least two labelled studies to train, found {len(studies)}")
    train_idx, val_idx = tr.split_indices(len(studies), config.val_fraction, config.seed)
    train_studies = [studies[int(i)] for i in train_idx]
    val_studies = [studies[int(i)] for i in val_idx]

    ensembles = {"primary": config.view_set}
    if args.with_fallback:
        ensembles["backup"] = config.backup_view_set
    bank = _bank(args, config)
    located = vw.localize_all(studies, bank, config.localization, config.threads)
    targets = _targets(args.target)

    summary: dict[str, Any] = {}
    for name, view_set in ensembles.items():
        net_cfg = config.network.model_copy(update={"input_channels": len(view_set)})
        for target in targets:
            phase = TARGET_PHASES[target]
            train_set, val_set = [
                tr.Dataset.from_samples(
                    vw.build_samples(
                        pool, bank, view_set, phase, config.localization, net_cfg.input_hw, config.threads, located
                    )
                )
                for pool in (train_studies, val_studies)
            ]
            results = tr.train_ensemble(
                train_set,
                val_set,
                net_cfg,
                config.train.model_copy(update={"target": target}),
                out_dir / name,
            )
            summary[f"{name}/{target}"] = [r.best.validation_loss for r in results]
            log.info(
                "cli: trained %s/%s view_set=%s train=%d val=%d best val RMSE %s",
                name,
                target,
                vw.format_view_set(view_set),
                len(train_set),
                len(val_set),
                ", ".join(f"{r.best.validation_loss:.3f}" for r in results),
            )
    save_run_config(
        config,
        out_dir,
        {
            "targets": targets,
            "ensembles": {name: vw.format_view_set(v) for name, v in ensembles.items()},
            "validation_rmse": summary,
        },
    )
    return 0


def _load_ensemble(directory: Path, target: str) -> list[Network]:
    paths = [directory / f"{target}_m{k}.ckpt" for k in range(tr.ENSEMBLE_SIZE)]
    return [load_checkpoint(p).to_network() for p in paths]


def cmd_predict(args: argparse.Namespace, config: PipelineConfig) -> int:
    models_dir = Path(args.models)
    run_cfg, raw = load_run_config(models_dir)
    targets = list(raw.get("targets") or [])
    if sorted(targets) != ["edv", "esv"]:
        raise ConfigError(f"{models_dir} must hold both edv and esv ensembles (found {targets or 'none'})")
    ensembles = {name: vw.parse_view_set(text) for name, text in (raw.get("ensembles") or {}).items()}
    if "primary" not in ensembles:
        raise ConfigError(f"{models_dir} has no primary ensemble")
    studies = load_studies(_data_root(args, config), config.threads)

    chosen: dict[str, str] = {}
    for study in studies:
        if vw.unusable_reason(study, ensembles["primary"]) is None:
            chosen[study.study_id] = "primary"
        elif "backup" in ensembles and vw.unusable_reason(study, ensembles["backup"]) is None:
            log.warning("cli: study=%s lacks a primary view; using the backup ensemble", study.study_id)
            chosen[study.study_id] = "backup"
        else:
            log.warning("cli: study=%s has no usable view set; skipped", study.study_id)
    usable = [s for s in studies if s.study_id in chosen]
    located = vw.localize_all(usable, _bank(args, run_cfg), run_cfg.localization, config.threads)

    predicted: dict[str, dict[str, float]] = {s.study_id: {} for s in usable}
    for name, view_set in ensembles.items():
        group = [s for s in usable if chosen[s.study_id] == name]
        if not group:
            continue
        for target in targets:
            nets = _load_ensemble(models_dir / name, target)
            input_hw = nets[0].spec.input_shape[-1]
            phase = TARGET_PHASES[target]
            inputs = np.stack(
                [vw.assemble_input(s, view_set, phase, located[s.study_id], input_hw).tensor for s in group]
            )
            for study, value in zip(group, tr.predict_ensemble(nets, inputs), strict=True):
                if value <= 0:
                    log.warning("cli: study=%s predicted %s=%.3f ml is not positive", study.study_id, target, value)
                predicted[study.study_id][target] = float(value)
    rows = [(s.study_id, predicted[s.study_id]["edv"], predicted[s.study_id]["esv"], s.age_years) for s in usable]
    write_rows(args.out, PREDICTION_COLUMNS, rows)
    log.info("cli: wrote %d predictions to %s", len(rows), args.out)
    return 0


# --- evaluate --------------------------------------------------------------------------------------


def cmd_evaluate(args: argparse.Namespace, config: PipelineConfig) -> int:
    records = ev.records_from_tables(read_volume_table(args.pred), read_volume_table(args.truth))
    if not records:
        raise ValueError("no study ids shared by the prediction and truth tables")
    report = ev.build_report(records)
    out_dir = Path(args.out or config.paths.report_dir or ".")
    ev.write_report(report, records, out_dir)
    for quantity in ev.QUANTITIES:
        row = report.get(quantity)
        unit = "%" if quantity == "ef" else "ml"
        scale = 100.0 if quantity == "ef" else 1.0
        r = "n/a" if row.r is None else f"{row.r:.3f}"
        rmse = "n/a" if row.rmse is None else f"{row.rmse * scale:.2f}{unit}"
        print(f"{quantity}: n={row.n} rmse={rmse} r={r}")
    return 0


# --- fusion search / kernel sweep ------------------------------------------------------------------


def _training_evaluator(args: argparse.Namespace, config: PipelineConfig, kernel: int | None = None) -> fs.TrainingEvaluator:
    studies = _labelled(load_studies(_data_root(args, config), config.threads))
    net_cfg = config.network if kernel is None else config.network.model_copy(update={"first_kernel_size": kernel})
    return fs.TrainingEvaluator(
        studies,
        _bank(args, config),
        net_cfg,
        config.train,
        config.localization,
        config.val_fraction,
        config.threads,
    )


def cmd_fusion_search(args: argparse.Namespace, config: PipelineConfig) -> int:
    if args.fixture is not None:
        pair_eval = fs.load_fixture_evaluator(args.fixture)
        combo_eval = fs.load_fixture_evaluator(args.combo_fixture) if args.combo_fixture else pair_eval
    else:
        pair_eval = combo_eval = _training_evaluator(args, config)
    top, optimal = fs.pairwise_view_search(pair_eval, threads=config.threads)
    combos = fs.stage_two_combinations(optimal)
    scores = fs.score_combinations(combo_eval, combos, config.threads)
    best = min(scores, key=fs.rank_key)
    out_dir = Path(args.out)
    fs.write_scores(out_dir / "pairs.csv", top)
    fs.write_scores(out_dir / "combinations.csv", scores)
    result = {
        "top_pairs": [s.label for s in top],
        "optimal_set": "+".join(v.value for v in optimal),
        "best": best.label,
        "best_mrmse": best.mrmse,
    }
    write_json_atomic(out_dir / "result.json", result)
    print(f"top pairs: {', '.join(result['top_pairs'])}")
    print(f"optimal set: {result['optimal_set']}")
    print(f"best combination: {best.label} (MRMSE {best.mrmse:.2f} ml)")
    return 0


def cmd_sweep_kernel(args: argparse.Namespace, config: PipelineConfig) -> int:
    kernels = [int(k) for k in args.kernels.split(",") if k.strip()]
    if any(k % 2 == 0 or k < 1 for k in kernels):
        raise ValueError(f"kernel sizes must be positive odd integers, got {args.kernels}")
    evaluator = _training_evaluator(args, config)

    def factory(kernel: int) -> fs.Evaluator:
        evaluator.vgg_config = config.network.model_copy(update={"first_kernel_size": kernel})
        return evaluator

    scores = fs.kernel_sweep(factory, kernels, config.view_set)
    fs.write_kernel_scores(args.out, scores)
    best = min(scores, key=lambda s: (s.mrmse, s.kernel_size))
    print(f"best first-layer kernel: {best.kernel_size} (MRMSE {best.mrmse:.2f} ml)")
    return 0


# --- feedback --------------------------------------------------------------------------------------


def cmd_feedback_init(args: argparse.Namespace, config: PipelineConfig) -> int:
    FeedbackStore(args.dir).init(
        _ids_from_table(args.train), _ids_from_table(args.test), config.feedback, overwrite=args.force
    )
    return 0


def cmd_feedback_step(args: argparse.Namespace, config: PipelineConfig) -> int:
    store = FeedbackStore(args.dir)
    if args.pred is not None:
        if args.truth is None:
            raise ValueError("--pred needs --truth")
        preds, truths = read_volume_table(args.pred), read_volume_table(args.truth)
        column = f"{args.quantity}_ml"
        pending = store.load().test_ids
        for case_id in sorted(set(preds) & set(truths) & pending):
            store.step(case_id, float(truths[case_id][column]), float(preds[case_id][column]))  # type: ignore[arg-type]
    elif args.case is not None and args.truth_ml is not None and args.pred_ml is not None:
        store.step(args.case, args.truth_ml, args.pred_ml)
    else:
        raise ValueError("give either --case/--truth-ml/--pred-ml or --pred/--truth tables")
    if args.retrained:
        store.retrained()
    return _print_status(store)


def _print_status(store: FeedbackStore) -> int:
    state = store.load()
    status = {
        "train": len(state.train_ids),
        "test": len(state.test_ids),
        "good_streak": state.good_streak,
        "retrain_pending": state.retrain_pending,
        "converged": feedback_converged(state) if state.test_ids else None,
    }
    print(json.dumps(status, sort_keys=True))
    return 0


def cmd_feedback_status(args: argparse.Namespace, config: PipelineConfig) -> int:
    return _print_status(FeedbackStore(args.dir))


# --- parser ----------------------------------------------------------------------------------------


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    flat: dict[str, Any] = {
        "seed": args.seed,
        "threads": args.threads,
        "views": getattr(args, "views", None),
        "backup_views": getattr(args, "backup_views", None),
        "paths.atlas": getattr(args, "atlas", None) and str(args.atlas),
        "train.epochs": getattr(args, "epochs", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "train.learning_rate": getattr(args, "lr", None),
        "network.channel_scale": getattr(args, "channel_scale", None),
        "network.input_hw": getattr(args, "input_hw", None),
        "network.first_kernel_size": getattr(args, "kernel", None),
        "network.depth": getattr(args, "depth", None),
        "val_fraction": getattr(args, "val_fraction", None),
    }
    if getattr(args, "no_augment", False):
        flat["train.augment"] = False
    if args.seed is not None:
        flat["train.seed"] = args.seed
    return nested(flat)


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, help="root directory of study folders")
    p.add_argument("--atlas", type=Path, help="atlas PNG (64x64, 16-bit); default: built-in phantom atlas")


def _add_network(p: argparse.ArgumentParser) -> None:
    p.add_argument("--views", help="comma-separated view set, e.g. top,mid,2ch")
    p.add_argument("--epochs", type=int, help="training epochs per model")
    p.add_argument("--batch-size", type=int, help="minibatch size (studies)")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--channel-scale", type=float, help="fraction of VGG channel widths kept (0, 1]")
    p.add_argument("--input-hw", type=int, help="network input size in pixels (multiple of 32)")
    p.add_argument("--kernel", type=int, help="first-layer kernel size in pixels (odd)")
    p.add_argument("--depth", type=int, choices=(14, 17, 20), help="VGG depth (weight layers)")
    p.add_argument("--val-fraction", type=float, help="share of studies held out for validation")
    p.add_argument("--no-augment", action="store_true", help="disable per-epoch rotation/shift augmentation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description="Multi-view LV volume estimation pipeline.")
    parser.add_argument("--seed", type=int, help="master random seed (default 0)")
    parser.add_argument("--threads", type=int, help="worker threads, 1-64 (env LVFUSE_THREADS)")
    parser.add_argument("--config", type=Path, help="JSON pipeline config file")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR (env LVFUSE_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    phantom = sub.add_parser("phantom", help="synthetic phantom studies").add_subparsers(dest="action", required=True)
    p = phantom.add_parser("gen", help="generate phantom studies with analytic volumes")
    p.add_argument("--n", type=int, required=True, help="number of studies")
    p.add_argument("--out", type=Path, required=True, help="output data root")
    p.add_argument("--frames", type=int, default=20, help="cardiac phases per cycle")
    p.add_argument("--sax-positions", type=int, default=10, help="short-axis slices per study")
    p.add_argument("--noise", type=float, default=15.0, help="Gaussian noise sigma (intensity units)")
    p.add_argument("--no-jitter", action="store_true", help="identical anatomy for every study")
    p.set_defaults(func=cmd_phantom_gen)

    atlas = sub.add_parser("atlas", help="LV atlas").add_subparsers(dest="action", required=True)
    p = atlas.add_parser("build", help="build a 64x64 mean LV atlas from phantom patches")
    p.add_argument("--out", type=Path, required=True, help="atlas PNG path")
    p.add_argument("--count", type=int, help="number of patches averaged (default 50)")
    p.set_defaults(func=cmd_atlas_build)

    p = sub.add_parser("locate", help="localize the LV and select ED/ES frames")
    _add_data(p)
    p.add_argument("--out", type=Path, required=True, help="output CSV (pixel centers, frame indices)")
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("preprocess", help="write fused ED/ES network inputs as .npy")
    _add_data(p)
    p.add_argument("--views", help="comma-separated view set")
    p.add_argument("--input-hw", type=int, help="channel size in pixels")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train three-seed ensembles")
    _add_data(p)
    _add_network(p)
    p.add_argument("--target", choices=("edv", "esv", "both"), default="both", help="volume(s) to regress")
    p.add_argument("--backup-views", help="fallback view set for studies without 2CH")
    p.add_argument("--with-fallback", action="store_true", help="also train the fallback view set")
    p.add_argument("--feedback-state", type=Path, help="feedback directory; train only on its training pool")
    p.add_argument("--out", type=Path, help="checkpoint directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict EDV/ESV (ml) with trained ensembles")
    _add_data(p)
    p.add_argument("--models", type=Path, required=True, help="directory written by 'train'")
    p.add_argument("--out", type=Path, required=True, help="prediction CSV (study_id,edv_ml,esv_ml)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="RMSE, AESD, correlation and Bland-Altman report")
    p.add_argument("--pred", type=Path, required=True, help="prediction CSV (ml)")
    p.add_argument("--truth", type=Path, required=True, help="truth CSV (ml, optional age_years)")
    p.add_argument("--out", type=Path, help="report directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fusion-search", help="two-stage view-combination search")
    p.add_argument("--fixture", type=Path, help="views,rmse_edv,rmse_esv table used as the evaluator (ml)")
    p.add_argument("--combo-fixture", type=Path, help="table for the second stage (default: --fixture)")
    _add_data(p)
    _add_network(p)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_fusion_search)

    p = sub.add_parser("sweep-kernel", help="MRMSE over first-layer kernel sizes")
    _add_data(p)
    _add_network(p)
    p.add_argument("--kernels", default=DEFAULT_KERNELS, help="comma-separated odd kernel sizes (pixels)")
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.set_defaults(func=cmd_sweep_kernel)

    feedback = sub.add_parser("feedback", help="feedback loop state").add_subparsers(dest="action", required=True)
    p = feedback.add_parser("init", help="start a feedback loop from train/test id tables")
    p.add_argument("--dir", type=Path, required=True, help="feedback state directory")
    p.add_argument("--train", type=Path, required=True, help="CSV with a study_id column")
    p.add_argument("--test", type=Path, required=True, help="CSV with a study_id column")
    p.add_argument("--force", action="store_true", help="overwrite an existing state")
    p.set_defaults(func=cmd_feedback_init)
    p = feedback.add_parser("step", help="record reviewed test cases")
    p.add_argument("--dir", type=Path, required=True, help="feedback state directory")
    p.add_argument("--case", help="reviewed case id")
    p.add_argument("--truth-ml", type=float, help="reviewed true volume (ml)")
    p.add_argument("--pred-ml", type=float, help="model prediction (ml)")
    p.add_argument("--pred", type=Path, help="prediction CSV; steps every shared test case in id order")
    p.add_argument("--truth", type=Path, help="truth CSV paired with --pred")
    p.add_argument("--quantity", choices=("edv", "esv"), default="edv", help="volume compared against W")
    p.add_argument("--retrained", action="store_true", help="record that the model was retrained")
    p.set_defaults(func=cmd_feedback_step)
    p = feedback.add_parser("status", help="print pool sizes, streak and convergence")
    p.add_argument("--dir", type=Path, required=True, help="feedback state directory")
    p.set_defaults(func=cmd_feedback_status)
    return parser


def _configure_logging(level: str | None) -> None:
    name = (level or env_log_level()).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        config = load_config(args.config, _overrides(args))
        return int(args.func(args, config))
    except (ValueError, OSError) as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
