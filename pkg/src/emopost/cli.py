"""Command-line front end wiring the full post-processing pipeline.

Subcommands: synth, train, predict, smooth, blend, tune-blend, tune-au,
eval, compound, report. Every command reads and writes only the documented
text formats, orders its output lexicographically by (video, frame), and
is idempotent given identical inputs and seed.

Exit codes: 0 success, 1 internal error, 2 usage, 3 missing input,
4 parse error, 5 validation error, 6 schema error, 7 contract error,
8 training divergence. Failures print one line to stderr in the form
``<category>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import au_threshold, compound, datamodel, ensemble, metrics, mtl_head, synth
from .config import Settings, load_config, parse_float_list
from .datamodel import fmt
from .errors import EmopostError, MissingInputError, ValidationError
from .temporal_filters import IDENTITY, FilterSpec, TaskFilters, smooth_predictions

TASK_METRIC_NAMES = {"va": "p_va", "expr": "p_expr", "au": "p_au"}


def _settings(args) -> Settings:
    settings = Settings(load_config(args.config) if args.config else {})
    settings.apply_overrides(getattr(args, "set", None))
    return settings


def _group_by_video(preds: dict) -> dict:
    grouped: dict = {}
    for (vid, frame) in sorted(preds):
        grouped.setdefault(vid, []).append((frame, preds[(vid, frame)]))
    return grouped


def _filter_spec(settings, args, task: str) -> FilterSpec:
    kind = settings.get(f"smooth.{task}.kind", str, "box", getattr(args, f"{task}_kind", None))
    k = settings.get(f"smooth.{task}.k", int, None, getattr(args, f"{task}_k", None))
    sigma2 = settings.get(
        f"smooth.{task}.sigma2", float, None, getattr(args, f"{task}_sigma2", None)
    )
    if kind == "box" and k is None:
        k = 0
    return FilterSpec(kind, k=k, sigma2=sigma2)


def _smooth_all(preds: dict, filters: TaskFilters) -> dict:
    out: dict = {}
    for vid, items in _group_by_video(preds).items():
        for frame, pred in smooth_predictions(items, filters):
            out[(vid, frame)] = pred
    return out


def _load_thresholds_arg(path):
    return au_threshold.load_thresholds(path) if path else au_threshold.AuThresholds.default()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    settings = _settings(args)
    spec = synth.SynthSpec(
        tracks=settings.get("synth.tracks", int, 20, args.tracks),
        frames=settings.get("synth.frames", int, 300, args.frames),
        dim=settings.get("synth.dim", int, 16, args.dim),
        noise=settings.get("synth.noise", float, 0.8, args.noise),
        min_segment=settings.get("synth.min_segment", int, 30, args.min_segment),
        max_segment=settings.get("synth.max_segment", int, 60, args.max_segment),
        label_drop=settings.get("synth.label_drop", float, 0.0, args.label_drop),
        distractor_rate=settings.get("synth.distractor_rate", float, 0.35),
    )
    seed = settings.get("seed", int, 0, args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = synth.generate(spec, seed)
    datamodel.save_features(out_dir / "features.csv", data.tracks)
    datamodel.save_labels(out_dir / "labels.csv", data.labels)
    compound.save_faces(out_dir / "faces.csv", data.faces)
    with open(out_dir / "synth_manifest.txt", "w", encoding="utf-8") as handle:
        for key in sorted(data.manifest):
            handle.write(f"synth.{key} = {data.manifest[key]}\n")
    print(f"wrote {spec.tracks} tracks x {spec.frames} frames to {out_dir}")
    return 0


def cmd_train(args) -> int:
    settings = _settings(args)
    tracks, _ = datamodel.load_features(args.features)
    labels = datamodel.load_labels(args.labels)
    config = mtl_head.TrainConfig(
        learning_rate=settings.get("train.learning_rate", float, 0.05, args.learning_rate),
        epochs=settings.get("train.epochs", int, 30, args.epochs),
        batch_size=settings.get("train.batch_size", int, 256, args.batch_size),
        seed=settings.get("seed", int, 0, args.seed),
        momentum=settings.get("train.momentum", float, 0.0, args.momentum),
        hidden_width=settings.get("train.hidden_width", int, 32, args.hidden_width),
        task_weights=(
            settings.get("train.lambda_va", float, 1.0),
            settings.get("train.lambda_expr", float, 1.0),
            settings.get("train.lambda_au", float, 1.0),
        ),
    )
    result = mtl_head.train(tracks, labels, config)
    mtl_head.save_params(args.out, result.params)
    if args.trace:
        with open(args.trace, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["epoch", "loss"])
            for epoch, value in enumerate(result.epoch_losses):
                writer.writerow([epoch, fmt(value)])
    print(
        f"trained {config.epochs} epochs; final loss {result.epoch_losses[-1]:.6f}; "
        f"weights -> {args.out}"
    )
    return 0


def cmd_predict(args) -> int:
    params = mtl_head.load_params(args.weights)
    tracks, _ = datamodel.load_features(args.features, expected_d=params.dim)
    preds = mtl_head.predict_tracks(params, tracks)
    datamodel.save_predictions(args.out, preds)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return 0


def cmd_smooth(args) -> int:
    settings = _settings(args)
    preds = datamodel.load_predictions(args.predictions)
    filters = TaskFilters(
        expr=_filter_spec(settings, args, "expr"),
        va=_filter_spec(settings, args, "va"),
        au=_filter_spec(settings, args, "au"),
    )
    datamodel.save_predictions(args.out, _smooth_all(preds, filters))
    print(f"smoothed {len(preds)} predictions -> {args.out}")
    return 0


def cmd_blend(args) -> int:
    settings = _settings(args)
    preds1 = datamodel.load_predictions(args.first)
    preds2 = datamodel.load_predictions(args.second)
    if args.weights_file:
        base = ensemble.load_blend_weights(args.weights_file)
    else:
        base = ensemble.BlendWeights(
            settings.get("blend.w_va", float, 0.5),
            settings.get("blend.w_expr", float, 0.5),
            settings.get("blend.w_au", float, 0.5),
        )
    weights = ensemble.BlendWeights(
        base.w_va if args.w_va is None else args.w_va,
        base.w_expr if args.w_expr is None else args.w_expr,
        base.w_au if args.w_au is None else args.w_au,
    )
    blended = ensemble.blend_many(preds1, preds2, weights)
    datamodel.save_predictions(args.out, blended)
    print(
        f"blended with w_va={weights.w_va} w_expr={weights.w_expr} "
        f"w_au={weights.w_au} -> {args.out}"
    )
    return 0


def cmd_tune_blend(args) -> int:
    settings = _settings(args)
    preds1 = datamodel.load_predictions(args.first)
    preds2 = datamodel.load_predictions(args.second)
    labels = datamodel.load_labels(args.labels)
    step = settings.get("tune.blend_step", float, 0.05, args.step)
    tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    result = ensemble.tune_blend_weights(
        preds1,
        preds2,
        labels,
        step=step,
        thresholds=_load_thresholds_arg(args.thresholds),
        tasks=tasks,
    )
    ensemble.save_blend_report(args.out, result)
    for task in tasks:
        weight = getattr(result.weights, f"w_{task}")
        print(f"{task}: weight {weight} metric {result.best[task]:.6f}")
    return 0


def cmd_tune_au(args) -> int:
    settings = _settings(args)
    preds = datamodel.load_predictions(args.predictions)
    labels = datamodel.load_labels(args.labels)
    grid = settings.get(
        "tune.au_grid", parse_float_list, list(au_threshold.DEFAULT_GRID), args.grid
    )
    keys = sorted(k for k in set(preds) & set(labels) if labels[k].has_au)
    if not keys:
        raise ValidationError("no overlapping AU-labeled frames to tune on")
    scores = np.array([preds[k].p_au for k in keys])
    au_labels = np.array([labels[k].au_values() for k in keys])
    mask = np.array([labels[k].au_mask() for k in keys])
    result = au_threshold.tune_thresholds(scores, au_labels, mask, grid=grid)
    au_threshold.save_thresholds(args.out, result.thresholds)
    for j, au_id in enumerate(datamodel.AU_IDS):
        flag = " (degenerate labels, kept default)" if result.flagged[j] else ""
        print(
            f"au{au_id}: threshold {result.thresholds.values[j]} "
            f"f1 {result.f1[j]:.4f}{flag}"
        )
    return 0


def cmd_eval(args) -> int:
    preds = datamodel.load_predictions(args.predictions)
    labels = datamodel.load_labels(args.labels)
    score = metrics.evaluate_mtl(
        preds,
        labels,
        thresholds=_load_thresholds_arg(args.thresholds),
        allow_missing_tasks=args.allow_missing_tasks,
    )
    width = max(len(name) for name, _ in score.as_rows())
    print(f"{'metric'.ljust(width)}  value")
    for name, value in score.as_rows():
        shown = "absent" if value is None else f"{value:.6f}"
        print(f"{name.ljust(width)}  {shown}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["metric", "value"])
            for name, value in score.as_rows():
                writer.writerow([name, "" if value is None else fmt(value)])
    return 0


def cmd_compound(args) -> int:
    settings = _settings(args)
    frames = compound.load_faces(args.faces)
    mean_kind = settings.get("compound.mean", str, "A", args.mean)
    face_policy = settings.get("compound.face_policy", str, "largest", args.face_policy)
    kind = settings.get("compound.kind", str, "box", args.kind)
    k = settings.get("compound.k", int, None, args.k)
    sigma2 = settings.get("compound.sigma2", float, None, args.sigma2)
    if kind == "box" and k is None:
        k = 0
    spec = FilterSpec(kind, k=k, sigma2=sigma2)

    by_video: dict = {}
    for frame in frames:
        by_video.setdefault(frame.video_id, []).append(frame)
    rows = []
    all_labels = []
    for vid in sorted(by_video):
        for frame_index, label in compound.predict_sequence(
            by_video[vid], mean_kind, face_policy, spec
        ):
            rows.append((vid, frame_index, label))
            all_labels.append(label)
    compound.save_compound_labels(args.out, rows)
    print(f"labeled {len(rows)} frames -> {args.out}")
    if args.balance_report:
        report = compound.class_balance_report(all_labels)
        with open(args.balance_report, "w", encoding="utf-8") as handle:
            handle.write(f"kl {fmt(report.kl)}\n")
            for cls, count, prop in zip(
                compound.COMPOUND_CLASSES, report.counts, report.proportions
            ):
                handle.write(f"{cls.name}\t{int(count)}\t{fmt(prop)}\n")
        print(f"class balance KL {report.kl:.6f} -> {args.balance_report}")
    return 0


def _task_metric(preds: dict, labels: dict, task: str, thresholds) -> float:
    keys = sorted(set(preds) & set(labels))
    if task == "va":
        rows = [k for k in keys if labels[k].has_va]
        if len(rows) < 2:
            raise ValidationError("need at least 2 VA-labeled frames")
        p = np.array([preds[k].p_va for k in rows])
        y = np.array([[labels[k].valence, labels[k].arousal] for k in rows])
        return (metrics.ccc(p[:, 0], y[:, 0]) + metrics.ccc(p[:, 1], y[:, 1])) / 2.0
    if task == "expr":
        rows = [k for k in keys if labels[k].has_expr]
        if not rows:
            raise ValidationError("no EXPR-labeled frames")
        pred = [int(np.argmax(preds[k].p_expr)) for k in rows]
        true = [labels[k].expression for k in rows]
        return metrics.macro_f1_expr(pred, true)
    if task == "au":
        rows = [k for k in keys if labels[k].has_au]
        if not rows:
            raise ValidationError("no AU-labeled frames")
        decisions = np.array(
            [au_threshold.apply_thresholds(preds[k].p_au, thresholds) for k in rows]
        )
        y = np.array([labels[k].au_values() for k in rows])
        m = np.array([labels[k].au_mask() for k in rows])
        return metrics.p_au(decisions, y, m)
    raise ValidationError(f"unknown task {task!r}")


def cmd_report(args) -> int:
    settings = _settings(args)
    preds = datamodel.load_predictions(args.predictions)
    labels = datamodel.load_labels(args.labels)
    thresholds = _load_thresholds_arg(args.thresholds)
    grid = settings.get(
        "report.sigma2_grid", parse_float_list, [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
        parse_float_list(args.sigma2_grid) if args.sigma2_grid else None,
    )
    task = args.task
    rows = []
    for sigma2 in grid:
        if sigma2 <= 0:
            spec = IDENTITY
        else:
            spec = FilterSpec("gaussian", k=args.k, sigma2=sigma2)
        filters = TaskFilters(
            expr=spec if task == "expr" else IDENTITY,
            va=spec if task == "va" else IDENTITY,
            au=spec if task == "au" else IDENTITY,
        )
        value = _task_metric(_smooth_all(preds, filters), labels, task, thresholds)
        rows.append((sigma2, value))
    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["sigma2", TASK_METRIC_NAMES[task]])
        for sigma2, value in rows:
            writer.writerow([fmt(sigma2), fmt(value)])
    for sigma2, value in rows:
        print(f"sigma2 {sigma2}: {TASK_METRIC_NAMES[task]} {value:.6f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(parser):
    parser.add_argument("--config", help="flat dotted-key config file")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emopost",
        description="Frame-level emotion prediction post-processing pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic benchmark")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--tracks", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--min-segment", type=int, dest="min_segment")
    p.add_argument("--max-segment", type=int, dest="max_segment")
    p.add_argument("--label-drop", type=float, dest="label_drop")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the three-headed prediction network")
    _common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--trace", help="optional per-epoch loss CSV")
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--momentum", type=float)
    p.add_argument("--hidden-width", type=int, dest="hidden_width")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run the trained head over features")
    _common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("smooth", help="temporally smooth a predictions file")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    for task in ("expr", "va", "au"):
        p.add_argument(f"--{task}-kind", choices=("box", "gaussian"), dest=f"{task}_kind")
        p.add_argument(f"--{task}-k", type=int, dest=f"{task}_k")
        p.add_argument(f"--{task}-sigma2", type=float, dest=f"{task}_sigma2")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("blend", help="blend two prediction files")
    _common(p)
    p.add_argument("--first", required=True)
    p.add_argument("--second", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights-file", dest="weights_file", help="report from tune-blend")
    p.add_argument("--w-va", type=float, dest="w_va")
    p.add_argument("--w-expr", type=float, dest="w_expr")
    p.add_argument("--w-au", type=float, dest="w_au")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("tune-blend", help="grid-search per-task blend weights")
    _common(p)
    p.add_argument("--first", required=True)
    p.add_argument("--second", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="blend report to write")
    p.add_argument("--step", type=float)
    p.add_argument("--tasks", default="va,expr,au")
    p.add_argument("--thresholds", help="AU thresholds file for the AU metric")
    p.set_defaults(func=cmd_tune_blend)

    p = sub.add_parser("tune-au", help="grid-search per-AU decision thresholds")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="thresholds file to write")
    p.add_argument("--grid", type=parse_float_list, help="comma-separated thresholds")
    p.set_defaults(func=cmd_tune_au)

    p = sub.add_parser("eval", help="score predictions against labels")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--thresholds", help="AU thresholds file (default 0.5)")
    p.add_argument("--out", help="optional metric,value CSV")
    p.add_argument("--allow-missing-tasks", action="store_true", dest="allow_missing_tasks")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compound", help="compound-expression labels from faces")
    _common(p)
    p.add_argument("--faces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mean", choices=compound.MEAN_KINDS)
    p.add_argument("--face-policy", choices=compound.FACE_POLICIES, dest="face_policy")
    p.add_argument("--kind", choices=("box", "gaussian"))
    p.add_argument("--k", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--balance-report", dest="balance_report", help="class balance output")
    p.set_defaults(func=cmd_compound)

    p = sub.add_parser("report", help="metric-vs-variance curve for one task")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--task", required=True, choices=("va", "expr", "au"))
    p.add_argument("--sigma2-grid", dest="sigma2_grid", help="comma-separated variances")
    p.add_argument("--k", type=int, help="kernel half-width (default ceil(3 sigma))")
    p.add_argument("--thresholds", help="AU thresholds file for the AU metric")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmopostError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"missing-input: {exc}", file=sys.stderr)
        return MissingInputError.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
