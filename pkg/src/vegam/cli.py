"""Command-line pipeline: data generation, fixations, training, explanation
and statistics.  Every command writes under ``--out`` and snapshots its
effective settings to ``config.txt`` there.

Settings may come from a flat ``key = value`` file (``--config``); flags
given on the command line win.  Exit codes: 0 ok, 1 runtime error,
2 usage error.  Errors are printed as one line: ``error: <command>: <kind>: <message>``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import cam as cam_mod
from . import data, gaze, stats
from .mapio import write_heatmap_png, write_pfm
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .training import EvalRecord, TrainConfig, evaluate, train_baseline, train_vegam

log = logging.getLogger("vegam")

CONFIG_NAME = "config.txt"
METRICS_NAME = "metrics.csv"
EVAL_NAME = "eval.csv"
CHECKPOINT_NAME = "model.gzcm"
EVAL_HEADER = ["sample_id", "true", "pred", "confidence_true"]


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# --- shared option groups -------------------------------------------------

def _add_common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--out", required=True, help="run directory for all outputs")
    p.add_argument("--config", help="flat key = value settings file")
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _add_split(p) -> None:
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=None, help="defaults to --seed")


def _add_model(p) -> None:
    p.add_argument("--side", type=int, default=64, help="network input side")
    p.add_argument("--channels", type=_ints, default=None, help="six comma-separated widths")


def _add_training(p) -> None:
    p.add_argument("--data", required=True)
    p.add_argument("--fixmaps", help="directory with <id>.fix.pfm maps (defaults to --data)")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--max-epochs", type=int, default=20)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--cam-class-mode", choices=["predicted", "true"], default="predicted")
    p.add_argument("--map-norm", choices=["minmax", "none"], default="minmax")
    p.add_argument("--val-fraction", type=float, default=0.1)
    _add_split(p)
    _add_model(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vegam", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen-data", help="render the synthetic glyph set")
    _add_common(p)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=85)
    p.add_argument("--side", type=int, default=gaze.STIMULUS_SIDE)
    p.add_argument("--preset", choices=sorted(data.SET_PRESETS), help="overrides --classes/--per-class")

    p = sub.add_parser("augment", help="shear/rotate/flip every image (and its fixation map)")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--copies", type=int, default=1)
    p.add_argument("--shear", type=float, default=0.2)
    p.add_argument("--rotation", type=float, default=40.0)
    p.add_argument("--hflip", type=_bool, default=True)
    p.add_argument("--vflip", type=_bool, default=True)

    p = sub.add_parser("fixations", help="I-VT fixation extraction from a gaze CSV")
    _add_common(p, seed=False)
    p.add_argument("--gaze", required=True)
    p.add_argument("--velocity", type=float, default=gaze.DEFAULT_VELOCITY_THRESHOLD)
    p.add_argument("--min-duration", type=float, default=gaze.DEFAULT_MIN_DURATION)
    p.add_argument("--max-gap", type=float, default=gaze.DEFAULT_MAX_GAP)

    p = sub.add_parser("fixmaps", help="pool fixations per sample into fixation maps")
    _add_common(p, seed=False)
    p.add_argument("--fixations", required=True, help="fixations.csv from the fixations command")
    p.add_argument("--width", type=int, default=gaze.STIMULUS_SIDE)
    p.add_argument("--height", type=int, default=gaze.STIMULUS_SIDE)
    p.add_argument("--sigma", type=float, default=gaze.DEFAULT_SIGMA_PX)

    p = sub.add_parser("oracle-fixmaps", help="synthetic fixation maps from discriminative ink")
    _add_common(p, seed=False)
    p.add_argument("--data", required=True)
    p.add_argument("--sigma", type=float, default=None, help="pixels; defaults to side / 10")
    p.add_argument("--top-fraction", type=float, default=0.05)

    p = sub.add_parser("train", help="train a baseline or fixation-supervised model")
    _add_common(p)
    p.add_argument("--mode", choices=["baseline", "vegam"], default="baseline")
    p.add_argument("--lam", type=float, default=1.0)
    _add_training(p)

    p = sub.add_parser("eval", help="per-sample evaluation of a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--subset", choices=["test", "train", "all"], default="test")
    _add_split(p)

    p = sub.add_parser("cam", help="class activation maps for some samples")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=list(cam_mod.VARIANTS), default="modified")
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--target", choices=["predicted", "true"], default="predicted")

    p = sub.add_parser("compare", help="McNemar test on two eval.csv files")
    _add_common(p, seed=False)
    p.add_argument("--a", required=True, help="first (baseline) eval.csv")
    p.add_argument("--b", required=True, help="second (VEGAM) eval.csv")

    p = sub.add_parser("analyze-weights", help="dense-weight distribution diagnostics")
    _add_common(p, seed=False)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("zero-map-study", help="zero-map probabilities, analytic vs Monte Carlo")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample", type=int, default=0, help="index of the image supplying A")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--mu", type=float, default=None, help="weight mean; defaults to the fitted mean")
    p.add_argument("--sigma", type=float, default=None, help="weight std; defaults to the fitted std")

    p = sub.add_parser("sweep-lambda", help="train one fixation-supervised model per lambda")
    _add_common(p)
    p.add_argument("--lams", type=_floats, default=(0.0, 0.5, 1.0, 2.0))
    _add_training(p)
    return parser


# --- config files -----------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path} line {lineno}: expected key = value")
            key, value = (t.strip() for t in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _subparser(parser, name) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def parse(argv) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if known.config and command:
        sp = _subparser(parser, command)
        dests = {a.dest for a in sp._actions} - {"help", "config"}
        try:
            values = read_config(known.config)
        except OSError as exc:
            sp.error(f"cannot read config: {exc}")
        except UsageError as exc:
            sp.error(str(exc))
        unknown = sorted(set(values) - dests)
        if unknown:
            sp.error(f"unknown config key(s): {', '.join(unknown)}")
        for a in sp._actions:
            if a.dest in values:
                a.required = False
                if a.type is None and isinstance(a.default, bool):
                    values[a.dest] = _bool(values[a.dest])
                elif a.type is not None:
                    try:
                        values[a.dest] = a.type(values[a.dest])
                    except (ValueError, argparse.ArgumentTypeError):
                        sp.error(f"bad config value {a.dest} = {values[a.dest]!r}")
                if a.choices is not None and values[a.dest] not in a.choices:
                    sp.error(f"config value {a.dest} = {values[a.dest]!r} not in {sorted(a.choices)}")
        sp.set_defaults(**values)
    return parser.parse_args(argv)


def snapshot_config(args, out: Path) -> None:
    items = sorted((k, v) for k, v in vars(args).items() if k not in ("config", "verbose"))
    lines = []
    for k, v in items:
        if isinstance(v, tuple):
            v = ",".join(_fmt(t) for t in v)
        lines.append(f"{k} = {'' if v is None else _fmt(v)}\n")
    (out / CONFIG_NAME).write_text("".join(lines))


# --- helpers ------------------------------------------------------------------

def _split_seed(args) -> int:
    return args.seed if args.split_seed is None else args.split_seed


def _model_config(args, num_classes: int) -> ModelConfig:
    if args.side == 64 and args.channels is None:
        return ModelConfig.desk(num_classes)
    kw = dict(input_side=args.side, num_classes=num_classes)
    if args.channels is not None:
        kw["channels"] = args.channels
    return ModelConfig(**kw)


def _train_config(args, lam: float) -> TrainConfig:
    return TrainConfig(lr=args.lr, batch_size=args.batch_size, lam=lam, max_epochs=args.max_epochs,
                       patience=args.patience, seed=args.seed, cam_class_mode=args.cam_class_mode,
                       map_norm=args.map_norm, val_fraction=args.val_fraction)


def write_eval(path: Path, rec: EvalRecord) -> None:
    rows = zip(rec.ids, rec.true.tolist(), rec.pred.tolist(), rec.confidence_true.tolist())
    _write_csv(path, EVAL_HEADER, rows)


def read_eval(path) -> EvalRecord:
    ids, true, pred, conf = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != EVAL_HEADER:
            raise data.DataError(f"{path} line 1: expected header {','.join(EVAL_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise data.DataError(f"{path} line {lineno}: expected 4 fields, got {len(row)}")
            ids.append(row[0])
            true.append(int(row[1]))
            pred.append(int(row[2]))
            conf.append(float(row[3]))
    return EvalRecord(ids, np.array(true, dtype=np.int64), np.array(pred, dtype=np.int64), np.array(conf))


def _fit_and_train(args, lam: float, mode: str, out: Path):
    ds = data.load_images(args.data, side=args.side)
    train_ds, test_ds = data.split(ds, args.train_fraction, _split_seed(args))
    mc = _model_config(args, ds.num_classes)
    cfg = _train_config(args, lam)
    if mode == "vegam":
        fix = data.load_fixmaps(train_ds.ids, args.fixmaps or args.data, side=args.side)
        model, report = train_vegam(train_ds, fix, cfg, mc)
    else:
        model, report = train_baseline(train_ds, cfg, mc)
    rec = evaluate(model, test_ds)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[0, "", "", "", report.initial_val_ce, "", ""]]
    rows += [[e.epoch, e.train_ce, e.train_mse, e.train_acc, e.val_ce, e.val_mse, e.val_acc] for e in report.epochs]
    _write_csv(out / METRICS_NAME, ["epoch", "train_ce", "train_mse", "train_acc", "val_ce", "val_mse", "val_acc"], rows)
    save_checkpoint(model, out / CHECKPOINT_NAME)
    write_eval(out / EVAL_NAME, rec)
    (out / "summary.txt").write_text(
        f"mode = {mode}\nlam = {lam!r}\nbest_epoch = {report.best_epoch}\nstopped_epoch = {report.stopped_epoch}\n"
        f"test_accuracy = {rec.accuracy!r}\ntest_samples = {len(rec.ids)}\n")
    log.info("%s: test accuracy %.4f after %d epochs (%.1f s)", mode, rec.accuracy, report.stopped_epoch,
             report.wall_time)
    return report, rec


# --- commands ------------------------------------------------------------------

def cmd_gen_data(args, out: Path) -> None:
    classes, per_class = data.SET_PRESETS[args.preset] if args.preset else (args.classes, args.per_class)
    ds = data.generate_glyphs(classes, per_class, args.seed, args.side)
    data.save_dataset(ds, out)
    log.info("wrote %d images to %s", len(ds), out)


def cmd_augment(args, out: Path) -> None:
    ds = data.load_images(args.data, side=_native_side(args.data))
    fix_dir = Path(args.data) / "images"
    has_fix = all((fix_dir / f"{i}{data.FIXMAP_SUFFIX}").exists() for i in ds.ids)
    fix = data.load_fixmaps(ds.ids, args.data, side=ds.side) if has_fix else None
    params = data.AugmentParams(args.shear, args.rotation, args.hflip, args.vflip, args.seed)
    aug, aug_fix = data.augment_dataset(ds, args.copies, params, fix)
    data.save_dataset(aug, out)
    if aug_fix is not None:
        data.save_fixmaps(aug.ids, aug_fix, out)
    log.info("wrote %d augmented images (fixation maps: %s)", len(aug), "yes" if has_fix else "no")


def _native_side(directory) -> int:
    """Side of the first manifest image, so loading keeps its resolution."""
    with open(Path(directory) / data.MANIFEST, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise data.DataError(f"{directory}: empty manifest")
    img = data.read_gray_png(Path(directory) / rows[1][1])
    return max(img.shape)


def cmd_fixations(args, out: Path) -> None:
    trials = gaze.load_gaze_csv(args.gaze)
    rows = []
    for trial, samples in trials.items():
        fx = gaze.ivt_extract(samples, args.velocity, args.min_duration, args.max_gap)
        total = gaze.trial_duration(samples)
        for f in fx:
            rows.append([trial, f.x, f.y, f.duration, f.onset, f.duration / total if total > 0 else 0.0])
    _write_csv(out / "fixations.csv", ["trial_id", "x_px", "y_px", "duration_ms", "onset_ms", "duration_norm"], rows)
    log.info("%d fixations from %d trials", len(rows), len(trials))


def _sample_of(trial_id: str) -> str:
    """Trials named ``<sample>`` or ``<sample>:<participant>`` pool per sample."""
    return trial_id.split(":", 1)[0]


def cmd_fixmaps(args, out: Path) -> None:
    groups: dict[str, list[gaze.Fixation]] = {}
    with open(args.fixations, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                f = gaze.Fixation(float(row["x_px"]), float(row["y_px"]), float(row["duration_norm"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise gaze.GazeFormatError(f"{args.fixations} line {lineno}: {exc}") from None
            if f.duration > 0:
                groups.setdefault(_sample_of(row["trial_id"]), []).append(f)
    if not groups:
        raise gaze.EmptyFixationsError(f"{args.fixations}: no fixations")
    ids = sorted(groups)
    maps = [gaze.fixation_map(groups[i], args.width, args.height, args.sigma).values for i in ids]
    data.save_fixmaps(ids, maps, out)
    for i, m in zip(ids, maps):
        write_heatmap_png(out / "images" / f"{i}.fix.png", m)
    _write_csv(out / "fixmaps.csv", ["sample_id", "fixations", "peak"], [[i, len(groups[i]), float(m.max())] for i, m in zip(ids, maps)])


def cmd_oracle_fixmaps(args, out: Path) -> None:
    ds = data.load_images(args.data, side=_native_side(args.data))
    sigma = args.sigma if args.sigma is not None else ds.side / 10.0
    maps = data.oracle_fixmaps(ds, sigma, top_fraction=args.top_fraction)
    data.save_fixmaps(ds.ids, maps, out)
    _write_csv(out / "fixmaps.csv", ["sample_id", "sigma_px", "mass"], [[i, sigma, float(m.mean())] for i, m in zip(ds.ids, maps)])
    log.info("wrote %d oracle fixation maps (sigma %.2f px)", len(ds), sigma)


def cmd_train(args, out: Path) -> None:
    _fit_and_train(args, args.lam if args.mode == "vegam" else 0.0, args.mode, out)


def cmd_eval(args, out: Path) -> None:
    model = load_checkpoint(args.checkpoint)
    ds = data.load_images(args.data, side=model.config.input_side)
    if args.subset != "all":
        train_ds, test_ds = data.split(ds, args.train_fraction, _split_seed(args))
        ds = test_ds if args.subset == "test" else train_ds
    rec = evaluate(model, ds)
    write_eval(out / EVAL_NAME, rec)
    (out / "summary.txt").write_text(f"accuracy = {rec.accuracy!r}\nsamples = {len(rec.ids)}\n")
    print(f"accuracy={rec.accuracy:.6f} samples={len(rec.ids)}")


def cmd_cam(args, out: Path) -> None:
    model = load_checkpoint(args.checkpoint)
    ds = data.load_images(args.data, side=model.config.input_side)
    (out / "maps").mkdir(exist_ok=True)
    rows = []
    for i in range(min(args.limit, len(ds))):
        s = ds[i]
        cls = s.label if args.target == "true" else None
        m = cam_mod.explain(model, s.image, args.variant, cls)
        big = cam_mod.bilinear_resize(m.values, ds.side, ds.side)
        write_pfm(out / "maps" / f"{s.id}.cam.pfm", big)
        write_heatmap_png(out / "maps" / f"{s.id}.cam.png", cam_mod.minmax(big))
        rows.append([s.id, s.label, m.cls, args.variant, int(m.is_zero), float(m.values.max())])
    _write_csv(out / "cams.csv", ["sample_id", "true", "cls", "variant", "zero_map", "peak"], rows)
    log.info("%d maps, %d all-zero", len(rows), sum(r[4] for r in rows))


def cmd_compare(args, out: Path) -> None:
    a, b = read_eval(args.a), read_eval(args.b)
    if a.ids != b.ids:
        raise data.DataError("eval files cover different samples or orders")
    table = stats.ContingencyTable.from_correctness(a.correct, b.correct)
    res = stats.mcnemar(table)
    conf = stats.confidence_summary(a.confidence_true, b.confidence_true, a.correct, b.correct)
    header = ["a", "b", "c", "d", "statistic", "p_value", "method", "acc_a", "acc_b",
              "both_correct", "conf_a", "conf_b"]
    row = [table.a, table.b, table.c, table.d, res.statistic, res.p_value, res.method, a.accuracy, b.accuracy,
           conf["count"], conf["mean_a"], conf["mean_b"]]
    _write_csv(out / "compare.csv", header, [row])
    (out / "summary.txt").write_text(
        f"McNemar ({res.method}): b={table.b} c={table.c} statistic={res.statistic!r} p={res.p_value!r}\n"
        f"accuracy: {a.accuracy!r} -> {b.accuracy!r}\n"
        f"true-class confidence on {conf['count']} jointly correct samples: {conf['mean_a']!r} -> {conf['mean_b']!r}\n")
    print(f"b={table.b} c={table.c} p={res.p_value:.6g} method={res.method}")


def cmd_analyze_weights(args, out: Path) -> None:
    model = load_checkpoint(args.checkpoint)
    ws = stats.weight_stats(model.dense.weight.data)
    fields = ["count", "mean", "variance", "std", "skewness", "excess_kurtosis", "ks_statistic", "ks_pvalue",
              "normaltest_pvalue", "degenerate"]
    values = [ws.count, ws.mean, ws.variance, ws.std, ws.skewness, ws.excess_kurtosis, ws.ks_statistic,
              ws.ks_pvalue, ws.normaltest_pvalue, int(ws.degenerate)]
    _write_csv(out / "weights.csv", fields, [values])
    _write_csv(out / "histogram.csv", ["left", "right", "count"],
               zip(ws.hist_edges[:-1].tolist(), ws.hist_edges[1:].tolist(), ws.hist_counts.tolist()))
    verdict = "consistent with" if ws.looks_normal() else "not consistent with"
    (out / "summary.txt").write_text(
        f"{ws.count} dense weights: mean {ws.mean:.6g}, std {ws.std:.6g}\n"
        f"skewness {ws.skewness:.4f}, excess kurtosis {ws.excess_kurtosis:.4f}\n"
        f"KS p {ws.ks_pvalue:.4g}, D'Agostino p {ws.normaltest_pvalue:.4g}: {verdict} a Gaussian at alpha 0.05\n")


def cmd_zero_map_study(args, out: Path) -> None:
    model = load_checkpoint(args.checkpoint)
    ds = data.load_images(args.data, side=model.config.input_side)
    if not 0 <= args.sample < len(ds):
        raise IndexError(f"sample index {args.sample} outside [0, {len(ds)})")
    ws = stats.weight_stats(model.dense.weight.data)
    mu = ws.mean if args.mu is None else args.mu
    sigma = ws.std if args.sigma is None else args.sigma
    A = model.forward(ds.images[args.sample : args.sample + 1]).activations[0]
    th = stats.zero_map_probs(A, mu, sigma)
    mc = stats.zero_map_monte_carlo(A, mu, sigma, args.trials, args.seed)
    n = A.shape[1]
    rows = []
    for i in range(n):
        for j in range(n):
            rows.append([i, j, th.p_modified[i, j], mc.frac_modified[i, j], th.p_classical[i, j],
                         mc.frac_classical[i, j]])
    _write_csv(out / "zero_map.csv", ["row", "col", "p_modified", "mc_modified", "p_classical", "mc_classical"], rows)
    se_m = np.maximum(mc.standard_error(th.p_modified), 1e-300)
    se_c = np.maximum(mc.standard_error(th.p_classical), 1e-300)
    worst = max(float(np.max(np.abs(mc.frac_modified - th.p_modified) / se_m)),
                float(np.max(np.abs(mc.frac_classical - th.p_classical) / se_c)))
    (out / "summary.txt").write_text(
        f"mu = {mu!r}\nsigma = {sigma!r}\nmap_side = {n}\ntrials = {args.trials}\n"
        f"all_zero_modified = {mc.zero_modified!r}\nall_zero_classical = {mc.zero_classical!r}\n"
        f"worst_deviation_in_se = {worst!r}\n")
    print(f"zero maps: modified {mc.zero_modified:.4f}, classical {mc.zero_classical:.4f}; worst |dev| {worst:.2f} SE")


def cmd_sweep_lambda(args, out: Path) -> None:
    rows = []
    for lam in args.lams:
        report, rec = _fit_and_train(args, lam, "vegam", out / f"lam_{lam!r}")
        rows.append([lam, rec.accuracy, float(np.mean(rec.confidence_true)), report.best_epoch,
                     report.epochs[report.best_epoch - 1].val_mse if report.best_epoch else float("nan")])
    _write_csv(out / "sweep.csv", ["lam", "test_accuracy", "mean_confidence_true", "best_epoch", "val_mse"], rows)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "augment": cmd_augment,
    "fixations": cmd_fixations,
    "fixmaps": cmd_fixmaps,
    "oracle-fixmaps": cmd_oracle_fixmaps,
    "train": cmd_train,
    "eval": cmd_eval,
    "cam": cmd_cam,
    "compare": cmd_compare,
    "analyze-weights": cmd_analyze_weights,
    "zero-map-study": cmd_zero_map_study,
    "sweep-lambda": cmd_sweep_lambda,
}


def run(argv=None) -> int:
    """Parse ``argv``, run one command and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except SystemExit as exc:  # argparse: usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        snapshot_config(args, out)
        COMMANDS[args.command](args, out)
    except (ValueError, OSError, IndexError, KeyError, FloatingPointError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
