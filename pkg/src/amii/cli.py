"""Command-line orchestration: synth, preprocess, train, infer, eval, ablate.

Every command is deterministic given its flags and seed, writes a
``.manifest`` file recording the resolved settings next to its outputs, and
never embeds timestamps in artifact names. Config files are UTF-8
``key=value`` lines with ``#`` comments; command-line flags override file
values. Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, features, svg
from .errors import AmiiError, ConfigError, DataError, NumericError
from .estimator import AmiiGestureGenerator
from .features import (FACE_COLUMNS, TARGET_FPS, DyadRecording, load_recording,
                       split_dataset, synth_dyad, write_face_csv, write_person_csv)
from .metrics import ChunkSpec, evaluate
from .model import ABLATIONS

# Keys accepted in --config files (all commands share one namespace).
CONFIG_KEYS = {
    "window": int, "heads": int, "cell": int, "decoder_hidden": int,
    "pooling": str, "ablation": str,
    "epochs": int, "batch_size": int, "window_stride": int,
    "base_lr": float, "max_lr": float, "step_size_factor": int,
    "grad_clip": float, "filter_window": int, "seed": int,
    "val_fraction": float, "t_out": int,
}

TRAIN_DEFAULTS = {
    "window": 100, "heads": 2, "cell": 16, "decoder_hidden": 20,
    "pooling": "last", "ablation": "none",
    "epochs": 5, "batch_size": 32, "window_stride": 1,
    "base_lr": 1e-7, "max_lr": 1e-3, "step_size_factor": 10,
    "grad_clip": None, "filter_window": 5, "seed": 0,
}


def parse_config_file(path: str) -> dict:
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(
                    f"{path}:{lineno}: unknown config key {key!r}; valid keys: "
                    + ", ".join(sorted(CONFIG_KEYS)))
            try:
                values[key] = CONFIG_KEYS[key](raw)
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: bad value {raw!r} for key {key!r}") from None
    return values


def resolve_settings(args, keys: list[str]) -> dict:
    """defaults <- config file <- explicit flags, for the listed keys."""
    settings = {k: TRAIN_DEFAULTS[k] for k in keys if k in TRAIN_DEFAULTS}
    if getattr(args, "config", None):
        file_values = parse_config_file(args.config)
        settings.update({k: v for k, v in file_values.items() if k in keys})
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def write_manifest(out_dir: str, name: str, command: str, settings: dict) -> str:
    path = os.path.join(out_dir, f"{name}.manifest")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"command={command}\n")
        fh.write(f"artifact_version={__version__}\n")
        for key in sorted(settings):
            value = settings[key]
            if isinstance(value, float):
                value = "%.17g" % value
            fh.write(f"{key}={value}\n")
    return path


def list_sessions(corpus: str) -> list[str]:
    if not os.path.isdir(corpus):
        raise DataError(f"corpus directory not found: {corpus}")
    names = sorted(f[:-7] for f in os.listdir(corpus) if f.endswith(".p1.csv"))
    if not names:
        raise DataError(f"no '<session>.p1.csv' files under {corpus}")
    return names


def load_corpus(corpus: str) -> list[DyadRecording]:
    recs = []
    for name in list_sessions(corpus):
        p1 = os.path.join(corpus, f"{name}.p1.csv")
        p2 = os.path.join(corpus, f"{name}.p2.csv")
        if not os.path.exists(p2):
            raise DataError(f"missing partner file {p2}")
        recs.append(load_recording(p1, p2))
    return recs


def load_session(corpus: str, name: str) -> DyadRecording:
    p1 = os.path.join(corpus, f"{name}.p1.csv")
    p2 = os.path.join(corpus, f"{name}.p2.csv")
    if not (os.path.exists(p1) and os.path.exists(p2)):
        raise DataError(f"session {name!r} not found under {corpus}")
    return load_recording(p1, p2)


def _write_session(out_dir: str, rec: DyadRecording) -> None:
    write_person_csv(os.path.join(out_dir, f"{rec.session_id}.p1.csv"),
                     rec.p1.speech, rec.p1.face)
    write_person_csv(os.path.join(out_dir, f"{rec.session_id}.p2.csv"),
                     rec.p2.speech, rec.p2.face)
    with open(os.path.join(out_dir, f"{rec.session_id}.meta"), "w",
              encoding="utf-8") as fh:
        fh.write(f"participant_p1={rec.participants[0]}\n")
        fh.write(f"participant_p2={rec.participants[1]}\n")
        fh.write(f"fps={rec.fps:g}\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.sessions):
        rec = synth_dyad(seed=args.seed + i, duration_s=args.duration,
                         lag_frames=args.lag, coupling=args.coupling,
                         noise=args.noise, session_id=f"synth{i:03d}",
                         participants=(f"pa{i:03d}", f"pb{i:03d}"))
        _write_session(args.out, rec)
    write_manifest(args.out, "synth", "synth", {
        "sessions": args.sessions, "duration": args.duration, "lag": args.lag,
        "coupling": args.coupling, "noise": args.noise, "seed": args.seed,
    })
    print(f"wrote {args.sessions} sessions to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    settings = resolve_settings(args, ["filter_window"])
    for rec in load_corpus(args.corpus):
        cleaned = features.clean_recording(rec, settings["filter_window"])
        _write_session(args.out, cleaned)
    write_manifest(args.out, "preprocess", "preprocess",
                   {**settings, "corpus": args.corpus})
    print(f"preprocessed corpus written to {args.out}")
    return 0


def _estimator_from_settings(settings: dict) -> AmiiGestureGenerator:
    ablation = settings.get("ablation", "none")
    if ablation not in ABLATIONS:
        raise ConfigError(
            f"unknown ablation {ablation!r}; valid: {', '.join(sorted(ABLATIONS))}")
    flags = {"use_memory_lstm": True, "use_dual_cross_attention": True,
             "use_inter_encoder": True}
    flags.update(ABLATIONS[ablation])
    return AmiiGestureGenerator(
        window=settings["window"], heads=settings["heads"], cell=settings["cell"],
        decoder_hidden=settings["decoder_hidden"], pooling=settings["pooling"],
        epochs=settings["epochs"], batch_size=settings["batch_size"],
        base_lr=settings["base_lr"], max_lr=settings["max_lr"],
        step_size_factor=settings["step_size_factor"],
        grad_clip=settings["grad_clip"], window_stride=settings["window_stride"],
        filter_window=settings["filter_window"], seed=settings["seed"], **flags)


def _train_once(settings: dict, corpus: str, out_dir: str,
                tag: str = "model") -> tuple[str, list]:
    recordings = load_corpus(corpus)
    train_recs, val_recs, test_recs = split_dataset(recordings, seed=settings["seed"])
    est = _estimator_from_settings(settings)
    est.fit(train_recs, val=val_recs or None)
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, f"{tag}.ckpt")
    est.save(ckpt)
    est.history_.write_log(os.path.join(out_dir, f"{tag}.log.csv"))
    with open(os.path.join(out_dir, f"{tag}.split.txt"), "w", encoding="utf-8") as fh:
        for label, recs in (("train", train_recs), ("val", val_recs),
                            ("test", test_recs)):
            for rec in recs:
                fh.write(f"{label}={rec.session_id}\n")
    return ckpt, test_recs


TRAIN_KEYS = ["window", "heads", "cell", "decoder_hidden", "pooling", "ablation",
              "epochs", "batch_size", "window_stride", "base_lr", "max_lr",
              "step_size_factor", "grad_clip", "filter_window", "seed"]


def cmd_train(args) -> int:
    settings = resolve_settings(args, TRAIN_KEYS)
    ckpt, _ = _train_once(settings, args.corpus, args.out)
    write_manifest(args.out, "train", "train", {**settings, "corpus": args.corpus})
    print(f"checkpoint written to {ckpt}")
    return 0


def cmd_infer(args) -> int:
    settings = resolve_settings(args, ["filter_window"])
    est = AmiiGestureGenerator.from_checkpoint(args.checkpoint)
    est.filter_window = settings["filter_window"]
    rec = load_session(args.corpus, args.session)
    pred = est.predict(rec, t_out=args.t_out, person=args.person)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_face_csv(args.out, pred, start_frame=est.window)
    write_manifest(out_dir, os.path.basename(args.out), "infer", {
        **settings, "checkpoint": args.checkpoint, "session": args.session,
        "t_out": args.t_out, "person": args.person,
    })
    print(f"wrote {len(pred)} predicted frames to {args.out}")
    return 0


def _chunk_spec(args) -> ChunkSpec:
    return ChunkSpec(
        fps=TARGET_FPS,
        tlcc_chunk_s=args.tlcc_chunk, tlcc_max_lag_s=args.tlcc_lag,
        dtw_chunk_s=args.dtw_chunk, dtw_stride_s=args.dtw_stride,
        sync_window_s=args.sync_window, sync_stride_s=args.sync_stride,
        sync_threshold=args.sync_tau, min_overlap=args.min_overlap,
    )


def cmd_eval(args) -> int:
    settings = resolve_settings(args, ["filter_window"])
    frames, pred = features.read_face_csv(args.pred)
    rec = load_session(args.corpus, args.session)
    cleaned = features.clean_recording(rec, settings["filter_window"])
    agent = cleaned.p1 if args.person == "p1" else cleaned.p2
    partner = cleaned.p2 if args.person == "p1" else cleaned.p1
    if frames.max() >= len(cleaned) or frames.min() < 0:
        raise DataError(
            f"prediction frames run to {frames.max()} but session "
            f"{args.session!r} has {len(cleaned)} frames")

    stats = None
    if args.checkpoint:
        from .training import load_checkpoint
        _, _, stats = load_checkpoint(args.checkpoint)

    spec = _chunk_spec(args)
    report = evaluate(pred, agent.face[frames], partner.face[frames],
                      spec=spec, stats=stats)

    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.csv")
    with open(report_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("metric,scope,value\n")
        for metric, scope, value in report.rows():
            fh.write("%s,%s,%.17g\n" % (metric, scope, value))
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.summary() + "\n")

    au12 = features.AU12_INDEX
    svg.line_plot(
        os.path.join(args.out, "au12.svg"),
        {"predicted": pred[:, au12],
         "agent truth": agent.face[frames, au12],
         "partner truth": partner.face[frames, au12]},
        title="smile intensity (AU12)", x_label="frame", y_label="intensity",
        x_values={"predicted": frames, "agent truth": frames,
                  "partner truth": frames})
    if args.log:
        epochs, losses, vals = _read_loss_log(args.log)
        series = {"train loss": losses}
        x_values = {"train loss": epochs}
        if len(vals[0]):
            series["val loss"] = vals[1]
            x_values["val loss"] = vals[0]
        svg.line_plot(os.path.join(args.out, "loss.svg"), series,
                      title="training loss", x_label="epoch", y_label="loss",
                      x_values=x_values)

    write_manifest(args.out, "eval", "eval", {
        **settings, "pred": args.pred, "session": args.session,
        "person": args.person, "tlcc_chunk": args.tlcc_chunk,
        "tlcc_lag": args.tlcc_lag, "dtw_chunk": args.dtw_chunk,
        "dtw_stride": args.dtw_stride, "sync_window": args.sync_window,
        "sync_stride": args.sync_stride, "sync_tau": args.sync_tau,
    })
    print(report.summary())
    print(f"report written to {report_path}")
    return 0


def _read_loss_log(path: str):
    epochs, losses = [], []
    val_epochs, val_losses = [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        cols = {name: i for i, name in enumerate(header)}
        for line in fh:
            row = line.rstrip("\n").split(",")
            epoch = int(row[cols["epoch"]])
            epochs.append(epoch)
            losses.append(float(row[cols["train_loss"]]))
            val = row[cols["val_loss"]]
            if val:
                val_epochs.append(epoch)
                val_losses.append(float(val))
    return np.asarray(epochs), np.asarray(losses), (np.asarray(val_epochs),
                                                    np.asarray(val_losses))


ABLATE_ORDER = ["none", "no_memory", "no_dual_attention", "no_inter_encoder"]
ABLATE_LABELS = {"none": "full", "no_memory": "no_memory",
                 "no_dual_attention": "no_dual_attention",
                 "no_inter_encoder": "no_inter_encoder"}


def cmd_ablate(args) -> int:
    settings = resolve_settings(args, TRAIN_KEYS + ["t_out"])
    t_out = settings.get("t_out") or 250
    os.makedirs(args.out, exist_ok=True)
    spec = _chunk_spec(args)

    table_rows = []
    gt_row = None
    for ablation in ABLATE_ORDER:
        variant = dict(settings)
        variant["ablation"] = ablation
        variant_dir = os.path.join(args.out, ABLATE_LABELS[ablation])
        ckpt, test_recs = _train_once(variant, args.corpus, variant_dir,
                                      tag=ABLATE_LABELS[ablation])
        eval_rec = (test_recs or load_corpus(args.corpus))[0]
        est = AmiiGestureGenerator.from_checkpoint(ckpt)
        est.filter_window = settings["filter_window"]
        pred = est.predict(eval_rec, t_out=t_out, person="p1")
        if ablation == "no_inter_encoder":
            _check_partner_independence(est, eval_rec, settings["seed"])
        cleaned = features.clean_recording(eval_rec, settings["filter_window"])
        frames = np.arange(est.window, est.window + t_out)
        report = evaluate(pred, cleaned.p1.face[frames], cleaned.p2.face[frames],
                          spec=spec)
        table_rows.append((ABLATE_LABELS[ablation], report))
        gt_row = report.gt_pair

    table_path = os.path.join(args.out, "ablation_table.csv")
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("model,mae,rmse,ks,tlcc,dtw,sync,el\n")
        fh.write("gt,,,,%.17g,%.17g,%.17g,%.17g\n" % (
            gt_row.tlcc_corr, gt_row.dtw, gt_row.sync, gt_row.el))
        for label, report in table_rows:
            p = report.pred_pair
            fh.write(f"{label}," + ",".join("%.17g" % v for v in (
                report.mae, report.rmse, report.ks,
                p.tlcc_corr, p.dtw, p.sync, p.el)) + "\n")
    write_manifest(args.out, "ablate", "ablate", {
        **settings, "corpus": args.corpus, "t_out": t_out})
    print(f"ablation table written to {table_path}")
    return 0


def _check_partner_independence(est: AmiiGestureGenerator, rec: DyadRecording,
                                seed: int, t_out: int = 10) -> None:
    """Sanity assertion: without the inter encoder, agent output ignores
    arbitrary replacement of the partner's streams."""
    rng = np.random.default_rng(seed + 999)
    baseline = est.predict(rec, t_out=t_out, person="p1")
    scrambled = DyadRecording(
        session_id=rec.session_id + ".scrambled",
        p1=features.PersonTrack(fps=rec.fps, speech=rec.p1.speech.copy(),
                                face=rec.p1.face.copy()),
        p2=features.PersonTrack(
            fps=rec.fps,
            speech=rng.normal(size=rec.p2.speech.shape),
            face=np.abs(rng.normal(size=rec.p2.face.shape))),
        participants=rec.participants)
    perturbed = est.predict(scrambled, t_out=t_out, person="p1")
    if not np.array_equal(baseline, perturbed):
        raise NumericError(
            "ablated model output changed under partner-stream scrambling")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amii",
        description="dyadic facial-gesture synthesis: data, training, "
                    "inference, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dyadic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sessions", type=int, default=3)
    p.add_argument("--duration", type=float, default=120.0, help="seconds")
    p.add_argument("--lag", type=int, default=10, help="smile coupling lag, frames")
    p.add_argument("--coupling", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="clean and resample a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--filter-window", dest="filter_window", type=int)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    for key in TRAIN_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key,
                       type=CONFIG_KEYS.get(key, str))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="autoregressive rollout over a session")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--session", required=True)
    p.add_argument("--t-out", dest="t_out", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--person", choices=["p1", "p2"], default="p1")
    p.add_argument("--config")
    p.add_argument("--filter-window", dest="filter_window", type=int)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--session", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--person", choices=["p1", "p2"], default="p1")
    p.add_argument("--checkpoint", help="use training statistics from here")
    p.add_argument("--log", help="training log CSV for a loss plot")
    p.add_argument("--config")
    p.add_argument("--filter-window", dest="filter_window", type=int)
    _add_chunk_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate all ablation variants")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--t-out", dest="t_out", type=int)
    for key in TRAIN_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key,
                       type=CONFIG_KEYS.get(key, str))
    _add_chunk_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def _add_chunk_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tlcc-chunk", type=float, default=8.0, help="seconds")
    p.add_argument("--tlcc-lag", type=float, default=2.0, help="seconds")
    p.add_argument("--dtw-chunk", type=float, default=60.0, help="seconds")
    p.add_argument("--dtw-stride", type=float, default=30.0, help="seconds")
    p.add_argument("--sync-window", type=float, default=8.0, help="seconds")
    p.add_argument("--sync-stride", type=float, default=2.0, help="seconds")
    p.add_argument("--sync-tau", type=float, default=0.5)
    p.add_argument("--min-overlap", type=int, default=100)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except AmiiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
