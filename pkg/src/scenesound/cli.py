"""Command-line entry point.

Settings resolve as built-in defaults < ``--config`` file (flat ``key =
value`` lines) < command-line flags. Exit status: 0 success, 1 invalid
usage or configuration, 2 failure while running.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data, metrics, training
from . import model as mdl
from .features import FeatureConfig, read_wav

log = logging.getLogger("scenesound")

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


# key -> (type, default)
SETTINGS = {
    "seed": (int, 0),
    "alpha": (float, 0.01),
    "folds": (int, 4),
    "out": (str, "out"),
    "segment_frames": (int, 1),
    "precision": (int, 64),
    "epochs": (int, 60),
    "batch_size": (int, 8),
    "learning_rate": (float, 1e-3),
    "threshold": (float, 0.5),
    "checkpoint_every": (int, 0),
    "arch": (str, "desk"),
    "index": (str, None),
    "annotations": (str, None),
    "checkpoint": (str, None),
    "holdout_fold": (int, None),
    "fold": (int, None),
    "alphas": (str, "1,0.1,0.01,0.001"),
    "n_mels": (int, 64),
    "frame_ms": (float, 40.0),
    "hop_ms": (float, 20.0),
    "sample_rate": (int, None),
    "fmin": (float, 0.0),
    "fmax": (float, None),
    "events": (str, None),
    "scenes": (str, None),
    "clips_per_scene": (int, 40),
    "clip_seconds": (float, 2.0),
    "gradcheck_seeds": (int, 5),
}
# paths that do not change results and stay out of the config hash
_UNHASHED = {"out", "config"}


def read_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in SETTINGS:
            raise UsageError(f"{path}:{lineno}: unknown or malformed setting {line!r}")
        values[key] = value.strip()
    return values


def resolve(args: argparse.Namespace) -> dict:
    raw = {}
    if getattr(args, "config", None):
        if not Path(args.config).is_file():
            raise UsageError(f"config file {args.config} not found")
        raw.update(read_config_file(args.config))
    for key in SETTINGS:
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    cfg = {}
    for key, (typ, default) in SETTINGS.items():
        v = raw.get(key, default)
        if v is None or v == "":
            cfg[key] = None if v is None or default is None else default
            continue
        try:
            cfg[key] = typ(v)
        except ValueError:
            raise UsageError(f"setting {key}={v!r} is not a valid {typ.__name__}") from None
    if cfg["alpha"] < 0:
        raise UsageError("alpha must be >= 0")
    if cfg["precision"] not in (32, 64):
        raise UsageError("precision must be 32 or 64")
    if cfg["segment_frames"] < 1:
        raise UsageError("segment_frames must be >= 1")
    if cfg["arch"] not in mdl.PRESETS:
        raise UsageError(f"arch must be one of {sorted(mdl.PRESETS)}")
    return cfg


def config_hash(cfg: dict) -> str:
    text = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg) if k not in _UNHASHED)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _header(cfg) -> str:
    return f"config_hash={config_hash(cfg)}"


def _require_path(cfg, key, kind="file"):
    value = cfg.get(key)
    if not value:
        raise UsageError(f"--{key.replace('_', '-')} is required")
    path = Path(value)
    ok = path.is_file() if kind == "file" else path.is_dir()
    if not ok:
        raise UsageError(f"{key} path {value} does not exist")
    return path


def _hyperparams(cfg) -> training.Hyperparams:
    return training.Hyperparams(
        alpha=cfg["alpha"], learning_rate=cfg["learning_rate"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], seed=cfg["seed"], precision=cfg["precision"],
        threshold=cfg["threshold"], checkpoint_every=cfg["checkpoint_every"],
    )


def _feature_config(cfg, records) -> FeatureConfig:
    rates = {r.audio.sample_rate for r in records}
    sr = cfg["sample_rate"] or (rates.pop() if len(rates) == 1 else None)
    if sr is None:
        raise UsageError(f"clips have mixed sample rates {sorted(rates)}; resampling is not supported")
    try:
        return FeatureConfig(n_mels=cfg["n_mels"], frame_ms=cfg["frame_ms"], hop_ms=cfg["hop_ms"],
                             sample_rate=sr, fmin=cfg["fmin"], fmax=cfg["fmax"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _feature_config_from_meta(meta) -> FeatureConfig:
    return FeatureConfig(
        n_mels=int(meta["n_mels"]), frame_ms=float(meta["frame_ms"]), hop_ms=float(meta["hop_ms"]),
        sample_rate=int(meta["sample_rate"]), fmin=float(meta["fmin"]), fmax=float(meta["fmax"]),
        log_floor=float(meta["log_floor"]),
    )


def _split_labels(s):
    return [x.strip() for x in s.split(",") if x.strip()] if s else None


def _load_dataset(cfg, events=None, scenes=None, fcfg=None) -> data.Dataset:
    index = _require_path(cfg, "index")
    if cfg["annotations"]:
        _require_path(cfg, "annotations", kind="dir")
    try:
        records = data.load_corpus(index, cfg["annotations"])
        if not records:
            raise UsageError(f"{index} lists no clips")
        fcfg = fcfg or _feature_config(cfg, records)
        return data.build_dataset(
            records, fcfg,
            events=events or _split_labels(cfg["events"]),
            scenes=scenes or _split_labels(cfg["scenes"]),
        )
    except (ValueError, KeyError, FileNotFoundError) as exc:
        raise UsageError(f"corpus {index}: {exc}") from None


def _arch(cfg, ds) -> mdl.Architecture:
    try:
        return training.arch_for(ds, mdl.PRESETS[cfg["arch"]])
    except ValueError as exc:
        raise UsageError(f"architecture does not fit the corpus: {exc}") from None


def _checkpoint_meta(cfg, ds) -> dict:
    f = ds.feature_cfg
    return {
        "config_hash": config_hash(cfg),
        "events": ds.events.labels,
        "scenes": ds.scene_vocab.labels,
        "n_mels": f.n_mels, "frame_ms": f.frame_ms, "hop_ms": f.hop_ms,
        "sample_rate": f.sample_rate, "fmin": f.fmin, "fmax": f.fmax, "log_floor": f.log_floor,
        "threshold": cfg["threshold"],
    }


def _load_checkpoint(cfg):
    path = _require_path(cfg, "checkpoint")
    p, meta = mdl.load_checkpoint(path)
    return p, meta


# -- subcommands -----------------------------------------------------------


def cmd_synth(cfg):
    spec = data.SynthSpec(
        clips_per_scene=cfg["clips_per_scene"], clip_seconds=cfg["clip_seconds"],
        sample_rate=cfg["sample_rate"] or 16000, n_folds=cfg["folds"],
    )
    records = data.synth_corpus(spec, seed=cfg["seed"])
    index = data.write_corpus(records, cfg["out"])
    print(f"wrote {len(records)} clips; index {index}")
    return 0


def cmd_train(cfg):
    ds = _load_dataset(cfg)
    arch = _arch(cfg, ds)
    hp = _hyperparams(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    p, hist = training.train_fold(ds, cfg["holdout_fold"], hp, arch, checkpoint_dir=out)
    mdl.save_checkpoint(out / "model.ckpt", p, _checkpoint_meta(cfg, ds))
    (out / "history.csv").write_text(hist.to_csv(_header(cfg)))
    last = hist.epochs[-1] if hist.epochs else None
    if last:
        print(f"trained {len(hist)} epochs: E1={last['E1']:.4f} E2={last['E2']:.4f} E={last['E']:.4f}")
    print(f"checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_evaluate(cfg):
    p, meta = _load_checkpoint(cfg)
    ds = _load_dataset(cfg, _split_labels(meta["events"]), _split_labels(meta["scenes"]), _feature_config_from_meta(meta))
    if cfg["fold"] is not None:
        ds = ds.subset(ds.folds == cfg["fold"])
        if len(ds) == 0:
            raise UsageError(f"fold {cfg['fold']} has no clips")
    res = training.evaluate(p, ds, cfg["threshold"], cfg["segment_frames"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    rows = training.report_rows(res, ds.events.labels, ds.scene_vocab.labels)
    metrics.write_report(out / "metrics.csv", rows, _header(cfg))
    print(f"event F {res.event_f:.4f}  event ER {res.event_er:.4f}  scene F {res.scene_f:.4f}")
    return 0


def cmd_predict(cfg, wavs):
    p, meta = _load_checkpoint(cfg)
    fcfg = _feature_config_from_meta(meta)
    events = data.Vocabulary(_split_labels(meta["events"]))
    scenes = _split_labels(meta["scenes"])
    if wavs:
        clips = [read_wav(w) for w in wavs]
    else:
        records = data.load_corpus(_require_path(cfg, "index"), cfg["annotations"])
        clips = [r.audio for r in records]
    from .features import log_mel

    out = Path(cfg["out"])
    pred_dir = out / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"# {_header(cfg)}\n"]
    for clip in clips:
        X = log_mel(clip, fcfg).data
        if X.shape[1] != p.arch.n_frames:
            raise UsageError(f"clip {clip.clip_id} has {X.shape[1]} frames; the model expects {p.arch.n_frames}")
        ev, sc, _ = mdl.forward(X, p)
        roll = mdl.predict_events(ev, cfg["threshold"])
        evs = data.roll_to_events(roll, events, fcfg)
        (pred_dir / f"{clip.clip_id}.ann").write_text(data.format_event_annotations(evs), encoding="utf-8")
        lines.append(f"{clip.clip_id}\t{scenes[int(mdl.predict_scene(sc))]}\n")
    (out / "scenes.tsv").write_text("".join(lines), encoding="utf-8")
    print(f"predicted {len(clips)} clips into {out}")
    return 0


def cmd_gradcheck(cfg):
    worst = 0.0
    for s in range(cfg["seed"], cfg["seed"] + cfg["gradcheck_seeds"]):
        res = training.gradient_check(s)
        for a, (err, per) in res.items():
            worst = max(worst, err)
            print(f"seed {s} alpha {a:g}: max relative error {err:.3e} ({max(per, key=per.get)})")
    ok = worst < GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 2


def cmd_sweep(cfg):
    try:
        alphas = [float(a) for a in cfg["alphas"].split(",") if a.strip()]
    except ValueError:
        raise UsageError(f"bad --alphas list {cfg['alphas']!r}") from None
    if not alphas or any(a < 0 for a in alphas):
        raise UsageError("--alphas needs one or more non-negative values")
    ds = _load_dataset(cfg)
    arch = _arch(cfg, ds)
    rows = training.sweep_alpha(ds, alphas, _hyperparams(cfg), cfg["folds"], arch, cfg["segment_frames"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "alpha_sweep.csv", "w", newline="") as fh:
        fh.write(f"# {_header(cfg)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "event_f", "event_er", "scene_f"])
        for a, f, er, sf in rows:
            w.writerow([repr(a), f"{f:.6f}", f"{er:.6f}", f"{sf:.6f}"])
            print(f"alpha {a:g}: event F {f:.4f}  ER {er:.4f}  scene F {sf:.4f}")
    return 0


# -- argument parsing ------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="flat key = value settings file")
    g.add_argument("--seed", type=int)
    g.add_argument("--alpha", type=float, help="scene-loss weight (default 0.01)")
    g.add_argument("--folds", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--segment-frames", dest="segment_frames", type=int)
    g.add_argument("--precision", type=int, choices=(32, 64))
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--learning-rate", dest="learning_rate", type=float)
    g.add_argument("--threshold", type=float)
    g.add_argument("--arch", choices=sorted(mdl.PRESETS))
    g.add_argument("--index", help="clip index TSV")
    g.add_argument("--annotations", help="directory of <clip_id>.ann files")
    g.add_argument("--sample-rate", dest="sample_rate", type=int)
    g.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="scenesound", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint + history CSV")
    p.add_argument("--holdout-fold", dest="holdout_fold", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a corpus")
    p.add_argument("--checkpoint")
    p.add_argument("--fold", type=int)

    p = sub.add_parser("predict", parents=[common], help="write event annotations and scene labels")
    p.add_argument("--checkpoint")
    p.add_argument("wavs", nargs="*")

    p = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    p.add_argument("--seeds", dest="gradcheck_seeds", type=int)

    p = sub.add_parser("sweep-alpha", parents=[common], help="cross-validate over scene-loss weights")
    p.add_argument("--alphas")

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic corpus")
    p.add_argument("--clips-per-scene", dest="clips_per_scene", type=int)
    p.add_argument("--clip-seconds", dest="clip_seconds", type=float)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "predict":
            return cmd_predict(cfg, args.wavs)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        if args.command == "sweep-alpha":
            return cmd_sweep(cfg)
    except UsageError as exc:
        print(f"scenesound: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("run failed", exc_info=True)
        print(f"scenesound: {args.command} failed: {exc}", file=sys.stderr)
        return 2
    return 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
