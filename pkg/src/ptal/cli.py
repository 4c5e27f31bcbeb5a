"""Command-line entry point: ``ptal <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or model
error. Progress goes to stderr as JSON lines; stdout carries one JSON
summary per command.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import datagen, kernels, metrics, nn, pipeline
from . import keypoint as kp
from .config import RunConfig
from .errors import ConfigError, PTALError
from .localizer import LocalizerConfig, LocalizerModel, label_short_videos, train_localizer
from .mapper import Mapper, simulate_pairs, train_mapper

DATA_FLAGS = {
    "num_videos": int, "num_test": int, "T": int, "D": int, "C": int,
    "noise_sigma": float, "label_distribution": str, "gap_min": int,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not serializable: {type(v)}")


class Progress:
    def __init__(self, stream=None, quiet: bool = False):
        self.stream = stream or sys.stderr
        self.quiet = quiet
        self.t0 = time.perf_counter()

    def __call__(self, record: dict) -> None:
        if self.quiet:
            return
        rec = dict(record, elapsed_s=round(time.perf_counter() - self.t0, 3))
        print(json.dumps(rec, default=_jsonable, sort_keys=True), file=self.stream, flush=True)


def _pair(text):
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}") from exc
    return [lo, hi]


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# flag groups; every dest matches a RunConfig field (or a data field)


def _add_common(p):
    p.add_argument("--config", help="JSON file with RunConfig values")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="worker threads (fallback: PTAL_THREADS)")
    p.add_argument("--quiet", action="store_true", help="no progress on stderr")


def _add_data_gen(p):
    p.add_argument("--num-videos", dest="num_videos", type=int)
    p.add_argument("--num-test", dest="num_test", type=int)
    p.add_argument("--T", dest="T", type=int)
    p.add_argument("--D", dest="D", type=int)
    p.add_argument("--C", dest="C", type=int)
    p.add_argument("--noise", dest="noise_sigma", type=float)
    p.add_argument("--label-dist", dest="label_distribution", choices=["uniform", "gaussian"])
    p.add_argument("--instances", dest="instances_per_video", type=_pair, help="lo,hi")
    p.add_argument("--length-range", dest="length_range", type=_pair, help="lo,hi")
    p.add_argument("--gap-min", dest="gap_min", type=int)


def _add_mapper(p):
    p.add_argument("--ts", dest="T_s", type=int)
    p.add_argument("--pairs", dest="mapper_pairs", type=int)
    p.add_argument("--mapper-lr", dest="lr_mapper", type=float)
    p.add_argument("--mapper-epochs", dest="mapper_epochs", type=int)
    p.add_argument("--mapper-batch", dest="mapper_batch", type=int)
    p.add_argument("--mapper-target", dest="mapper_target", type=float)


def _add_keypoint(p):
    p.add_argument("--kp-epochs", dest="kp_epochs", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--sg-window", dest="sg_window", type=int)
    p.add_argument("--sg-order", dest="sg_order", type=int)


def _add_localizer(p):
    p.add_argument("--beta", type=float)
    p.add_argument("--loc-epochs", dest="loc_epochs", type=int)
    p.add_argument("--loc-batch", dest="loc_batch", type=int)
    p.add_argument("--no-offset", dest="use_offset", action="store_const", const=False)
    p.add_argument("--no-bg-loss", dest="use_bg_loss", action="store_const", const=False)
    p.add_argument("--pool-divisor", dest="pool_divisor", choices=["T_s", "mask_sum"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptal", description="Point-level temporal action localization toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    _add_common(p)
    _add_data_gen(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-mapper", help="pre-train and freeze the proposal-to-mask mapper")
    _add_common(p)
    _add_mapper(p)
    p.add_argument("--lr", dest="lr_mapper", type=float)
    p.add_argument("--epochs", dest="mapper_epochs", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-keypoint", help="train the keypoint detector on point labels")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", dest="kp_epochs", type=int)
    p.add_argument("--lr", dest="lr_main", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("keypoints", help="extract keypoints with a trained detector")
    _add_common(p)
    _add_keypoint(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="test", choices=["train", "test", "all"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-localizer", help="train location predictor and classifier")
    _add_common(p)
    _add_keypoint(p)
    _add_localizer(p)
    p.add_argument("--data", required=True)
    p.add_argument("--keypoint-model", required=True)
    p.add_argument("--mapper", required=True)
    p.add_argument("--lr", dest="lr_main", type=float)
    p.add_argument("--epochs", dest="loc_epochs", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="predict action segments")
    _add_common(p)
    _add_keypoint(p)
    p.add_argument("--data", required=True)
    p.add_argument("--keypoint-model", required=True)
    p.add_argument("--localizer", required=True)
    p.add_argument("--split", default="test", choices=["train", "test", "all"])
    p.add_argument("--fixed-length", type=float, help="baseline: fixed proposal length on the keypoint")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score predictions against the corpus ground truth")
    _add_common(p)
    p.add_argument("--preds", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ious", dest="iou_thresholds", type=_floats)
    p.add_argument("--split", default="test", choices=["train", "test", "all"])
    p.add_argument("--report", required=True)

    p = sub.add_parser("e2e", help="run every stage with one seed")
    _add_common(p)
    _add_data_gen(p)
    _add_mapper(p)
    _add_keypoint(p)
    _add_localizer(p)
    p.add_argument("--lr", dest="lr_main", type=float)
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _resolve(args) -> RunConfig:
    fields = set(RunConfig.__dataclass_fields__)
    overrides = {k: v for k, v in vars(args).items() if k in fields and k != "paths"}
    cfg = RunConfig.resolve(args.config, overrides)
    cfg.paths = {k: v for k, v in vars(args).items()
                 if k in ("out", "data", "model", "keypoint_model", "mapper", "localizer", "preds", "report")
                 and v is not None}
    return cfg


def _synthetic_config(args, cfg: RunConfig) -> datagen.SyntheticConfig:
    d = datagen.SyntheticConfig().to_dict()
    d["seed"] = cfg.seed
    for k in list(DATA_FLAGS) + ["instances_per_video", "length_range"]:
        v = getattr(args, k, None)
        if v is not None:
            d[k] = v
    return datagen.SyntheticConfig.from_dict(d)


def _split(corpus, name):
    return corpus.videos if name == "all" else corpus.split(name)


def _load_kp(path):
    nets, meta = nn.load_networks(path)
    if "keypoint" not in nets:
        raise PTALError(f"{path}: no keypoint network in checkpoint")
    return nets["keypoint"], meta


def _load_mapper(path):
    nets, meta = nn.load_networks(path)
    if "mapper" not in nets:
        raise PTALError(f"{path}: no mapper network in checkpoint")
    net = nets["mapper"]
    return Mapper(net.with_trainable(False), int(meta.get("T_s", net.out_dim))), meta


def _write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _loc_config(cfg: RunConfig) -> LocalizerConfig:
    return LocalizerConfig(beta=cfg.beta, lr=cfg.lr_main, epochs=cfg.loc_epochs, batch_size=cfg.loc_batch,
                           seed=cfg.seed, use_offset=cfg.use_offset, use_bg_loss=cfg.use_bg_loss,
                           pool_divisor=cfg.pool_divisor)


# ---------------------------------------------------------------------------
# stages (shared by the single-stage commands and e2e)


def stage_mapper(cfg: RunConfig, progress) -> tuple[Mapper, dict]:
    pairs = simulate_pairs(cfg.mapper_pairs, cfg.T_s, seed=[cfg.seed, 2])
    val = simulate_pairs(10_000, cfg.T_s, seed=[cfg.seed, 3])
    mapper = train_mapper(pairs, Mapper.build(cfg.T_s, seed=cfg.seed), lr=cfg.lr_mapper,
                          epochs=cfg.mapper_epochs, batch_size=cfg.mapper_batch, seed=cfg.seed,
                          val_pairs=val, target_accuracy=cfg.mapper_target, progress=progress)
    return mapper, {"T_s": cfg.T_s, "val_accuracy": mapper.accuracy(*val)}


def stage_keypoint(corpus, cfg: RunConfig, progress) -> nn.Network:
    net = kp.default_detector(corpus.D, corpus.C, seed=cfg.seed)
    return kp.train_keypoint_detector(corpus.split("train"), net, epochs=cfg.kp_epochs, lr=cfg.lr_main,
                                      seed=cfg.seed, progress=progress)


def training_short_videos(videos, kp_net, cfg: RunConfig, T_s: int):
    svs, labels, skipped = [], [], 0
    for v in videos:
        _, kps = kp.detect_keypoints(kp_net, v.features, cfg.theta, cfg.sg_window, cfg.sg_order)
        kept, lab, n_skip = label_short_videos(kp.segment_video(v.features, kps, T_s, v.video_id), v.points)
        svs += kept
        labels += lab
        skipped += n_skip
    return svs, labels, skipped


def stage_localizer(corpus, kp_net, mapper, cfg: RunConfig, progress):
    if kp_net.in_dim != corpus.D or kp_net.out_dim != corpus.C:
        raise PTALError(f"detector is {kp_net.in_dim}->{kp_net.out_dim}, corpus has D={corpus.D}, C={corpus.C}")
    svs, labels, skipped = training_short_videos(corpus.split("train"), kp_net, cfg, mapper.T_s)
    progress({"stage": "localizer", "short_videos": len(svs), "skipped": skipped})
    loc = train_localizer(svs, labels, mapper, _loc_config(cfg), C=corpus.C, progress=progress)
    return loc, {"short_videos": len(svs), "skipped": skipped}


def stage_infer(videos, kp_net, loc, cfg: RunConfig, fixed_length=None):
    def run_one(v):
        return pipeline.infer(v.video_id, v.features, kp_net, loc, cfg.theta, cfg.sg_window, cfg.sg_order,
                              fixed_length=fixed_length)

    if cfg.threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            chunks = list(ex.map(run_one, videos))
    else:
        chunks = [run_one(v) for v in videos]
    return [p for chunk in chunks for p in chunk]


def _report(preds, videos, cfg: RunConfig, C: int) -> dict:
    return metrics.evaluate(preds, pipeline.ground_truths(videos), cfg.iou_thresholds, C).to_dict()


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args, cfg, progress):
    corpus = datagen.generate_dataset(_synthetic_config(args, cfg))
    path = datagen.save_corpus(corpus, args.out, cfg.to_dict())
    progress({"stage": "gen-data", "videos": len(corpus.videos)})
    return {"manifest": str(path), "videos": len(corpus.videos)}


def cmd_train_mapper(args, cfg, progress):
    mapper, meta = stage_mapper(cfg, progress)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    nn.save_networks(args.out, {"mapper": mapper.net}, dict(meta, run_config=cfg.to_dict()))
    return {"mapper": args.out, **meta}


def cmd_train_keypoint(args, cfg, progress):
    corpus = datagen.load_corpus(args.data)
    net = stage_keypoint(corpus, cfg, progress)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    nn.save_networks(args.out, {"keypoint": net}, {"D": corpus.D, "C": corpus.C, "run_config": cfg.to_dict()})
    return {"model": args.out}


def cmd_keypoints(args, cfg, progress):
    corpus = datagen.load_corpus(args.data)
    net, _ = _load_kp(args.model)
    out = {}
    for v in _split(corpus, args.split):
        _, kps = kp.detect_keypoints(net, v.features, cfg.theta, cfg.sg_window, cfg.sg_order)
        out[v.video_id] = [{"t": k.t, "class_id": k.class_id, "prob": k.prob} for k in kps]
    _write_json(args.out, {"run_config": cfg.to_dict(), "keypoints": out})
    return {"keypoints": args.out, "count": sum(len(v) for v in out.values())}


def cmd_train_localizer(args, cfg, progress):
    corpus = datagen.load_corpus(args.data)
    kp_net, _ = _load_kp(args.keypoint_model)
    mapper, _ = _load_mapper(args.mapper)
    loc, info = stage_localizer(corpus, kp_net, mapper, cfg, progress)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    loc.save(args.out, dict(info, run_config=cfg.to_dict()))
    return {"localizer": args.out, **info}


def cmd_infer(args, cfg, progress):
    corpus = datagen.load_corpus(args.data)
    kp_net, _ = _load_kp(args.keypoint_model)
    loc, _ = LocalizerModel.load(args.localizer)
    preds = stage_infer(_split(corpus, args.split), kp_net, loc, cfg, args.fixed_length)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    pipeline.save_predictions(args.out, preds, cfg.to_dict())
    return {"predictions": args.out, "count": len(preds)}


def cmd_eval(args, cfg, progress):
    preds = pipeline.load_predictions(args.preds)
    corpus = datagen.load_corpus(args.data)
    report = _report(preds, _split(corpus, args.split), cfg, corpus.C)
    _write_json(args.report, {"run_config": cfg.to_dict(), "report": report})
    return {"report": args.report, "avg_map": report["avg_map"], "map_per_iou": report["map_per_iou"]}


def cmd_e2e(args, cfg, progress):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rc = cfg.to_dict()
    corpus = datagen.generate_dataset(_synthetic_config(args, cfg))
    datagen.save_corpus(corpus, out / "data", rc)
    clock = time.perf_counter()

    def lap(name):
        nonlocal clock
        now = time.perf_counter()
        progress({"stage": name, "stage_seconds": round(now - clock, 3)})
        clock = now

    kp_net = stage_keypoint(corpus, cfg, progress)
    nn.save_networks(out / "keypoint.bin", {"keypoint": kp_net}, {"D": corpus.D, "C": corpus.C, "run_config": rc})
    lap("keypoint")
    mapper, mmeta = stage_mapper(cfg, progress)
    nn.save_networks(out / "mapper.bin", {"mapper": mapper.net}, dict(mmeta, run_config=rc))
    lap("mapper")
    loc, info = stage_localizer(corpus, kp_net, mapper, cfg, progress)
    loc.save(out / "localizer.bin", dict(info, run_config=rc))
    lap("localizer")
    test = corpus.split("test")
    preds = stage_infer(test, kp_net, loc, cfg)
    pipeline.save_predictions(out / "preds.json", preds, rc)
    report = _report(preds, test, cfg, corpus.C)
    baseline = _report(stage_infer(test, kp_net, loc, cfg, fixed_length=0.5), test, cfg, corpus.C)
    doc = {"run_config": rc, "data_config": corpus.meta["config"], "mapper_val_accuracy": mmeta["val_accuracy"],
           "localizer": info, "report": report, "baseline_length_0.5": baseline}
    _write_json(out / "report.json", doc)
    lap("evaluate")
    return {"out": str(out), "avg_map": report["avg_map"], "map_per_iou": report["map_per_iou"],
            "baseline_map_per_iou": baseline["map_per_iou"]}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-mapper": cmd_train_mapper,
    "train-keypoint": cmd_train_keypoint,
    "keypoints": cmd_keypoints,
    "train-localizer": cmd_train_localizer,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "e2e": cmd_e2e,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    progress = Progress(quiet=args.quiet)
    try:
        cfg = _resolve(args)
        progress({"stage": "start", "command": args.command, "backend": kernels.BACKEND})
        result = COMMANDS[args.command](args, cfg, progress)
    except ConfigError as exc:
        print(f"ptal: configuration error: {exc}", file=sys.stderr)
        return 1
    except (PTALError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"ptal: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, default=_jsonable, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
