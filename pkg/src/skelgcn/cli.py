"""Command-line entry point.

Commands: preprocess, train, eval, predict, fuse, export-graph, gradcheck.
Every command is deterministic given its resolved config (seeds included),
and every output file embeds the tool version, the resolved config, and a
content checksum. Exit codes: 0 success, 1 usage error, 2 data/config
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .agc import AgclParams
from .checkpoint import load_checkpoint, save_checkpoint
from .config import MODALITY_CHOICES, build_model_config, resolve_config
from .data import (Dataset, augment_random, align_axes, center_on_spine, content_sha256,
                   derive_bones, derive_motion, pad_frames, parse_samples,
                   select_bodies_by_energy, write_samples)
from .errors import (CheckpointError, ConfigError, DataError, NumericalError,
                     ShapeError, SkelGcnError)
from .gradsuite import BOUND, run_suite
from .network import count_parameters, init_model, model_forward
from .synth import synth_dataset
from .training import (Schedule, StreamScores, evaluate, fuse_scores, init_optimizer,
                       top_k_hits, train)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _write_ndjson(path, lines: list[str], cfg: dict, extra: dict | None = None) -> None:
    header = {"tool_version": __version__, "config": cfg,
              "content_sha256": content_sha256(lines)}
    if extra:
        header.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for line in lines:
            fh.write(line + "\n")


def _write_json(path, obj: dict, cfg: dict) -> None:
    body = json.dumps(obj, separators=(",", ":"), sort_keys=True)
    doc = {"tool_version": __version__, "config": cfg,
           "content_sha256": content_sha256([body]), "content": obj}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, separators=(",", ":"), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# preprocess

def preprocess_sample(sample, cfg, topo):
    sample = select_bodies_by_energy(sample, keep=cfg["bodies"])
    if cfg["coord_dims"] >= 3:
        sample = center_on_spine(sample, topo.center_joint)
        rs, ls, sb, sp = cfg["align_joints"]
        sample = align_axes(sample, right_shoulder=rs, left_shoulder=ls,
                            spine_base=sb, spine=sp)
    sample = pad_frames(sample, cfg["max_frames"])
    if cfg["augment"]:
        stable = zlib.crc32(sample.id.encode("utf-8"))
        sample = augment_random(sample, rng_seed=(cfg["seed"] << 32) ^ stable,
                                max_rot_deg=cfg["max_rotation_deg"],
                                max_translate=cfg["max_translation"],
                                crop_t=min(cfg["crop_frames"], cfg["max_frames"]),
                                coord_dims=cfg["coord_dims"])
    return sample


def cmd_preprocess(cfg: dict) -> int:
    out_dir = Path(cfg["out"] or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg["synth"]:
        # topology/classes were already pinned to the generator's stick figure
        # by the config resolver
        ds = synth_dataset(cfg["synth_per_class"], t=cfg["synth_frames"],
                           v=cfg["synth_joints"], seed=cfg["seed"])
    else:
        if not cfg["in_path"]:
            print("preprocess: --in PATH or --synth required", file=sys.stderr)
            return EXIT_USAGE
        ds = parse_samples(cfg["in_path"])
    topo = build_model_config(cfg).topology
    processed = Dataset(samples=[preprocess_sample(s, cfg, topo) for s in ds.samples],
                        class_names=ds.class_names, modality="joint")
    bones = derive_bones(processed, topo)
    streams = {
        "joint": processed,
        "bone": bones,
        "joint_motion": derive_motion(processed),
        "bone_motion": derive_motion(bones),
    }
    files = []
    for name, stream in streams.items():
        path = out_dir / f"{name}.ndjson"
        write_samples(path, stream, tool_version=__version__, config=cfg)
        files.append(path.name)
    _write_json(out_dir / "manifest.json",
                {"classes": processed.class_names, "files": files}, cfg)
    print(f"preprocess: wrote {len(processed.samples)} samples x {len(files)} modalities to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def _load_stream(cfg: dict, base_dir: str) -> Dataset:
    path = Path(base_dir) / f"{cfg['modality']}.ndjson"
    if not path.exists():
        raise DataError(f"modality file not found: {path}")
    return parse_samples(path)


def cmd_train(cfg: dict) -> int:
    out_dir = Path(cfg["out"] or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds = _load_stream(cfg, cfg["data_dir"])
    val_ds = _load_stream(cfg, cfg["val_dir"]) if cfg["val_dir"] else None
    model_cfg = build_model_config(cfg)
    schedule = Schedule(base_lr=cfg["lr"], milestones=tuple(cfg["milestones"]),
                        gamma=cfg["lr_decay"], total_epochs=cfg["total_epochs"])
    start_epoch = 0
    if cfg["resume"]:
        model, opt, start_epoch = load_checkpoint(cfg["resume"], expect_config=model_cfg)
        if opt is None:
            opt = init_optimizer(model, lr=cfg["lr"], momentum=cfg["momentum"],
                                 nesterov=cfg["nesterov"], weight_decay=cfg["weight_decay"])
    else:
        model = init_model(model_cfg, seed=cfg["seed"])
        opt = init_optimizer(model, lr=cfg["lr"], momentum=cfg["momentum"],
                             nesterov=cfg["nesterov"], weight_decay=cfg["weight_decay"])
    log.info("training %s stream: %d samples, %d parameters", cfg["modality"],
             len(train_ds.samples), count_parameters(model))
    records = train(model, train_ds, schedule, opt, freeze_epochs=cfg["freeze_epochs"],
                    seed=cfg["seed"], batch_size=cfg["batch_size"], val_ds=val_ds,
                    start_epoch=start_epoch)
    _write_ndjson(out_dir / "train_log.ndjson",
                  [json.dumps(r, separators=(",", ":"), sort_keys=True) for r in records],
                  cfg)
    save_checkpoint(model, opt, schedule.total_epochs, out_dir / "checkpoint.bin")
    last = records[-1] if records else {}
    print(f"train: {cfg['modality']} stream finished at epoch {schedule.total_epochs}, "
          f"loss={last.get('loss', float('nan')):.4f}, train_acc={last.get('train_acc', 0.0):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / predict / fuse

def _scores_lines(scores: StreamScores) -> list[str]:
    lines = []
    for i, sid in enumerate(scores.ids):
        lines.append(json.dumps({"id": sid, "label": scores.labels[i],
                                 "probs": scores.probs[i].tolist()},
                                separators=(",", ":")))
    return lines


def _read_scores(path) -> StreamScores:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise DataError(f"{path}: empty scores file")
    start = 0
    stream = "joint"
    first = json.loads(raw[0])
    if isinstance(first, dict) and "tool_version" in first:
        start = 1
        stream = first.get("stream", "joint")
        want = first.get("content_sha256")
        if want is not None and want != content_sha256(raw[1:]):
            raise DataError(f"{path}: content checksum mismatch")
    ids, labels, probs = [], [], []
    for line in raw[start:]:
        if not line.strip():
            continue
        obj = json.loads(line)
        ids.append(str(obj["id"]))
        labels.append(obj["label"])
        probs.append(obj["probs"])
    return StreamScores(ids=ids, probs=np.asarray(probs, dtype=np.float64),
                        labels=labels, stream=stream)


def _run_eval(cfg: dict, require_labels: bool) -> int:
    model, _, _ = load_checkpoint(cfg["checkpoint"])
    ds = parse_samples(cfg["in_path"])
    if require_labels and any(s.label is None for s in ds.samples):
        raise DataError("eval requires labeled samples; use `predict` for unlabeled data")
    mcfg = model.config
    if ds.samples:
        t, m, v, c = ds.samples[0].data.shape
        if (v, c, m) != (mcfg.topology.num_joints, mcfg.in_channels, mcfg.bodies):
            raise ConfigError(
                f"dataset dims V={v}, C={c}, M={m} do not match checkpoint config "
                f"V={mcfg.topology.num_joints}, C={mcfg.in_channels}, M={mcfg.bodies}")
    accs, scores = evaluate(model, ds, ks=(1, 5), batch_size=cfg["batch_size"])
    out = Path(cfg["out"] or "scores.ndjson")
    _write_ndjson(out, _scores_lines(scores), cfg, extra={"stream": scores.stream})
    if accs:
        print(f"eval: top-1 {accs[1]:.4f}  top-5 {accs.get(5, 1.0):.4f}  ({len(scores.ids)} samples)")
    else:
        print(f"predict: wrote scores for {len(scores.ids)} samples")
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    return _run_eval(cfg, require_labels=True)


def cmd_predict(cfg: dict) -> int:
    return _run_eval(cfg, require_labels=False)


def cmd_fuse(cfg: dict, score_files: list[str]) -> int:
    streams = [_read_scores(p) for p in score_files]
    weights = cfg["fusion_weights"] or [1.0] * len(streams)
    for s in streams:
        labeled = [i for i, lab in enumerate(s.labels) if lab is not None]
        if labeled:
            lab = np.array([s.labels[i] for i in labeled])
            top1 = top_k_hits(s.probs[labeled], lab, 1) / len(labeled)
            top5 = top_k_hits(s.probs[labeled], lab, 5) / len(labeled)
            print(f"fuse: stream {s.stream:<12} top-1 {top1:.4f}  top-5 {top5:.4f}")
    fused, accs = fuse_scores(streams, list(weights))
    if accs:
        print(f"fuse: fused ({len(streams)} streams)  top-1 {accs[1]:.4f}  top-5 {accs[5]:.4f}")
    out = Path(cfg["out"] or "fused_scores.ndjson")
    _write_ndjson(out, _scores_lines(fused), cfg, extra={"stream": "fused"})
    return EXIT_OK


# ---------------------------------------------------------------------------
# export-graph / gradcheck

def cmd_export_graph(cfg: dict) -> int:
    model, _, _ = load_checkpoint(cfg["checkpoint"])
    mcfg = model.config
    export: dict = {
        "topology": {
            "num_joints": mcfg.topology.num_joints,
            "edges": [list(e) for e in mcfg.topology.edges],
            "center_joint": mcfg.topology.center_joint,
        },
        "body_adjacency": model.adjacency.tolist(),
        "layers": [],
    }
    for i, bp in enumerate(model.blocks):
        layer = {"block": i, "adaptive": isinstance(bp.gcn, AgclParams)}
        if isinstance(bp.gcn, AgclParams):
            layer["global_graphs"] = [t.data.tolist() for t in bp.gcn.B]
            layer["gate"] = float(bp.gcn.gate_alpha.data)
            if bp.gcn.gate_b is not None:
                layer["gate_b"] = float(bp.gcn.gate_b.data)
            layer["frozen"] = bp.gcn.b_frozen
        export["layers"].append(layer)
    if cfg["in_path"]:
        ds = parse_samples(cfg["in_path"])
        if not ds.samples:
            raise DataError(f"{cfg['in_path']}: no samples to trace")
        sample = ds.samples[0]
        capture: list[dict] = []
        x = sample.data.transpose(3, 0, 2, 1)[None]
        model_forward(x, model, mode="eval", capture=capture)
        export["sample_id"] = sample.id
        export["per_sample"] = [
            {k: (v.tolist() if isinstance(v, np.ndarray) else
                 [a.tolist() for a in v] if isinstance(v, list) else v)
             for k, v in cap.items()}
            for cap in capture
        ]
    out = Path(cfg["out"] or "graph_export.json")
    _write_json(out, export, cfg)
    print(f"export-graph: wrote {out}")
    return EXIT_OK


def cmd_gradcheck(cfg: dict) -> int:
    results, ok = run_suite()
    worst_name, worst = max(results, key=lambda kv: kv[1])
    for name, err in results:
        status = "ok" if err <= BOUND else "FAIL"
        print(f"gradcheck: {status:<4} {name:<28} max_rel_err={err:.3e}")
    print(f"gradcheck: {'PASS' if ok else 'FAIL'} "
          f"({len(results)} checks, worst {worst_name} at {worst:.3e}, bound {BOUND:.0e})")
    if cfg["out"]:
        _write_ndjson(Path(cfg["out"]),
                      [json.dumps({"check": n, "max_rel_err": float(e),
                                   "passed": bool(e <= BOUND)},
                                  separators=(",", ":")) for n, e in results],
                      cfg)
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# argument wiring

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON run-config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--modality", choices=MODALITY_CHOICES, default=None)
    p.add_argument("--weights", default=None, help="comma-separated fusion weights")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single-thread float64 mode for bitwise reproducibility")
    p.add_argument("--out", default=None, help="output file or directory")


def _overrides(args: argparse.Namespace) -> dict:
    over: dict = {}
    mapping = {
        "seed": "seed", "modality": "modality", "deterministic": "deterministic",
        "out": "out", "in_path": "in_path", "data_dir": "data_dir", "val_dir": "val_dir",
        "checkpoint": "checkpoint", "resume": "resume", "synth": "synth",
    }
    for attr, key in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            over[key] = val
    if getattr(args, "weights", None):
        over["fusion_weights"] = [float(w) for w in args.weights.split(",")]
    return over


def build_parser() -> _Parser:
    parser = _Parser(prog="skelgcn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="run the preprocessing pipeline, emit 4 modality files")
    p.add_argument("--in", dest="in_path", default=None, help="raw NDJSON sample file")
    p.add_argument("--synth", action="store_true", default=None,
                   help="generate the synthetic stick-figure dataset instead of reading --in")
    _add_common(p)

    p = sub.add_parser("train", help="train one stream")
    p.add_argument("--data", dest="data_dir", default=None, help="directory of modality files")
    p.add_argument("--val", dest="val_dir", default=None, help="validation modality directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    _add_common(p)

    for name in ("eval", "predict"):
        p = sub.add_parser(name, help=f"{name} a checkpoint on a dataset")
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--in", dest="in_path", default=None, help="NDJSON sample file")
        _add_common(p)

    p = sub.add_parser("fuse", help="weighted-sum fusion of stream score files")
    p.add_argument("scores", nargs="+", help="score files from eval")
    _add_common(p)

    p = sub.add_parser("export-graph", help="dump learned graphs and attention maps as JSON")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--in", dest="in_path", default=None,
                   help="optional sample file for per-sample graphs and maps")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    _add_common(p)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    limiter = None
    try:
        cfg = resolve_config(args.config, _overrides(args))
        if cfg["deterministic"]:
            # float64 is set by the config resolver; pin BLAS to one thread
            limiter = threadpool_limits(limits=1)
        if args.command == "preprocess":
            return cmd_preprocess(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "fuse":
            return cmd_fuse(cfg, args.scores)
        if args.command == "export-graph":
            return cmd_export_graph(cfg)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        # a diverging training run is a data/config problem for the train
        # command; other numerical failures exit 3
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if args.command == "train" else EXIT_NUMERIC
    except (ConfigError, DataError, CheckpointError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SkelGcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
