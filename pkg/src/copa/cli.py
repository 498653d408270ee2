"""Command-line front end: thin wrappers over the harness, data, intervention,
explanation and service modules.

Config files are YAML with the sections ``backbone``, ``model`` and ``train``;
every setting can be overridden on the command line. On failure a JSON error
record is written to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from . import data as data_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import BackboneConfig
from .errors import CopaError
from .explain import export_explanation
from .gradcheck import run_gradcheck
from .harness import TrainConfig, ablate, build_model, evaluate, train
from .intervention import intervention_sweep
from .metrics import format_report
from .model import ModelConfig
from .schema import load_schema


def _load_yaml(path: str | None) -> dict:
    if not path:
        return {}
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    return doc or {}


def _model_config(doc: dict, n_classes: int, args: argparse.Namespace) -> ModelConfig:
    backbone_doc = dict(doc.get("backbone", {}))
    backbone_doc.setdefault("layers", 4)
    backbone_doc.setdefault("dim", 64)
    backbone_doc.setdefault("heads", 4)
    backbone_doc.setdefault("image_size", 32)
    backbone_doc.setdefault("patch_size", 4)
    backbone_doc["num_classes"] = n_classes
    model_doc = dict(doc.get("model", {}))
    for flag, dest in (
        ("multilayer_aggregation", "mla"),
        ("concept_prompts", "cpt"),
        ("freeze_backbone", "fvb"),
    ):
        value = getattr(args, dest, None)
        if value is not None:
            model_doc[flag] = value
    return ModelConfig(backbone=BackboneConfig(**backbone_doc), **model_doc)


def _train_config(doc: dict, args: argparse.Namespace) -> TrainConfig:
    train_doc = dict(doc.get("train", {}))
    overrides = {
        "learning_rate": getattr(args, "lr", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "concept_loss_weight": getattr(args, "concept_loss_weight", None),
        "seed": getattr(args, "seed", None),
        "split_seed": getattr(args, "split_seed", None),
    }
    for key, value in overrides.items():
        if value is not None:
            train_doc[key] = value
    if "split_ratios" in train_doc:
        train_doc["split_ratios"] = tuple(train_doc["split_ratios"])
    return TrainConfig(**train_doc)


def _split_from_args(dataset, train_cfg: TrainConfig):
    return data_mod.split(dataset, train_cfg.split_ratios, train_cfg.split_seed)


def cmd_gen_data(args: argparse.Namespace) -> int:
    doc = _load_yaml(args.config)
    cfg = data_mod.SyntheticConfig(
        count=args.count if args.count is not None else doc.get("count", 2000),
        image_size=args.image_size if args.image_size is not None else doc.get("image_size", 32),
        noise=args.noise if args.noise is not None else doc.get("noise", 0.03),
        seed=args.seed if args.seed is not None else doc.get("seed", 0),
    )
    dataset = data_mod.generate_synthetic(cfg)
    data_mod.save_dataset(dataset, args.out, meta=cfg.to_dict())
    print(f"wrote {len(dataset)} samples to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    doc = _load_yaml(args.config)
    schema = load_schema(args.schema) if args.schema else data_mod.synthetic_schema()
    dataset = data_mod.load_dataset(args.data)
    train_cfg = _train_config(doc, args)
    model_cfg = _model_config(doc, schema.n_classes, args)

    train_ds, val_ds, test_ds = _split_from_args(dataset, train_cfg)
    model = build_model(schema, model_cfg, seed=train_cfg.seed)
    result = train(model, train_cfg, train_ds, val_ds)
    save_checkpoint(args.out, model, train_config=train_cfg.to_dict())

    report = evaluate(model, test_ds)
    print(f"best epoch {result.best_epoch} (val disease ACC {result.best_val_acc:.3f})")
    print(format_report(report))
    if args.history:
        Path(args.history).write_text(json.dumps(result.history, indent=2), encoding="utf-8")
        print(f"wrote loss curves to {args.history}")
    print(f"wrote checkpoint to {args.out}")
    return 0


def _resolve_split(args, dataset, payload):
    train_doc = payload.get("train_config") or {}
    ratios = tuple(train_doc.get("split_ratios", (0.7, 0.15, 0.15)))
    seed = train_doc.get("split_seed", 0)
    parts = dict(zip(("train", "val", "test"), data_mod.split(dataset, ratios, seed)))
    return parts[args.split]


def cmd_eval(args: argparse.Namespace) -> int:
    model, _, payload = load_checkpoint(args.ckpt)
    dataset = data_mod.load_dataset(args.data)
    part = _resolve_split(args, dataset, payload)
    report = evaluate(model, part)
    print(format_report(report))
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    doc = _load_yaml(args.config)
    schema = load_schema(args.schema) if args.schema else data_mod.synthetic_schema()
    dataset = data_mod.load_dataset(args.data)
    train_cfg = _train_config(doc, args)
    model_cfg = _model_config(doc, schema.n_classes, args)
    train_ds, val_ds, test_ds = _split_from_args(dataset, train_cfg)

    rows = ablate(schema, model_cfg, train_cfg, train_ds, val_ds, test_ds)
    header = f"{'MLA':>4} {'CPT':>4} {'FVB':>4} {'label ACC':>10} {'label F1':>9} {'concept ACC':>12} {'concept F1':>11}"
    print(header)
    for row in rows:
        print(
            f"{'on' if row['multilayer_aggregation'] else 'off':>4} "
            f"{'on' if row['concept_prompts'] else 'off':>4} "
            f"{'on' if row['freeze_backbone'] else 'off':>4} "
            f"{row['label_acc']:>10.3f} {row['label_f1']:>9.3f} "
            f"{row['concept_acc']:>12.3f} {row['concept_f1']:>11.3f}"
        )
    if args.out:
        Path(args.out).write_text(yaml.safe_dump(rows, sort_keys=False), encoding="utf-8")
        print(f"wrote ablation grid to {args.out}")
    return 0


def cmd_intervene(args: argparse.Namespace) -> int:
    model, _, payload = load_checkpoint(args.ckpt)
    dataset = data_mod.load_dataset(args.data)
    part = _resolve_split(args, dataset, payload)
    mode = {"pos": "positive", "neg": "negative"}[args.mode]
    reports = []
    for n in args.n:
        report = intervention_sweep(
            model,
            torch.from_numpy(part.images),
            torch.from_numpy(part.concept_labels),
            torch.from_numpy(part.disease_labels),
            n_edits=n,
            mode=mode,
        )
        reports.append(report)
        print(
            f"{mode} n={n}: accuracy {report['baseline_accuracy']:.3f} -> "
            f"{report['intervened_accuracy']:.3f} (delta {report['delta']:+.3f}, "
            f"{report['edited_samples']}/{report['samples']} samples edited)"
        )
    if args.out:
        Path(args.out).write_text(yaml.safe_dump(reports, sort_keys=False), encoding="utf-8")
        print(f"wrote sweep report to {args.out}")
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    model, schema, _ = load_checkpoint(args.ckpt)
    size = model.config.backbone.image_size
    if args.image:
        from PIL import Image

        with Image.open(args.image) as img:
            img = img.convert("RGB").resize((size, size), Image.Resampling.BILINEAR)
            image = torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0)
    else:
        if args.data is None or args.sample_id is None:
            raise CopaError("explain needs either --image or both --data and --sample-id")
        dataset = data_mod.load_dataset(args.data)
        image = torch.from_numpy(dataset.images[args.sample_id])
    payload = export_explanation(model, schema, image, args.out)
    print(
        f"predicted {payload['diagnosis']['predicted_class']} "
        f"(confidence {payload['diagnosis']['confidence']:.3f}); bundle in {args.out}"
    )
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    max_err, errors = run_gradcheck(freeze_backbone=args.fvb, seed=args.seed, eps=args.eps)
    for name in sorted(errors, key=errors.get, reverse=True):
        print(f"{errors[name]:.3e}  {name}")
    print(f"max relative error: {max_err:.3e}")
    return 0 if max_err < 1e-4 else 1


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    serve(args.ckpt, args.data, host=args.host, port=args.port, session_ttl=args.ttl)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    def add_train_overrides(p):
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument(
            "--lambda", dest="concept_loss_weight", type=float, default=None,
            help="concept-loss weight in [0, 1]",
        )
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--split-seed", type=int, default=None)
        p.add_argument("--mla", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--cpt", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--fvb", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", default=None, help="defaults to the built-in synthetic schema")
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None, help="write loss curves to this JSON file")
    add_train_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the full component ablation grid")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--out", default=None)
    add_train_overrides(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("intervene", help="run a test-time intervention sweep")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--mode", choices=["pos", "neg"], required=True)
    p.add_argument("--n", type=int, nargs="+", default=[1, 2], choices=[1, 2])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("explain", help="export the explanation bundle for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--sample-id", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fvb", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the HTTP service over a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ttl", type=float, default=1800.0)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        record = {
            "error": {
                "code": type(exc).__name__,
                "message": str(exc),
                "detail": getattr(exc, "path", None) or getattr(exc, "row", None),
            }
        }
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
