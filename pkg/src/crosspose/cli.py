"""Operator entry points: ingest, analyze-bones, synth, train
(wscda | pplo | supervised-boost), eval, export-pseudo-labels, report.

Every command is driven by a declarative config file; individual keys can
be overridden with ``--set section.key=value``. Relative output paths
resolve under $CROSSPOSE_OUT_ROOT when it is set. Exit codes: 0 success,
1 user/config error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import (AdaptationConfig, RunManifest, apply_overrides,
                     load_config, load_dataset, save_config)
from .datasets import align_set, compute_bone_proportions, parse_annotations, save_annotations
from .errors import ConfigError, CrossPoseError
from .evaluation import RunRecord, dataset_fingerprint, evaluate_model, report
from .losses import LossConfig
from .network import build, load_checkpoint, save_checkpoint
from .pplo import run_pplo
from .skeletons import animal_schema, reference_schema
from .synthetic import SynthDomainSpec, generate_domain, save_synthetic
from .training import train_supervised, train_wscda


def out_path(p) -> Path:
    root = os.environ.get("CROSSPOSE_OUT_ROOT")
    p = Path(p)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def cmd_ingest(args) -> int:
    from .datasets import AnnotationSet
    aset = parse_annotations(args.annotations, image_root=args.image_root)
    if args.align:
        table = None
        if args.alignment_table:
            with open(args.alignment_table) as f:
                table = json.load(f)
        source = animal_schema(table)
        if list(aset.schema.keypoint_names) != list(source.keypoint_names):
            raise ConfigError(
                f"--align expects the 20-keypoint animal schema; "
                f"file carries {aset.schema.d} keypoints named differently")
        rebound = AnnotationSet(list(aset.instances), source, dict(aset.split_tags))
        aset = align_set(rebound, reference_schema())
    counts = {}
    for inst in aset.instances:
        counts[inst.species or "unknown"] = counts.get(inst.species or "unknown", 0) + 1
    dest = out_path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    save_annotations(aset, dest)
    print(f"ingested {len(aset)} instances, d={aset.schema.d}")
    for cls in sorted(counts):
        print(f"  {cls}: {counts[cls]}")
    return 0


def cmd_analyze_bones(args) -> int:
    aset = parse_annotations(args.annotations)
    if len(aset) == 0:
        raise ConfigError(f"{args.annotations}: empty annotation set")
    rep = compute_bone_proportions(aset)
    if not rep.proportions:
        raise ConfigError("no instance with a fully visible bone; nothing to analyze")
    dest = out_path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    payload = {cls: list(map(float, vec)) for cls, vec in rep.proportions.items()}
    with open(dest, "w") as f:
        json.dump({"proportions": payload, "counts": rep.counts,
                   "bones": [list(b) for b in rep.bones]}, f, indent=1)
    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(9, 3.5))
        n = len(rep.bones)
        width = 0.8 / max(len(rep.proportions), 1)
        for i, (cls, vec) in enumerate(sorted(rep.proportions.items())):
            ax.bar(np.arange(n) + i * width, vec, width=width, label=cls)
        ax.set_xlabel("bone index")
        ax.set_ylabel("relative length proportion")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out_path(args.plot), dpi=110)
        plt.close(fig)
    print(f"bone report for {len(rep.proportions)} classes -> {dest}")
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    out = out_path(args.out)
    written = {}
    for role, entry in cfg.data.items():
        labeled = role != "target_unlabeled"
        aset = load_dataset(entry, labeled=labeled)
        save_synthetic(aset, out / role, write_images=not args.no_images)
        written[role] = len(aset)
    for role, n in written.items():
        print(f"  {role}: {n} instances -> {out / role}")
    return 0


def _manifest(cfg, command, result, datasets, out_dir, extras=None):
    model = result.model
    manifest = RunManifest(
        config_hash=cfg.hash(),
        seed=cfg.seed,
        command=command,
        datasets={k: dataset_fingerprint(v) for k, v in datasets.items()},
        checkpoints=result.checkpoints if hasattr(result, "checkpoints") else [],
        metric_logs=[result.log_path] if result.log_path else [],
        stage_reached=getattr(result, "stage_reached", -1),
        param_checksum=model.checksum(),
        extras=extras or {},
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    out = out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")

    if args.mode == "wscda":
        human = load_dataset(cfg.data["human"], labeled=True)
        animal = load_dataset(cfg.data["animal"], labeled=True)
        unlabeled = (load_dataset(cfg.data["target_unlabeled"], labeled=False)
                     if "target_unlabeled" in cfg.data else None)
        model = build(cfg.model, cfg.seed)
        result = train_wscda(model, human, animal, unlabeled, cfg.loss,
                             schedule=cfg.stages, batch_comp=cfg.batch,
                             sigma=cfg.sigma, seed=cfg.seed,
                             steps_per_epoch=cfg.steps_per_epoch,
                             out_dir=out, checkpoint_every=cfg.checkpoint_every)
        final = out / "final.npz"
        save_checkpoint(model, final, {"command": "wscda", "stage": result.stage_reached,
                                       "config_hash": cfg.hash()})
        result.checkpoints.append(str(final))
        datasets = {"human": human, "animal": animal}
        if unlabeled is not None:
            datasets["target_unlabeled"] = unlabeled
        _manifest(cfg, "train wscda", result, datasets, out)
        print(f"wscda finished: {len(result.rows)} epochs, checkpoint {final}")
        return 0

    # pplo and supervised-boost both continue from a wscda checkpoint
    if not args.checkpoint:
        raise ConfigError(f"train {args.mode} needs --checkpoint from a wscda run")
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint {args.checkpoint} does not exist")
    model, meta = load_checkpoint(args.checkpoint)
    if meta.get("command") not in ("wscda", "pplo", "supervised-boost"):
        raise ConfigError("checkpoint was not produced by a wscda training run")

    human = load_dataset(cfg.data["human"], labeled=True) if "human" in cfg.data else None
    animal = load_dataset(cfg.data["animal"], labeled=True)
    target = load_dataset(cfg.data["target_unlabeled"], labeled=False)

    n_gt = args.n_gt if args.mode == "supervised-boost" else 0
    if n_gt:
        animal = _boost_with_target_labels(animal, target, n_gt)
    result = run_pplo(model, human, animal, target, cfg.pplo, cfg.loss,
                      epochs=cfg.pplo_epochs, seed=cfg.seed, sigma=cfg.sigma,
                      out_dir=out)
    final = out / "final.npz"
    save_checkpoint(model, final, {"command": args.mode, "config_hash": cfg.hash(),
                                   "mu_end": result.mu_history[-1] if result.mu_history else cfg.pplo.mu0})
    datasets = {"animal": animal, "target_unlabeled": target}
    if human is not None:
        datasets["human"] = human
    manifest = RunManifest(
        config_hash=cfg.hash(), seed=cfg.seed, command=f"train {args.mode}",
        datasets={k: dataset_fingerprint(v) for k, v in datasets.items()},
        checkpoints=[str(final)],
        metric_logs=[result.log_path] if result.log_path else [],
        stage_reached=-1, param_checksum=model.checksum(),
        extras={"n_gt": n_gt, "accepted": len(result.store)})
    manifest.save(out / "manifest.json")
    print(f"{args.mode} finished: {cfg.pplo_epochs} epochs, accepted {len(result.store)} "
          f"pseudo labels, checkpoint {final}")
    return 0


def _boost_with_target_labels(animal, target, n_gt: int):
    """Move the first n_gt target instances (by id) into the labeled pool,
    using the hidden ground truth; the boost experiment's extra supervision."""
    from .core import Instance
    from .datasets import AnnotationSet
    if target.hidden_truth is None:
        raise ConfigError("supervised-boost needs a target set with hidden ground truth")
    if n_gt > len(target):
        raise ConfigError(f"n_gt={n_gt} exceeds target pool size {len(target)}")
    chosen = sorted(target.ids())[:n_gt]
    extra = []
    for inst in target.instances:
        if inst.id in chosen:
            extra.append(Instance(inst.id, inst.image, target.hidden_truth[inst.id],
                                  y=1, z=0, species=inst.species, bbox=inst.bbox))
    merged = list(animal.instances) + extra
    return AnnotationSet(merged, animal.schema, {i.id: "train" for i in merged})


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).exists():
        raise ConfigError(f"checkpoint {args.checkpoint} does not exist")
    model, _ = load_checkpoint(args.checkpoint)
    if args.config:
        cfg = load_config(args.config)
        aset = load_dataset(cfg.data[args.data_role], labeled=args.data_role != "target_unlabeled")
    elif args.annotations:
        aset = parse_annotations(args.annotations)
    else:
        raise ConfigError("eval needs --annotations or --config")
    train_tagged = [i for i in aset.instances if aset.split_tags.get(i.id) == "train"]
    if train_tagged:
        print(f"warning: {len(train_tagged)} evaluated instances are tagged 'train'",
              file=sys.stderr)
    result = evaluate_model(model, aset, pck_fraction=args.pck_fraction)
    result["checkpoint"] = str(args.checkpoint)
    dest = out_path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    with open(dest, "w") as f:
        json.dump(result, f, indent=1, sort_keys=True)
    print(f"mAP={result['map']:.4f} mean PCK@{args.pck_fraction}={result['mean_pck']:.4f} "
          f"on {result['n_instances']} instances -> {dest}")
    return 0


def cmd_export_pseudo_labels(args) -> int:
    src = Path(args.run_dir) / "pseudo_labels.json"
    if not src.exists():
        raise ConfigError(f"{src} not found; was this a pplo run?")
    from .pplo import PseudoLabelStore
    store = PseudoLabelStore.from_json(src)
    dest = out_path(args.out)
    dest.parent.mkdir(parents=True, exist_ok=True)
    store.to_json(dest)
    print(f"exported {len(store)} pseudo labels -> {dest}")
    return 0


def cmd_report(args) -> int:
    records = []
    for run_dir in args.runs:
        run = Path(run_dir)
        with open(run / "eval.json") as f:
            eval_result = json.load(f)
        rows = []
        metrics = run / "metrics.csv"
        if metrics.exists():
            import csv
            with open(metrics) as f:
                for row in csv.DictReader(f):
                    rows.append({k: float(v) if k != "stage" else int(v) for k, v in row.items()})
        config = {}
        cfg_file = run / "config.yaml"
        if cfg_file.exists():
            config = load_config(cfg_file).to_dict().get("loss", {})
        records.append(RunRecord(name=run.name, eval_result=eval_result,
                                 metrics_rows=rows, config=config))
    out = report(records, out_path(args.out))
    print(f"report over {len(records)} runs -> {out['files']}")
    return 0


def make_parser() -> _Parser:
    p = _Parser(prog="crosspose", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("ingest", help="read an annotation file, optionally align to the reference schema")
    q.add_argument("--annotations", required=True)
    q.add_argument("--image-root")
    q.add_argument("--align", action="store_true")
    q.add_argument("--alignment-table", help="JSON name->name override table")
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_ingest)

    q = sub.add_parser("analyze-bones", help="per-class bone-length proportion report")
    q.add_argument("--annotations", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--plot")
    q.set_defaults(fn=cmd_analyze_bones)

    q = sub.add_parser("synth", help="generate the synthetic domains of a config")
    q.add_argument("--config", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--no-images", action="store_true")
    q.set_defaults(fn=cmd_synth)

    q = sub.add_parser("train", help="run a training stage")
    q.add_argument("mode", choices=["wscda", "pplo", "supervised-boost"])
    q.add_argument("--config", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--checkpoint", help="wscda checkpoint (required for pplo / supervised-boost)")
    q.add_argument("--n-gt", type=int, default=0, help="labeled target instances to add (supervised-boost)")
    q.add_argument("--set", action="append", default=[], help="override config key, e.g. loss.w2=1")
    q.set_defaults(fn=cmd_train)

    q = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--annotations")
    q.add_argument("--config", help="config whose data section names the eval set")
    q.add_argument("--data-role", default="eval")
    q.add_argument("--pck-fraction", type=float, default=0.2)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_eval)

    q = sub.add_parser("export-pseudo-labels", help="re-emit a run's accepted pseudo labels")
    q.add_argument("--run-dir", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_export_pseudo_labels)

    q = sub.add_parser("report", help="comparison table and plots over finished runs")
    q.add_argument("--runs", nargs="+", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CrossPoseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # internal failure
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
