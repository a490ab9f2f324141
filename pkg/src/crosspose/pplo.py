"""Progressive pseudo-label optimization: alternating source/target
training with self-paced acceptance of the model's own predictions.

Each epoch runs four phases in a fixed order:

1. source phase: supervised steps on pose-labeled batches (the domain
   loss stays active by default, toggleable);
2. refresh sweep: the frozen model predicts every target instance and
   predictions whose confidence strictly exceeds the threshold ``mu``
   replace that instance's stored pseudo label;
3. target phase: steps on batches drawn only from stored pseudo-labeled
   instances, trained against their re-encoded pseudo poses;
4. threshold relaxation: once per ``mu_window`` epochs, ``mu`` drops by
   ``mu_step`` if any pseudo label was written during the window, and
   stays put otherwise.

``mu`` therefore never increases, and for a fixed model a lower ``mu``
accepts a superset of instances. Store entries are only ever replaced
wholesale and are never evicted once accepted.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Pose, decode_heatmaps, encode_heatmaps, HeatmapStack
from .datasets import AnnotationSet
from .errors import ConfigError
from .losses import (LossConfig, TrainingBatch, adversarial_step,
                     pplo_target_loss, pplo_target_loss_grad)
from .network import Model
from .optim import RMSProp
from .training import BatchComposition, _Pool, _build_batch, apply_disturbance


@dataclass
class PseudoLabelEntry:
    pose: Pose
    confidence: float
    epoch: int
    mu: float  # threshold in force when the entry was accepted


class PseudoLabelStore:
    """instance id -> accepted pseudo pose, with acceptance bookkeeping."""

    def __init__(self):
        self.entries: dict[str, PseudoLabelEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, inst_id: str) -> bool:
        return inst_id in self.entries

    def ids(self) -> list[str]:
        return sorted(self.entries)

    def get(self, inst_id: str) -> PseudoLabelEntry:
        return self.entries[inst_id]

    def put(self, inst_id: str, pose: Pose, confidence: float, epoch: int, mu: float) -> None:
        if not confidence > mu:
            raise ConfigError(f"entry for {inst_id} violates the filter: {confidence} <= {mu}")
        self.entries[inst_id] = PseudoLabelEntry(pose, confidence, epoch, mu)

    def to_json(self, path) -> None:
        payload = {
            inst_id: {
                "keypoints": [[kp.x, kp.y, kp.v] for kp in e.pose.keypoints],
                "confidence": e.confidence,
                "epoch": e.epoch,
                "mu": e.mu,
            }
            for inst_id, e in sorted(self.entries.items())
        }
        with open(path, "w") as f:
            json.dump(payload, f, indent=1)

    @staticmethod
    def from_json(path, schema_id: str | None = None) -> "PseudoLabelStore":
        store = PseudoLabelStore()
        with open(path) as f:
            payload = json.load(f)
        for inst_id, rec in payload.items():
            pose = Pose.from_arrays(
                np.array(rec["keypoints"])[:, :2], np.array(rec["keypoints"])[:, 2], schema_id)
            store.entries[inst_id] = PseudoLabelEntry(
                pose, rec["confidence"], rec["epoch"], rec["mu"])
        return store


@dataclass
class PPLOConfig:
    """Self-paced curriculum knobs. ``k_source``/``k_target`` of None mean
    one full pass over the respective available data per cycle.
    ``disturbance`` keeps the input augmentation of the final pre-training
    stage active in both phases, so continued training does not drift off
    the augmented regime the model converged under."""

    mu0: float = 0.9
    mu_step: float = 0.01
    mu_window: int = 10
    k_source: int | None = None
    k_target: int | None = None
    batch_size: int = 16
    lr: float = 1e-4
    ddl_in_source: bool = True
    disturbance: bool = True

    def __post_init__(self):
        if not (0.0 < self.mu0 <= 1.0):
            raise ConfigError(f"mu0 must be in (0, 1], got {self.mu0}")
        if self.mu_step <= 0:
            raise ConfigError(f"mu_step must be positive, got {self.mu_step}")
        if self.mu_window < 1:
            raise ConfigError(f"mu_window must be >= 1, got {self.mu_window}")
        for name in ("k_source", "k_target"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be >= 1 when set, got {v}")


def confidence_filter(confidence: float, mu: float) -> int:
    """1 iff the confidence strictly exceeds the threshold."""
    return 1 if confidence > mu else 0


def refresh_pseudo_labels(model: Model, target_set: AnnotationSet, store: PseudoLabelStore,
                          mu: float, epoch: int = 0, chunk: int = 32) -> int:
    """Predict every target instance with the frozen model and write the
    confident ones into the store; returns how many entries were written.
    Instances below threshold keep whatever entry they already had."""
    cfg = model.config
    written = 0
    instances = target_set.instances
    for lo in range(0, len(instances), chunk):
        batch = instances[lo:lo + chunk]
        images = np.stack([inst.image for inst in batch])
        out = model.forward(images)
        for i, inst in enumerate(batch):
            stack = HeatmapStack.from_maps(out.maps[i])
            pose, conf = decode_heatmaps(stack, cfg.output_stride, target_set.schema.name)
            if confidence_filter(conf, mu):
                store.put(inst.id, pose, conf, epoch, mu)
                written += 1
    return written


def relax_mu(mu: float, update_count_window: int, config: PPLOConfig) -> float:
    """The relaxation strategy: a step down if any pseudo label was
    updated during the window, otherwise unchanged; floored at 0."""
    if update_count_window > 0:
        return max(mu - config.mu_step, 0.0)
    return mu


PPLO_COLUMNS = ["epoch", "mu", "accepted_count", "new_or_updated_count",
                "source_loss", "target_loss"]


@dataclass
class PPLOResult:
    model: Model
    store: PseudoLabelStore
    rows: list[dict]
    mu_history: list[float]
    phase_trace: list[list[str]]
    log_path: str | None = None


def _target_steps(model: Model, target_set: AnnotationSet, store: PseudoLabelStore,
                  k_target: int, batch_size: int, sigma: float,
                  optimizer: RMSProp, rng: np.random.Generator,
                  disturbance: bool) -> float:
    cfg = model.config
    by_id = {inst.id: inst for inst in target_set.instances}
    pool_ids = store.ids()
    # small accepted pools give small batches rather than duplicated items
    batch_size = min(batch_size, len(pool_ids))
    order: list[str] = []
    total = 0.0
    for _ in range(k_target):
        ids = []
        while len(ids) < batch_size:
            if not order:
                order = [pool_ids[i] for i in rng.permutation(len(pool_ids))]
            ids.append(order.pop())
        images = []
        poses = []
        for i in ids:
            img, pose = by_id[i].image, store.get(i).pose
            if disturbance:
                img, pose = apply_disturbance(img, int(rng.integers(2 ** 31)), pose)
            images.append(img)
            poses.append(pose)
        images = np.stack(images)
        targets = np.stack([
            encode_heatmaps(pose, cfg.grid_height, cfg.grid_width,
                            sigma, cfg.output_stride).maps
            for pose in poses
        ])
        out = model.forward(images)
        flags = np.ones(len(ids))
        loss = pplo_target_loss(out.maps, targets, flags)
        d_maps = pplo_target_loss_grad(out.maps, targets, flags)
        grads_by_group = model.backward_pose(out, d_maps)
        flat = {f"{g}/{k}": v for g in ("extractor", "dan", "head")
                for k, v in grads_by_group[g].items()}
        optimizer.step(model.params(), flat)
        total += loss
    return total / k_target


def pplo_epoch(model: Model, human_set: AnnotationSet | None, animal_set: AnnotationSet,
               target_set: AnnotationSet, store: PseudoLabelStore, mu: float,
               config: PPLOConfig, loss_config: LossConfig,
               optimizer: RMSProp, rng: np.random.Generator, epoch: int,
               sigma: float = 2.0, batch_comp: BatchComposition | None = None,
               relax_now: bool = False, window_updates: int = 0):
    """One full cycle of the alternating procedure; returns the metrics
    row, the phase names in execution order, and the possibly-relaxed mu.

    The refresh sweep always sees the post-source-phase model; no target
    gradient step ever precedes the source phase within an epoch.
    """
    phases: list[str] = []
    comp = batch_comp or BatchComposition(fractions=(0.5, 0.5, 0.0), batch_size=config.batch_size)
    pools = [
        _Pool(human_set.instances, rng) if human_set is not None and len(human_set) else None,
        _Pool(animal_set.instances, rng),
        None,
    ]
    nonempty = tuple(p is not None and len(p.instances) > 0 for p in pools)
    counts = comp.counts(nonempty)

    n_source = (len(human_set) if human_set else 0) + len(animal_set)
    k_source = config.k_source or max(1, int(np.ceil(n_source / comp.batch_size)))
    source_cfg = loss_config if config.ddl_in_source else \
        LossConfig(alpha=0.0, beta=loss_config.beta, w1=loss_config.w1, w2=loss_config.w2)

    source_total = 0.0
    for _ in range(k_source):
        items = []
        for pool, k in zip(pools, counts):
            if pool is not None and k > 0:
                items.extend(pool.draw(k))
        batch = _build_batch(items, model, sigma, config.disturbance, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = adversarial_step(model, batch, source_cfg, optimizer)
        source_total += m.pose
    phases.append("source")

    written = refresh_pseudo_labels(model, target_set, store, mu, epoch)
    phases.append("refresh")

    if len(store) == 0:
        warnings.warn("pseudo-label store is empty; target phase skipped")
        target_loss = float("nan")
        phases.append("target_skipped")
    else:
        k_target = config.k_target or max(1, int(np.ceil(len(store) / config.batch_size)))
        target_loss = _target_steps(model, target_set, store, k_target,
                                    config.batch_size, sigma, optimizer, rng,
                                    config.disturbance)
        phases.append("target")

    new_mu = mu
    if relax_now:
        new_mu = relax_mu(mu, window_updates + written, config)
        phases.append("relax")

    row = {
        "epoch": epoch,
        "mu": mu,
        "accepted_count": len(store),
        "new_or_updated_count": written,
        "source_loss": source_total / k_source,
        "target_loss": target_loss,
    }
    return row, phases, new_mu, written


def run_pplo(model: Model, human_set: AnnotationSet | None, animal_set: AnnotationSet,
             target_set: AnnotationSet, config: PPLOConfig, loss_config: LossConfig,
             epochs: int, seed: int = 0, sigma: float = 2.0,
             batch_comp: BatchComposition | None = None, out_dir=None) -> PPLOResult:
    """Drive the alternating curriculum for a fixed number of epochs,
    starting from a model pre-trained on the source domains."""
    if len(target_set) == 0:
        raise ConfigError("target set is empty")
    if any(inst.z == 0 for inst in target_set):
        raise ConfigError("target set contains pose-labeled instances")
    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "pplo_metrics.csv"
        with open(log_path, "w", newline="") as f:
            csv.writer(f).writerow(PPLO_COLUMNS)

    rng = np.random.default_rng(seed)
    optimizer = RMSProp(config.lr)
    store = PseudoLabelStore()
    mu = config.mu0
    rows: list[dict] = []
    mu_history: list[float] = []
    trace: list[list[str]] = []
    window_updates = 0

    for epoch in range(epochs):
        relax_now = (epoch + 1) % config.mu_window == 0
        row, phases, new_mu, written = pplo_epoch(
            model, human_set, animal_set, target_set, store, mu, config, loss_config,
            optimizer, rng, epoch, sigma, batch_comp,
            relax_now=relax_now, window_updates=window_updates)
        window_updates = 0 if relax_now else window_updates + written
        mu = new_mu
        rows.append(row)
        mu_history.append(mu)
        trace.append(phases)
        if log_path is not None:
            with open(log_path, "a", newline="") as f:
                csv.writer(f).writerow([row[c] for c in PPLO_COLUMNS])

    if out is not None:
        store.to_json(out / "pseudo_labels.json")
    return PPLOResult(model=model, store=store, rows=rows, mu_history=mu_history,
                      phase_trace=trace, log_path=str(log_path) if log_path else None)
