"""The adaptation training loop: mixed three-source batches, a
three-stage learning-rate/disturbance schedule, RMSProp updates, and
convergence-based stage advancement.

One epoch samples ``steps_per_epoch`` mixed batches honoring the batch
composition exactly (deterministic largest-remainder rounding), runs the
adversarial update on each, and logs per-epoch means of the domain
discrimination loss, the animal/human pose loss components, and
discriminator accuracies to an append-only CSV.

Everything is driven by one seeded generator, so identical configs and
seeds reproduce identical metric logs and parameter checksums.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Instance, Pose, Keypoint, encode_heatmaps
from .datasets import AnnotationSet
from .errors import ConfigError, CrossPoseError
from .losses import LossConfig, TrainingBatch, adversarial_step
from .network import Model, save_checkpoint
from .optim import RMSProp

MA_SPAN = 5  # epochs in the moving average the convergence rule watches


@dataclass
class Stage:
    lr: float
    disturbance: bool

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")


@dataclass
class StageSchedule:
    """Three stages by default: base lr, base lr plus input disturbance,
    reduced lr plus disturbance; each advances when its loss converges
    stably or hits the per-stage epoch cap."""

    stages: list[Stage] = field(default_factory=lambda: [
        Stage(1e-4, False), Stage(1e-4, True), Stage(1e-5, True)])
    window: int = 3          # consecutive small-improvement epochs to advance
    tolerance: float = 1e-3  # relative improvement threshold
    max_epochs_per_stage: int = 50


def stage_advance(loss_history: list[float], rule: StageSchedule) -> bool:
    """True once the relative improvement of the moving-averaged loss has
    stayed below tolerance for ``window`` consecutive epochs, or the stage
    hit its epoch cap. The moving average uses up to the last 5 epochs."""
    if not loss_history:
        raise ConfigError("stage_advance needs a non-empty loss history")
    n = len(loss_history)
    if n >= rule.max_epochs_per_stage:
        return True
    if n < rule.window + 1:
        return False
    ma = [float(np.mean(loss_history[max(0, t - MA_SPAN + 1):t + 1])) for t in range(n)]
    small = 0
    for prev, cur in zip(ma[-rule.window - 1:], ma[-rule.window:]):
        rel = (prev - cur) / max(abs(prev), 1e-12)
        if rel < rule.tolerance:
            small += 1
    return small == rule.window


@dataclass
class BatchComposition:
    """Per-batch mixture of (human-labeled, animal-labeled, animal-unlabeled).

    Counts come from largest-remainder rounding of the fractions; empty
    sources give their share to the remaining ones, and every non-empty
    source is guaranteed at least one slot.
    """

    fractions: tuple = (0.5, 0.25, 0.25)
    batch_size: int = 64

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ConfigError(f"need 3 non-negative fractions, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ConfigError(f"batch fractions must sum to 1, got {sum(self.fractions)}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")

    def counts(self, nonempty: tuple[bool, bool, bool]) -> tuple[int, int, int]:
        fr = np.array([f if ok else 0.0 for f, ok in zip(self.fractions, nonempty)])
        if fr.sum() <= 0:
            raise ConfigError("no non-empty sources to draw a batch from")
        fr = fr / fr.sum()
        raw = fr * self.batch_size
        base = np.floor(raw).astype(int)
        order = sorted(range(3), key=lambda k: (-(raw[k] - base[k]), k))
        for k in order[:self.batch_size - int(base.sum())]:
            base[k] += 1
        # every non-empty source contributes at least one item
        for k in range(3):
            if nonempty[k] and self.fractions[k] > 0 and base[k] == 0:
                base[int(np.argmax(base))] -= 1
                base[k] = 1
        return tuple(int(c) for c in base)


def apply_disturbance(image: np.ndarray, seed: int, pose: Pose | None = None,
                      noise_std: float = 0.02, jitter_frac: float = 0.05):
    """Crop-dither and pixel noise: shift the image by up to
    ``jitter_frac`` of its side (edge-replicated) and add Gaussian noise.
    Keypoints shift by the same offset; points pushed outside the image
    are marked unannotated. Deterministic in the seed."""
    rng = np.random.default_rng(seed)
    h, w = image.shape[:2]
    jmax = int(round(jitter_frac * min(h, w)))
    dx, dy = (int(v) for v in rng.integers(-jmax, jmax + 1, size=2))

    padded = np.pad(image, ((jmax, jmax), (jmax, jmax), (0, 0)), mode="edge")
    shifted = padded[jmax - dy:jmax - dy + h, jmax - dx:jmax - dx + w]
    noisy = np.clip(shifted + rng.normal(0.0, noise_std, image.shape), 0.0, 1.0)

    if pose is None:
        return noisy, None
    kps = []
    for kp in pose.keypoints:
        nx, ny = kp.x + dx, kp.y + dy
        v = kp.v if (0 <= nx < w and 0 <= ny < h) else 0
        kps.append(Keypoint(nx if v else 0.0, ny if v else 0.0, v))
    return noisy, Pose(kps, pose.schema_id)


class _Pool:
    """Cyclic shuffled sampler over a fixed instance list."""

    def __init__(self, instances: list[Instance], rng: np.random.Generator):
        self.instances = list(instances)
        self.rng = rng
        self.queue: list[int] = []

    def draw(self, k: int) -> list[Instance]:
        out = []
        while len(out) < k:
            if not self.queue:
                self.queue = list(self.rng.permutation(len(self.instances)))
            out.append(self.instances[self.queue.pop()])
        return out


def _build_batch(items: list[Instance], model: Model, sigma: float,
                 disturbance: bool, rng: np.random.Generator) -> TrainingBatch:
    cfg = model.config
    n = len(items)
    images = np.zeros((n, cfg.height, cfg.width, cfg.channels))
    y = np.zeros(n, dtype=int)
    z = np.zeros(n, dtype=int)
    targets = np.zeros((n, cfg.num_keypoints, cfg.grid_height, cfg.grid_width))
    vis = np.zeros((n, cfg.num_keypoints), dtype=bool)
    for i, inst in enumerate(items):
        img, pose = inst.image, inst.pose
        if disturbance:
            img, pose = apply_disturbance(img, int(rng.integers(2 ** 31)), pose)
        images[i] = img
        y[i], z[i] = inst.y, inst.z
        if pose is not None:
            stack = encode_heatmaps(pose, cfg.grid_height, cfg.grid_width, sigma, cfg.output_stride)
            targets[i] = stack.maps
            vis[i] = pose.vis() > 0
    return TrainingBatch(images=images, y=y, z=z, target_maps=targets, vis=vis)


@dataclass
class TrainResult:
    model: Model
    rows: list[dict]
    stage_reached: int
    seed: int
    checkpoints: list[str] = field(default_factory=list)
    log_path: str | None = None


METRIC_COLUMNS = ["epoch", "stage", "ddl", "apel", "hpel", "disc_acc_y", "disc_acc_z", "lr"]


class _MetricsLog:
    def __init__(self, path: Path | None):
        self.rows: list[dict] = []
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as f:
                csv.writer(f).writerow(METRIC_COLUMNS)

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow([row[c] for c in METRIC_COLUMNS])


def _train_loop(model: Model, pools: list[_Pool | None], comp: BatchComposition,
                loss_config: LossConfig, schedule: StageSchedule, sigma: float,
                steps_per_epoch: int, rng: np.random.Generator,
                out_dir: Path | None, checkpoint_every: int) -> TrainResult:
    log = _MetricsLog(out_dir / "metrics.csv" if out_dir else None)
    nonempty = tuple(p is not None and len(p.instances) > 0 for p in pools)
    counts = comp.counts(nonempty)
    checkpoints: list[str] = []
    epoch = 0

    for stage_idx, stage in enumerate(schedule.stages):
        optimizer = RMSProp(stage.lr)
        history: list[float] = []
        while True:
            sums = {"ddl": 0.0, "apel": 0.0, "hpel": 0.0, "disc_acc_y": 0.0,
                    "disc_acc_z": 0.0, "wscda": 0.0}
            acc_z_n = 0
            for _ in range(steps_per_epoch):
                items = []
                for pool, k in zip(pools, counts):
                    if pool is not None and k > 0:
                        items.extend(pool.draw(k))
                batch = _build_batch(items, model, sigma, stage.disturbance, rng)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")  # single-domain batches are expected in ablations
                    m = adversarial_step(model, batch, loss_config, optimizer)
                sums["ddl"] += m.ddl
                sums["apel"] += m.apel
                sums["hpel"] += m.hpel
                sums["wscda"] += m.wscda
                sums["disc_acc_y"] += m.disc_acc_y
                if np.isfinite(m.disc_acc_z):
                    sums["disc_acc_z"] += m.disc_acc_z
                    acc_z_n += 1
            row = {
                "epoch": epoch,
                "stage": stage_idx,
                "ddl": sums["ddl"] / steps_per_epoch,
                "apel": sums["apel"] / steps_per_epoch,
                "hpel": sums["hpel"] / steps_per_epoch,
                "disc_acc_y": sums["disc_acc_y"] / steps_per_epoch,
                "disc_acc_z": sums["disc_acc_z"] / acc_z_n if acc_z_n else float("nan"),
                "lr": stage.lr,
            }
            log.append(row)
            epoch_loss = sums["wscda"] / steps_per_epoch
            if not np.isfinite(epoch_loss):
                if out_dir is not None:
                    path = out_dir / "abort.npz"
                    save_checkpoint(model, path, {"epoch": epoch, "stage": stage_idx, "aborted": True})
                raise CrossPoseError(f"non-finite loss at epoch {epoch}; aborted")
            history.append(epoch_loss)
            if checkpoint_every and out_dir is not None and (epoch + 1) % checkpoint_every == 0:
                path = out_dir / f"epoch{epoch:04d}.npz"
                save_checkpoint(model, path, {"epoch": epoch, "stage": stage_idx})
                checkpoints.append(str(path))
            epoch += 1
            if stage_advance(history, schedule):
                break
        if out_dir is not None:
            path = out_dir / f"stage{stage_idx}.npz"
            save_checkpoint(model, path, {"epoch": epoch - 1, "stage": stage_idx})
            checkpoints.append(str(path))

    return TrainResult(model=model, rows=log.rows, stage_reached=len(schedule.stages) - 1,
                       seed=model.seed, checkpoints=checkpoints,
                       log_path=str(log.path) if log.path else None)


def train_wscda(model: Model, human_set: AnnotationSet, animal_set: AnnotationSet,
                unlabeled_set: AnnotationSet | None, loss_config: LossConfig,
                schedule: StageSchedule | None = None,
                batch_comp: BatchComposition | None = None,
                sigma: float = 2.0, seed: int = 0,
                steps_per_epoch: int | None = None,
                out_dir=None, checkpoint_every: int = 0) -> TrainResult:
    """Adversarial adaptation training over the three sources.

    Both labeled sources must be non-empty; the unlabeled pool may be
    empty or None (its batch share is redistributed), which together with
    ``alpha = 0`` reduces the loop to plain supervised fine-tuning.
    """
    schedule = schedule or StageSchedule()
    batch_comp = batch_comp or BatchComposition()
    if human_set is None or len(human_set) == 0:
        raise ConfigError("human-labeled source is empty")
    if animal_set is None or len(animal_set) == 0:
        raise ConfigError("animal-labeled source is empty")
    for aset, name in ((human_set, "human"), (animal_set, "animal")):
        if any(inst.z == 1 for inst in aset):
            raise ConfigError(f"{name} source contains pose-unlabeled instances")
    if unlabeled_set is not None and any(inst.z == 0 for inst in unlabeled_set):
        raise ConfigError("unlabeled pool contains pose-labeled instances")

    rng = np.random.default_rng(seed)
    pools = [
        _Pool(human_set.instances, rng),
        _Pool(animal_set.instances, rng),
        _Pool(unlabeled_set.instances, rng) if unlabeled_set is not None and len(unlabeled_set) else None,
    ]
    if steps_per_epoch is None:
        per_batch = batch_comp.counts(tuple(p is not None and len(p.instances) > 0 for p in pools))[0]
        steps_per_epoch = max(1, int(np.ceil(len(human_set) / max(per_batch, 1))))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    return _train_loop(model, pools, batch_comp, loss_config, schedule, sigma,
                       steps_per_epoch, rng, out, checkpoint_every)


def train_supervised(model: Model, labeled_set: AnnotationSet,
                     schedule: StageSchedule | None = None, batch_size: int = 16,
                     sigma: float = 2.0, seed: int = 0,
                     steps_per_epoch: int | None = None,
                     out_dir=None, checkpoint_every: int = 0) -> TrainResult:
    """Plain supervised heatmap training on a single labeled pool: the
    target-free baseline of the ablation grids. No domain loss is applied
    (alpha = 0) and the discriminator stays at its initialization."""
    if labeled_set is None or len(labeled_set) == 0:
        raise ConfigError("labeled source is empty")
    if any(inst.z == 1 for inst in labeled_set):
        raise ConfigError("labeled source contains pose-unlabeled instances")
    schedule = schedule or StageSchedule()
    rng = np.random.default_rng(seed)
    pools = [None, _Pool(labeled_set.instances, rng), None]
    comp = BatchComposition(fractions=(0.0, 1.0, 0.0), batch_size=batch_size)
    if steps_per_epoch is None:
        steps_per_epoch = max(1, int(np.ceil(len(labeled_set) / batch_size)))
    config = LossConfig(alpha=0.0, beta=1.0, w1=1.0, w2=1.0)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    return _train_loop(model, pools, comp, config, schedule, sigma,
                       steps_per_epoch, rng, out, checkpoint_every)
