"""The adaptation loss stack, each piece a pure scalar function with a
matching output-side gradient.

Four losses:

* ``ddl``: two stacked binary cross-entropies over the discriminator
  outputs; animal-vs-human over every sample, target-vs-source over
  animal samples only.
* ``pose_loss``: per-item heatmap MSE, rebalanced by ``w2`` on animal
  items to counter the source-volume gap.
* ``wscda_loss``: the combined objective ``alpha * ddl + beta * pose``,
  valid only under the adversarial sign contract ``alpha * beta < 0``.
* ``pplo_target_loss``: acceptance-masked MSE against pseudo-label
  targets; rejected items contribute exactly zero.

The combined objective with a negative coefficient cannot be descended
naively (the discriminator term would be unbounded), so
``adversarial_step`` realizes it as gradient reversal: the discriminator
descends the DDL while the extractor receives that path's gradient
negated and scaled by |alpha|; pose gradients reach extractor, adapter
and head scaled by beta.

MSE is the mean over annotated channels and grid pixels, so the weights
keep their meaning regardless of heatmap volume.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation
from .network import GROUPS, ForwardOut, Model
from .optim import RMSProp, SGD


class NoPseudoLabels(UserWarning):
    """Raised as a warning when the accepted pseudo-label set is empty."""


@dataclass
class LossConfig:
    """Scalar weights of the combined objective.

    ``alpha * beta < 0`` is the adversarial contract: pose estimation and
    domain discrimination must pull the shared features in opposite
    directions. Zeroing either coefficient turns that path off entirely
    (``alpha = 0`` is plain supervised training) and is accepted.
    """

    alpha: float = -1.0
    beta: float = 500.0
    w1: float = 1.0
    w2: float = 10.0

    def __post_init__(self):
        if self.w1 <= 0:
            raise ConfigError(f"w1 must be positive, got {self.w1}")
        if self.w2 < 1:
            raise ConfigError(f"w2 must be >= 1, got {self.w2}")
        if self.alpha * self.beta > 0:
            raise ConfigError(f"adversarial contract needs alpha*beta < 0, got alpha={self.alpha} beta={self.beta}")


# ---- domain discrimination -------------------------------------------------

def ddl(probs: np.ndarray, y: np.ndarray, z: np.ndarray, w1: float = 1.0) -> float:
    """Domain discrimination loss over clamped (y_hat, z_hat) pairs.

    ``- w1 * sum(y log y_hat + (1-y) log(1-y_hat))
    - sum(y * (z log z_hat + (1-z) log(1-z_hat)))``:
    the target-vs-source term contributes only for animal samples.
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    y_hat = probs[:, 0]
    z_hat = probs[:, 1]
    term_y = -(y * np.log(y_hat) + (1.0 - y) * np.log(1.0 - y_hat)).sum()
    term_z = -(y * (z * np.log(z_hat) + (1.0 - z) * np.log(1.0 - z_hat))).sum()
    return float(w1 * term_y + term_z)


def ddl_grad(probs: np.ndarray, y: np.ndarray, z: np.ndarray, w1: float = 1.0) -> np.ndarray:
    """d(ddl)/d(probs), same shape as probs."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    y_hat = probs[:, 0]
    z_hat = probs[:, 1]
    d = np.zeros_like(probs)
    d[:, 0] = -w1 * (y / y_hat - (1.0 - y) / (1.0 - y_hat))
    d[:, 1] = -y * (z / z_hat - (1.0 - z) / (1.0 - z_hat))
    return d


# ---- pose estimation -------------------------------------------------------

def _per_item_mse(pred: np.ndarray, target: np.ndarray, vis: np.ndarray) -> np.ndarray:
    """Mean squared error per item over annotated channels and all grid
    pixels; items with no annotated channel get 0."""
    n, d, h, w = pred.shape
    sq = ((pred - target) ** 2).sum(axis=(2, 3))          # (N, d)
    n_annot = vis.sum(axis=1)                              # (N,)
    masked = (sq * vis).sum(axis=1)
    denom = np.where(n_annot > 0, n_annot * h * w, 1)
    return np.where(n_annot > 0, masked / denom, 0.0)


def pose_loss(pred: np.ndarray, target: np.ndarray, vis: np.ndarray,
              y: np.ndarray, w2: float = 10.0, z: np.ndarray | None = None) -> float:
    """Supervised heatmap loss: ``sum_i (w2 if animal else 1) * MSE_i``.

    Only pose-labeled items may appear here; passing any z = 1 item is a
    caller bug and raises.
    """
    if z is not None and np.any(np.asarray(z) == 1):
        raise ContractViolation("pose-unlabeled samples (z=1) carry no pose loss")
    y = np.asarray(y, dtype=np.float64)
    mse = _per_item_mse(pred, target, np.asarray(vis, dtype=np.float64))
    weights = np.where(y == 1, w2, 1.0)
    return float((weights * mse).sum())


def pose_loss_grad(pred: np.ndarray, target: np.ndarray, vis: np.ndarray,
                   y: np.ndarray, w2: float = 10.0) -> np.ndarray:
    n, d, h, w = pred.shape
    vis = np.asarray(vis, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_annot = vis.sum(axis=1)
    denom = np.where(n_annot > 0, n_annot * h * w, 1.0)
    weights = np.where(y == 1, w2, 1.0) / denom
    return 2.0 * (pred - target) * vis[:, :, None, None] * weights[:, None, None, None]


def apel_hpel(pred: np.ndarray, target: np.ndarray, vis: np.ndarray,
              y: np.ndarray) -> tuple[float, float]:
    """Unweighted animal / human pose loss components, for logging."""
    mse = _per_item_mse(pred, target, np.asarray(vis, dtype=np.float64))
    y = np.asarray(y)
    return float(mse[y == 1].sum()), float(mse[y == 0].sum())


# ---- combined objective ----------------------------------------------------

def wscda_loss(ddl_value: float, pose_value: float, alpha: float, beta: float) -> float:
    """The combined objective ``alpha * ddl + beta * pose``."""
    if alpha * beta > 0:
        raise ConfigError(f"adversarial contract needs alpha*beta < 0, got alpha={alpha} beta={beta}")
    return alpha * ddl_value + beta * pose_value


# ---- pseudo-label target loss ----------------------------------------------

def pplo_target_loss(pred: np.ndarray, pseudo_targets: np.ndarray,
                     accept_flags: np.ndarray, vis: np.ndarray | None = None) -> float:
    """Self-paced target loss: ``sum_j flag_j * MSE(pred_j, pseudo_j)``.

    Rejected items (flag 0) contribute exactly zero whatever their maps
    contain. An all-rejected batch returns 0 and signals NoPseudoLabels.
    """
    flags = np.asarray(accept_flags, dtype=np.float64)
    if vis is None:
        vis = np.ones(pred.shape[:2])
    if not np.any(flags > 0):
        warnings.warn("no pseudo labels accepted in this batch", NoPseudoLabels)
        return 0.0
    mse = _per_item_mse(pred, pseudo_targets, np.asarray(vis, dtype=np.float64))
    return float((flags * mse).sum())


def pplo_target_loss_grad(pred: np.ndarray, pseudo_targets: np.ndarray,
                          accept_flags: np.ndarray, vis: np.ndarray | None = None) -> np.ndarray:
    n, d, h, w = pred.shape
    flags = np.asarray(accept_flags, dtype=np.float64)
    if vis is None:
        vis = np.ones((n, d))
    vis = np.asarray(vis, dtype=np.float64)
    n_annot = vis.sum(axis=1)
    denom = np.where(n_annot > 0, n_annot * h * w, 1.0)
    return 2.0 * (pred - pseudo_targets) * vis[:, :, None, None] * (flags / denom)[:, None, None, None]


# ---- the adversarial update ------------------------------------------------

@dataclass
class TrainingBatch:
    """One mixed batch: images plus domain flags, with heatmap targets for
    the labeled items (zeros and an all-False vis mask for unlabeled)."""

    images: np.ndarray        # (N, H, W, C)
    y: np.ndarray             # (N,) 1 = animal
    z: np.ndarray             # (N,) 1 = pose-unlabeled target
    target_maps: np.ndarray   # (N, d, h', w')
    vis: np.ndarray           # (N, d) bool

    @property
    def labeled(self) -> np.ndarray:
        return np.asarray(self.z) == 0


@dataclass
class StepMetrics:
    ddl: float
    pose: float
    wscda: float
    apel: float
    hpel: float
    disc_acc_y: float
    disc_acc_z: float


def adversarial_step(model: Model, batch: TrainingBatch, config: LossConfig,
                     optimizer: RMSProp | SGD) -> StepMetrics:
    """One optimization step of the combined adversarial objective.

    Realized as gradient reversal: the discriminator descends the DDL
    scaled by |alpha| while the extractor receives the same path's
    gradient negated; pose gradients flow at scale beta into extractor,
    adapter and keypoint head only. ``alpha = 0`` reduces to supervised
    pose training and leaves the discriminator untouched.
    """
    y = np.asarray(batch.y)
    z = np.asarray(batch.z)
    if len({(int(a), int(b)) for a, b in zip(y, z)}) < 2:
        warnings.warn("batch drawn from a single domain group; DDL gradient applied anyway")

    out = model.forward(batch.images)

    ddl_value = ddl(out.probs, y, z, config.w1)
    labeled = batch.labeled

    pose_value = 0.0
    apel = hpel = 0.0
    d_maps = np.zeros_like(out.maps)
    if labeled.any():
        pose_value = pose_loss(out.maps[labeled], batch.target_maps[labeled],
                               batch.vis[labeled], y[labeled], config.w2)
        apel, hpel = apel_hpel(out.maps[labeled], batch.target_maps[labeled],
                               batch.vis[labeled], y[labeled])
        d_maps[labeled] = pose_loss_grad(out.maps[labeled], batch.target_maps[labeled],
                                         batch.vis[labeled], y[labeled], config.w2)

    combined: dict[str, np.ndarray] = {}

    if config.beta != 0 and labeled.any():
        pose_grads = model.backward_pose(out, d_maps)
        for g in ("extractor", "dan", "head"):
            for k, v in pose_grads[g].items():
                combined[f"{g}/{k}"] = config.beta * v

    if config.alpha != 0:
        a = abs(config.alpha)
        ddl_grads = model.backward_domain(out, ddl_grad(out.probs, y, z, config.w1))
        for k, v in ddl_grads["disc"].items():
            combined[f"disc/{k}"] = a * v
        for k, v in ddl_grads["extractor"].items():
            key = f"extractor/{k}"
            combined[key] = combined.get(key, 0.0) - a * v
        # adapter stays pose-only by contract even when the discriminator
        # is wired after it

    if combined:
        optimizer.step(model.params(), combined)

    animals = y == 1
    acc_y = float(((out.probs[:, 0] > 0.5).astype(int) == y).mean())
    acc_z = float(((out.probs[animals, 1] > 0.5).astype(int) == z[animals]).mean()) if animals.any() else float("nan")
    return StepMetrics(ddl=ddl_value, pose=pose_value,
                       wscda=wscda_loss(ddl_value, pose_value, config.alpha, config.beta),
                       apel=apel, hpel=hpel, disc_acc_y=acc_y, disc_acc_z=acc_z)
