"""The four-module adaptation network at desk scale.

Topology: a strided conv encoder (the feature extractor) feeds two
branches. The pose branch runs through a residual 1x1 adapter (the
domain adaptation network) and a keypoint head of two learnable 2x
upsampling blocks, emitting one sigmoid-squashed heatmap per keypoint.
The domain branch global-average-pools the extractor features into a
two-layer discriminator head that predicts (y_hat, z_hat): animal vs
human, and pose-unlabeled target vs labeled source.

By default the discriminator branches off *before* the adapter, so the
adapter serves only the pose path; ``disc_after_dan`` flips that wiring.

Parameters are partitioned into four named groups (extractor, dan, head,
disc) so the adversarial update rule can scale each path independently.
A model is mutable during training and must be owned by a single
trainer; evaluation on a frozen ``copy()`` is safe from any thread.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .core import sigmoid
from .errors import ConfigError
from .layers import Conv2d, Conv1x1, ConvTranspose2x2, Dense, GlobalAvgPool, ReLU, SqueezeExcite

PROB_EPS = 1e-7  # discriminator outputs are clamped into (eps, 1 - eps)

GROUPS = ("extractor", "dan", "head", "disc")


@dataclass
class ModelConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    num_keypoints: int = 19
    stage_channels: tuple = (8, 16, 24, 32)
    dan_hidden: int = 16
    head_channels: tuple = (24, 16)
    disc_hidden: int = 32
    output_stride: int = 4
    use_se: bool = False
    disc_after_dan: bool = False

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        self.head_channels = tuple(self.head_channels)
        if self.num_keypoints < 1:
            raise ConfigError("num_keypoints must be >= 1")
        if len(self.head_channels) != 2:
            raise ConfigError("keypoint head uses exactly two upsampling blocks")
        down = 2 ** len(self.stage_channels)
        if down != 4 * self.output_stride:
            raise ConfigError(
                f"{len(self.stage_channels)} stride-2 stages and two 2x upsampling blocks "
                f"give output stride {down // 4}, not {self.output_stride}"
            )
        if self.height % down or self.width % down:
            raise ConfigError(f"input {self.height}x{self.width} not divisible by total downsample {down}")

    @property
    def grid_height(self) -> int:
        return self.height // self.output_stride

    @property
    def grid_width(self) -> int:
        return self.width // self.output_stride


@dataclass
class ForwardOut:
    """Everything a forward pass produces, including the caches a
    backward pass needs. ``maps`` are post-sigmoid heatmaps in (0, 1);
    ``probs`` are the clamped (y_hat, z_hat) pairs."""

    maps: np.ndarray       # (N, d, h', w')
    probs: np.ndarray      # (N, 2) in (eps, 1-eps)
    cache: dict = field(repr=False, default_factory=dict)


class Model:
    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        cfg = config

        self.extractor: list[tuple[str, object]] = []
        c_prev = cfg.channels
        for i, c in enumerate(cfg.stage_channels):
            self.extractor.append((f"stage{i}.conv", Conv2d(c_prev, c, rng, kernel=3, stride=2, pad=1)))
            self.extractor.append((f"stage{i}.relu", ReLU()))
            if cfg.use_se:
                self.extractor.append((f"stage{i}.se", SqueezeExcite(c, rng)))
            c_prev = c
        c_feat = c_prev

        self.dan: list[tuple[str, object]] = [
            ("reduce", Conv1x1(c_feat, cfg.dan_hidden, rng)),
            ("relu", ReLU()),
            ("expand", Conv1x1(cfg.dan_hidden, c_feat, rng)),
        ]

        c1, c2 = cfg.head_channels
        self.head: list[tuple[str, object]] = [
            ("up0", ConvTranspose2x2(c_feat, c1, rng)),
            ("up0.relu", ReLU()),
            ("up1", ConvTranspose2x2(c1, c2, rng)),
            ("up1.relu", ReLU()),
            ("out", Conv1x1(c2, cfg.num_keypoints, rng)),
        ]

        # The output layer starts at zero: the first adversarial steps are
        # then pure discriminator descent (the reversed path carries no
        # gradient until this layer grows), so the DDL reliably falls from
        # initialization instead of being pushed up by the extractor.
        fc_out = Dense(cfg.disc_hidden, 2, rng)
        fc_out.params["W"][:] = 0.0
        self.disc: list[tuple[str, object]] = [
            ("pool", GlobalAvgPool()),
            ("fc0", Dense(c_feat, cfg.disc_hidden, rng)),
            ("relu", ReLU()),
            ("fc1", fc_out),
        ]

    # ---- parameter plumbing -------------------------------------------------

    def _group(self, name: str) -> list[tuple[str, object]]:
        return getattr(self, {"extractor": "extractor", "dan": "dan", "head": "head", "disc": "disc"}[name])

    def params(self) -> dict[str, np.ndarray]:
        """All parameters keyed 'group/layer/name'. Groups are disjoint by
        construction: every array appears under exactly one key."""
        out = {}
        for group in GROUPS:
            for lname, layer in self._group(group):
                for pname, arr in layer.params.items():
                    out[f"{group}/{lname}/{pname}"] = arr
        return out

    def group_params(self, group: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params().items() if k.startswith(group + "/")}

    def set_param(self, key: str, value: np.ndarray) -> None:
        group, lname, pname = key.split("/")
        for name, layer in self._group(group):
            if name == lname:
                layer.params[pname] = value
                return
        raise KeyError(key)

    def num_params(self, group: str | None = None) -> int:
        items = self.group_params(group) if group else self.params()
        return sum(v.size for v in items.values())

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def checksum(self) -> str:
        """SHA-256 over all parameters in key order; the reproducibility
        fingerprint recorded in run manifests."""
        h = hashlib.sha256()
        for key in sorted(self.params()):
            h.update(key.encode())
            h.update(np.ascontiguousarray(self.params()[key]).tobytes())
        return h.hexdigest()

    # ---- forward / backward -------------------------------------------------

    def _run(self, layers, x):
        caches = []
        for _, layer in layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def _back(self, layers, caches, dy):
        grads = {}
        for (lname, layer), cache in zip(reversed(layers), reversed(caches)):
            dy, layer_grads = layer.backward(dy, cache)
            for pname, g in layer_grads.items():
                grads[f"{lname}/{pname}"] = g
        return dy, grads

    def forward(self, images: np.ndarray) -> ForwardOut:
        """Run a batch of (N, H, W, C) images in [0, 1] through both branches."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 4 or images.shape[1:3] != (self.config.height, self.config.width) \
                or images.shape[3] != self.config.channels:
            raise ValueError(
                f"expected (N, {self.config.height}, {self.config.width}, {self.config.channels}) "
                f"images, got {images.shape}"
            )
        x = images.transpose(0, 3, 1, 2)

        feats, ext_caches = self._run(self.extractor, x)

        adapter, dan_caches = self._run(self.dan, feats)
        dan_out = feats + adapter

        raw, head_caches = self._run(self.head, dan_out)
        maps = sigmoid(raw)

        disc_in = dan_out if self.config.disc_after_dan else feats
        logits, disc_caches = self._run(self.disc, disc_in)
        p = sigmoid(logits)
        probs = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)

        cache = {
            "ext": ext_caches, "dan": dan_caches, "head": head_caches, "disc": disc_caches,
            "maps": maps, "p_unclamped": p,
        }
        return ForwardOut(maps=maps, probs=probs, cache=cache)

    def _zero_grads(self, group: str) -> dict[str, np.ndarray]:
        return {f"{lname}/{pname}": np.zeros_like(arr)
                for lname, layer in self._group(group)
                for pname, arr in layer.params.items()}

    def _back_dan_residual(self, cache, d_dan_out):
        d_through, dan_grads = self._back(self.dan, cache["dan"], d_dan_out)
        return d_dan_out + d_through, dan_grads

    def backward_pose(self, out: ForwardOut, d_maps: np.ndarray) -> dict[str, dict[str, np.ndarray]]:
        """Gradients of a scalar loss along the pose path, given dL/d(maps).

        The sigmoid squash is chained here; returns per-group grad dicts
        with zeros for the discriminator (disconnected path).
        """
        cache = out.cache
        d_raw = d_maps * cache["maps"] * (1.0 - cache["maps"])
        d_dan_out, head_grads = self._back(self.head, cache["head"], d_raw)
        d_feats, dan_grads = self._back_dan_residual(cache, d_dan_out)
        if self.config.disc_after_dan:
            # the discriminator also consumes dan_out, but this pass carries
            # no domain-loss gradient, so nothing extra flows here
            pass
        _, ext_grads = self._back(self.extractor, cache["ext"], d_feats)
        return {"extractor": ext_grads, "dan": dan_grads, "head": head_grads,
                "disc": self._zero_grads("disc")}

    def backward_domain(self, out: ForwardOut, d_probs: np.ndarray) -> dict[str, dict[str, np.ndarray]]:
        """Gradients of a scalar loss along the domain path, given dL/d(probs).

        Chains the clamp (zero gradient where saturated) and the sigmoid.
        """
        cache = out.cache
        p = cache["p_unclamped"]
        in_range = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
        d_logits = d_probs * in_range * p * (1.0 - p)
        d_disc_in, disc_grads = self._back(self.disc, cache["disc"], d_logits)
        if self.config.disc_after_dan:
            d_feats, dan_grads = self._back_dan_residual(cache, d_disc_in)
        else:
            d_feats, dan_grads = d_disc_in, self._zero_grads("dan")
        _, ext_grads = self._back(self.extractor, cache["ext"], d_feats)
        return {"extractor": ext_grads, "dan": dan_grads, "head": self._zero_grads("head"),
                "disc": disc_grads}


def build(config: ModelConfig, seed: int) -> Model:
    """Construct a model with deterministic seeded initialization."""
    return Model(config, seed)


def gradient_groups(model: Model, out: ForwardOut,
                    d_maps: np.ndarray | None = None,
                    d_probs: np.ndarray | None = None) -> dict[str, dict[str, np.ndarray]]:
    """Per-group gradients of a scalar loss whose output-side gradients are
    ``d_maps`` (pose path) and/or ``d_probs`` (domain path).

    A group not connected to the supplied paths gets explicit zero
    gradients rather than being omitted.
    """
    total = {g: model._zero_grads(g) for g in GROUPS}
    parts = []
    if d_maps is not None:
        parts.append(model.backward_pose(out, d_maps))
    if d_probs is not None:
        parts.append(model.backward_domain(out, d_probs))
    for part in parts:
        for g in GROUPS:
            for k, v in part[g].items():
                total[g][k] += v
    return total


def save_checkpoint(model: Model, path, metadata: dict | None = None) -> None:
    """Self-describing archive: config, seed, the four parameter groups,
    and arbitrary training-stage metadata."""
    payload = {k.replace("/", "__"): v for k, v in model.params().items()}
    header = {
        "config": asdict(model.config),
        "seed": model.seed,
        "metadata": metadata or {},
    }
    payload["__header__"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_checkpoint(path) -> tuple[Model, dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        cfg = ModelConfig(**{k: tuple(v) if isinstance(v, list) else v
                             for k, v in header["config"].items()})
        model = Model(cfg, header["seed"])
        for key in model.params():
            model.set_param(key, data[key.replace("/", "__")].copy())
    return model, header["metadata"]
