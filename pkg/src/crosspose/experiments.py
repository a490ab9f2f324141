"""The canned desk-scale adaptation benchmark: one large labeled
"human-like" domain, three small labeled quadruped species, and one
held-out quadruped species that is pose-blinded during training.

All domains share one broad appearance family (palette jitter, noise,
scale and rotation variety), so the small animal set underdetermines
appearance and the large source domain genuinely helps; the held-out
species additionally shifts its palette mildly and differs in skeleton
proportions and pose prior, which is the domain gap the adversarial
training and the pseudo-label curriculum have to close.

Four method arms mirror the ablation grid: a target-free supervised
baseline on the labeled animals, the adversarial adaptation run with
``w2`` of 1 or 10, and the full pipeline with the pseudo-label curriculum
on top. Everything is deterministic in the benchmark seed, and arms
within one seed share the same data so cross-arm comparisons pair up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import AnnotationSet
from .core import Instance
from .evaluation import evaluate_model
from .losses import LossConfig
from .network import Model, ModelConfig, build
from .pplo import PPLOConfig, PPLOResult, run_pplo
from .synthetic import SynthDomainSpec, default_proportions, generate_domain
from .training import BatchComposition, Stage, StageSchedule, TrainResult, train_supervised, train_wscda

SIGMA = 1.5
PCK_FRACTION = 0.2

SHARED_APPEARANCE = dict(
    fg_color=(0.78, 0.75, 0.68), bg_color=(0.24, 0.26, 0.28),
    color_jitter=0.22, noise=0.03, scale_range=(0.65, 0.95),
    rotation_jitter_deg=14.0,
)

TARGET_APPEARANCE = dict(
    fg_color=(0.84, 0.78, 0.66), bg_color=(0.28, 0.30, 0.33),
    color_jitter=0.15, noise=0.035, scale_range=(0.65, 0.95),
    rotation_jitter_deg=14.0,
)


def species_proportions(variant: int) -> np.ndarray:
    """Skeleton profiles: 1 long back, 2 long lower legs, 3 big head,
    4 (the held-out target) long neck and back with stubby paws."""
    p = default_proportions("animal").copy()
    if variant == 1:
        p[5] *= 1.6
    elif variant == 2:
        p[10:14] *= 1.5
    elif variant == 3:
        p[0:4] *= 1.8
    elif variant == 4:
        p[4] *= 1.6
        p[14:18] *= 0.55
        p[5] *= 1.3
    else:
        raise ValueError(f"unknown species variant {variant}")
    return p / p.sum()


def benchmark_model_config() -> ModelConfig:
    return ModelConfig(height=32, width=32, stage_channels=(8, 16, 24, 32),
                       dan_hidden=16, head_channels=(24, 16), disc_hidden=32,
                       num_keypoints=19)


def benchmark_schedule(max_epochs: int = 40) -> StageSchedule:
    # desk-scale learning rates; the tiny network needs larger steps than
    # a full-scale backbone to converge in minutes
    return StageSchedule(stages=[Stage(1e-3, False), Stage(1e-3, True), Stage(3e-4, True)],
                         window=4, max_epochs_per_stage=max_epochs)


def benchmark_pplo_config() -> PPLOConfig:
    return PPLOConfig(mu0=0.9, mu_step=0.01, mu_window=10, batch_size=16, lr=5e-5)


@dataclass
class Benchmark:
    seed: int
    human: AnnotationSet
    animal: AnnotationSet
    target_unlabeled: AnnotationSet
    target_test: AnnotationSet


def make_benchmark(seed: int, n_human: int = 300, n_animal_per_species: int = 12,
                   n_target_unlabeled: int = 120, n_target_test: int = 60) -> Benchmark:
    human = generate_domain(SynthDomainSpec(
        "humanish", default_proportions("human-like"), count=n_human,
        seed=seed * 100 + 1, human=True, **SHARED_APPEARANCE))
    species_sets = [
        generate_domain(SynthDomainSpec(
            f"species{v}", species_proportions(v), count=n_animal_per_species,
            seed=seed * 100 + 10 + v, **SHARED_APPEARANCE))
        for v in (1, 2, 3)
    ]
    animal = AnnotationSet([inst for s in species_sets for inst in s.instances],
                           species_sets[0].schema)
    target_spec = lambda n, s: SynthDomainSpec(
        "targetspecies", species_proportions(4), count=n, seed=s,
        angle_jitter_deg=14.0, **TARGET_APPEARANCE)
    target_unlabeled = generate_domain(target_spec(n_target_unlabeled, seed * 100 + 50),
                                       labeled=False)
    target_test = generate_domain(target_spec(n_target_test, seed * 100 + 60), labeled=True)
    return Benchmark(seed, human, animal, target_unlabeled, target_test)


@dataclass
class ArmOutcome:
    name: str
    model: Model
    target_pck: float
    eval_result: dict
    train_rows: list = field(default_factory=list)
    pplo: PPLOResult | None = None


def _evaluate(model, bench) -> dict:
    return evaluate_model(model, bench.target_test, pck_fraction=PCK_FRACTION)


def run_baseline_arm(bench: Benchmark, max_epochs: int = 40) -> ArmOutcome:
    """Target-free supervised training on the labeled animal species."""
    model = build(benchmark_model_config(), bench.seed)
    res = train_supervised(model, bench.animal, schedule=benchmark_schedule(max_epochs),
                           batch_size=16, sigma=SIGMA, seed=bench.seed, steps_per_epoch=8)
    ev = _evaluate(model, bench)
    return ArmOutcome("baseline", model, ev["mean_pck"], ev, res.rows)


def run_wscda_arm(bench: Benchmark, w2: float = 10.0, max_epochs: int = 40,
                  animal_override: AnnotationSet | None = None) -> ArmOutcome:
    """Adversarial adaptation over the three sources."""
    model = build(benchmark_model_config(), bench.seed)
    animal = animal_override if animal_override is not None else bench.animal
    res = train_wscda(model, bench.human, animal, bench.target_unlabeled,
                      LossConfig(w2=w2), schedule=benchmark_schedule(max_epochs),
                      batch_comp=BatchComposition(batch_size=16),
                      sigma=SIGMA, seed=bench.seed, steps_per_epoch=15)
    ev = _evaluate(model, bench)
    return ArmOutcome(f"wscda_w2_{w2:g}", model, ev["mean_pck"], ev, res.rows)


def run_pplo_arm(bench: Benchmark, wscda_model: Model, epochs: int = 30,
                 animal_override: AnnotationSet | None = None) -> ArmOutcome:
    """The pseudo-label curriculum on top of a finished adaptation run."""
    model = wscda_model.copy()
    animal = animal_override if animal_override is not None else bench.animal
    res = run_pplo(model, bench.human, animal, bench.target_unlabeled,
                   benchmark_pplo_config(), LossConfig(w2=10.0),
                   epochs=epochs, seed=bench.seed + 7, sigma=SIGMA)
    ev = _evaluate(model, bench)
    return ArmOutcome("wscda_pplo", model, ev["mean_pck"], ev, pplo=res)


def run_method_comparison(seed: int, max_epochs: int = 40, pplo_epochs: int = 30) -> dict:
    """All four arms on one seed's benchmark; returns name -> target PCK."""
    bench = make_benchmark(seed)
    out = {}
    out["baseline"] = run_baseline_arm(bench, max_epochs).target_pck
    w1_arm = run_wscda_arm(bench, w2=1.0, max_epochs=max_epochs)
    out["wscda_w2_1"] = w1_arm.target_pck
    w10_arm = run_wscda_arm(bench, w2=10.0, max_epochs=max_epochs)
    out["wscda_w2_10"] = w10_arm.target_pck
    out["wscda_pplo"] = run_pplo_arm(bench, w10_arm.model, epochs=pplo_epochs).target_pck
    return out


def add_target_labels(bench: Benchmark, n_gt: int) -> AnnotationSet:
    """Move the first n_gt blinded target instances into the labeled animal
    pool using their hidden ground truth (the supervised-boost setting)."""
    if n_gt == 0:
        return bench.animal
    chosen = sorted(bench.target_unlabeled.ids())[:n_gt]
    extra = []
    for inst in bench.target_unlabeled.instances:
        if inst.id in chosen:
            extra.append(Instance(inst.id, inst.image,
                                  bench.target_unlabeled.hidden_truth[inst.id],
                                  y=1, z=0, species=inst.species, bbox=inst.bbox))
    merged = list(bench.animal.instances) + extra
    return AnnotationSet(merged, bench.animal.schema)


def run_supervised_boost(seed: int, n_gt: int, max_epochs: int = 40,
                         pplo_epochs: int = 30) -> float:
    """Full pipeline with n_gt ground-truth target labels added to the
    labeled pool; returns target PCK. The boosted instances stay in the
    unlabeled pool too, mirroring the dataset-volume setting."""
    bench = make_benchmark(seed)
    boosted = add_target_labels(bench, n_gt)
    wscda_arm = run_wscda_arm(bench, w2=10.0, max_epochs=max_epochs, animal_override=boosted)
    pplo_arm = run_pplo_arm(bench, wscda_arm.model, epochs=pplo_epochs, animal_override=boosted)
    return pplo_arm.target_pck
