import numpy as np
import pytest

from crosspose.errors import ConfigError
from crosspose.losses import LossConfig
from crosspose.network import ModelConfig, build
from crosspose.pplo import (
    PPLOConfig, PseudoLabelStore, confidence_filter, refresh_pseudo_labels,
    relax_mu, run_pplo,
)
from crosspose.synthetic import SynthDomainSpec, default_proportions, generate_domain, generate_synthetic

TINY_MODEL = ModelConfig(height=32, width=32, stage_channels=(4, 6, 8, 8), dan_hidden=4,
                         head_channels=(8, 6), disc_hidden=8, num_keypoints=19)


def small_world(seed=0, n_target=6):
    human = generate_domain(SynthDomainSpec(
        "humanish", default_proportions("human-like"), count=10, seed=seed, human=True))
    animal = generate_domain(SynthDomainSpec(
        "beast", default_proportions("animal"), count=6, seed=seed + 1))
    _, target = generate_synthetic(
        SynthDomainSpec("humanish", default_proportions("human-like"), count=1, seed=seed, human=True),
        SynthDomainSpec("tgt", default_proportions("animal"), count=n_target, seed=seed + 2))
    return human, animal, target


class TestFilter:
    def test_above_threshold(self):
        assert confidence_filter(0.95, 0.9) == 1

    def test_equal_is_rejected(self):
        assert confidence_filter(0.9, 0.9) == 0

    def test_zero_confidence(self):
        assert confidence_filter(0.0, 0.5) == 0


class TestRelax:
    def test_active_window_steps_down(self):
        assert relax_mu(0.9, 3, PPLOConfig()) == pytest.approx(0.89)

    def test_inactive_window_holds(self):
        assert relax_mu(0.9, 0, PPLOConfig()) == pytest.approx(0.9)

    def test_three_active_windows(self):
        mu = 0.9
        for _ in range(3):
            mu = relax_mu(mu, 1, PPLOConfig())
        assert mu == pytest.approx(0.87)

    def test_floor_at_zero(self):
        assert relax_mu(0.005, 1, PPLOConfig()) == 0.0


class TestConfig:
    def test_mu0_range(self):
        with pytest.raises(ConfigError):
            PPLOConfig(mu0=0.0)
        with pytest.raises(ConfigError):
            PPLOConfig(mu0=1.5)

    def test_k_validation(self):
        with pytest.raises(ConfigError):
            PPLOConfig(k_source=0)


class TestStore:
    def test_put_enforces_filter(self):
        store = PseudoLabelStore()
        from crosspose.core import Keypoint, Pose
        pose = Pose([Keypoint(1, 1, 2)])
        with pytest.raises(ConfigError):
            store.put("a", pose, confidence=0.5, epoch=0, mu=0.9)

    def test_replace_semantics(self):
        from crosspose.core import Keypoint, Pose
        store = PseudoLabelStore()
        store.put("a", Pose([Keypoint(1, 1, 2)]), 0.95, epoch=0, mu=0.9)
        store.put("a", Pose([Keypoint(2, 2, 2)]), 0.97, epoch=3, mu=0.9)
        assert len(store) == 1
        assert store.get("a").epoch == 3
        assert store.get("a").pose.keypoints[0].x == 2

    def test_json_round_trip(self, tmp_path):
        from crosspose.core import Keypoint, Pose
        store = PseudoLabelStore()
        store.put("a", Pose([Keypoint(1.5, 2.5, 2)], "s"), 0.95, epoch=1, mu=0.9)
        path = tmp_path / "store.json"
        store.to_json(path)
        loaded = PseudoLabelStore.from_json(path, "s")
        assert loaded.get("a").confidence == 0.95
        assert loaded.get("a").mu == 0.9
        assert loaded.get("a").pose.keypoints[0].y == 2.5


class TestRefresh:
    def test_empty_target_set(self):
        model = build(TINY_MODEL, 0)
        _, _, target = small_world()
        store = PseudoLabelStore()
        count = refresh_pseudo_labels(model, target.subset([]), store, mu=0.5)
        assert count == 0 and len(store) == 0

    def test_mu_one_accepts_nothing(self):
        model = build(TINY_MODEL, 0)
        _, _, target = small_world()
        store = PseudoLabelStore()
        assert refresh_pseudo_labels(model, target, store, mu=1.0) == 0
        assert len(store) == 0

    def test_lower_mu_accepts_superset(self):
        model = build(TINY_MODEL, 3)
        _, _, target = small_world(n_target=10)
        # an untrained model has mid-range confidences; pick thresholds
        # around the observed spread
        strict, loose = PseudoLabelStore(), PseudoLabelStore()
        refresh_pseudo_labels(model, target, strict, mu=0.55)
        refresh_pseudo_labels(model, target, loose, mu=0.35)
        assert set(strict.ids()) <= set(loose.ids())

    def test_below_threshold_keeps_prior_entry(self):
        model = build(TINY_MODEL, 3)
        _, _, target = small_world(n_target=4)
        store = PseudoLabelStore()
        refresh_pseudo_labels(model, target, store, mu=0.0, epoch=0)
        before = {i: store.get(i).epoch for i in store.ids()}
        assert before  # everything accepted at mu=0
        refresh_pseudo_labels(model, target, store, mu=1.0, epoch=5)
        assert {i: store.get(i).epoch for i in store.ids()} == before


class TestRunPPLO:
    def _run(self, epochs=3, mu0=0.9, mu_window=2, **kw):
        human, animal, target = small_world()
        model = build(TINY_MODEL, 1)
        cfg = PPLOConfig(mu0=mu0, mu_window=mu_window, k_source=1, k_target=1,
                         batch_size=4, lr=1e-4)
        return run_pplo(model, human, animal, target, cfg, LossConfig(),
                        epochs=epochs, seed=5, **kw)

    def test_phase_order_instrumented(self):
        res = self._run(epochs=4, mu0=0.2, mu_window=2)
        for epoch, phases in enumerate(res.phase_trace):
            assert phases[0] == "source"
            assert phases[1] == "refresh"
            assert phases[2] in ("target", "target_skipped")
            if (epoch + 1) % 2 == 0:
                assert phases[-1] == "relax"
            else:
                assert "relax" not in phases

    def test_mu_never_increases(self):
        res = self._run(epochs=6, mu0=0.5, mu_window=2)
        mus = [0.5] + res.mu_history
        assert all(b <= a for a, b in zip(mus, mus[1:]))

    def test_empty_store_skips_target_phase(self):
        with pytest.warns(UserWarning, match="target phase skipped"):
            res = self._run(epochs=1, mu0=1.0)
        assert res.phase_trace[0][2] == "target_skipped"
        assert np.isnan(res.rows[0]["target_loss"])

    def test_metrics_columns(self, tmp_path):
        res = self._run(epochs=2, mu0=0.2, out_dir=tmp_path)
        for col in ("epoch", "mu", "accepted_count", "new_or_updated_count",
                    "source_loss", "target_loss"):
            assert col in res.rows[0]
        assert (tmp_path / "pplo_metrics.csv").exists()
        assert (tmp_path / "pseudo_labels.json").exists()

    def test_entries_respect_threshold_at_acceptance(self):
        res = self._run(epochs=4, mu0=0.3, mu_window=1)
        for inst_id in res.store.ids():
            e = res.store.get(inst_id)
            assert e.confidence > e.mu

    def test_labeled_target_rejected(self):
        human, animal, _ = small_world()
        model = build(TINY_MODEL, 1)
        with pytest.raises(ConfigError):
            run_pplo(model, human, animal, animal, PPLOConfig(), LossConfig(), epochs=1)
