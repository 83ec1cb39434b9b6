import numpy as np
import pytest

from moodsense import simulator
from moodsense.core import assemble_feature_rows, clean_observations, study_holidays
from moodsense.simulator import (
    ClusterSpec,
    CohortConfig,
    GroundTruth,
    generate_cohort,
    ground_truth,
)


class TestConfigValidation:
    def test_cluster_probs_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            CohortConfig(clusters=(ClusterSpec(0, 0, 0, 0.5), ClusterSpec(0, 0, 0, 0.4)))

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            CohortConfig(true_sigma_u2_happiness=-0.1)

    def test_unknown_beta_key_rejected(self):
        with pytest.raises(ValueError, match="unknown feature"):
            CohortConfig(true_beta_happiness={"bpm_squared": 1.0})


class TestGroundTruth:
    def test_recovery_preset_carries_promised_variance(self):
        truth = ground_truth(simulator.recovery_config())
        assert truth.sigma_u2_happiness == 0.85

    def test_default_config_variance(self):
        assert ground_truth(CohortConfig()).sigma_u2_happiness == 0.85

    def test_default_light_effect_negative(self):
        truth = ground_truth(CohortConfig())
        assert truth.beta_happiness["light_level"] < 0
        assert truth.beta_activation["light_level"] < 0

    def test_json_round_trip(self):
        truth = ground_truth(CohortConfig())
        assert GroundTruth.from_json(truth.to_json()) == truth


class TestGeneration:
    def test_default_scale_brackets_study(self, small_cohort):
        cfg = CohortConfig(seed=5)
        cohort = generate_cohort(cfg)
        assert len(cohort.participants) == 17
        # observation stream lands in the study's reported magnitude
        assert 11_000 <= cohort.n_observations <= 22_000
        per_day = cohort.n_responses / (17 * 46)
        assert 4.0 <= per_day <= 7.0

    def test_deterministic_per_seed(self):
        a = generate_cohort(CohortConfig(seed=8, days=4, n_participants=3))
        b = generate_cohort(CohortConfig(seed=8, days=4, n_participants=3))
        for key in a._resp:
            assert np.array_equal(a._resp[key], b._resp[key]), key
        for key in a._obs:
            assert np.array_equal(a._obs[key], b._obs[key]), key

    def test_different_seeds_differ(self):
        a = generate_cohort(CohortConfig(seed=1, days=4, n_participants=3))
        b = generate_cohort(CohortConfig(seed=2, days=4, n_participants=3))
        assert not np.array_equal(a._resp["happiness"], b._resp["happiness"])

    def test_sensor_envelopes(self, small_cohort):
        light = small_cohort.response_feature("light_level")
        bpm = small_cohort.response_feature("avg_bpm")
        vmc = small_cohort.response_feature("vmc")
        cfg = small_cohort.config
        assert np.all((light >= 0) & (light <= 5))
        assert np.all(bpm >= cfg.bpm_floor)
        assert np.all(vmc >= 0)

    def test_zero_variance_process_has_binomial_noise_floor(self):
        cfg = simulator.empty_process_config(seed=3)
        cfg = simulator.dataclasses.replace(cfg, true_sigma_u2_happiness=0.0, days=120)
        cohort = generate_cohort(cfg)
        rates = []
        for pid in {str(p) for p in cohort._resp["pid"]}:
            mask = cohort._resp["pid"] == pid
            rates.append(cohort._resp["happiness"][mask].mean())
        n_per = int(np.mean([np.sum(cohort._resp["pid"] == p.id) for p in cohort.participants]))
        p_hat = float(cohort._resp["happiness"].mean())
        binomial_floor = p_hat * (1 - p_hat) / n_per
        assert np.var(rates) < 5 * binomial_floor

    def test_outcome_rate_matches_latent_probability(self):
        cfg = simulator.recovery_config(seed=6)
        cohort = generate_cohort(cfg)
        eta = cohort._resp["eta_happiness"]
        expected = float(np.mean(1 / (1 + np.exp(-eta))))
        observed = float(cohort._resp["happiness"].mean())
        assert abs(observed - expected) < 0.02

    def test_cleaning_loss_below_one_percent(self, small_cohort):
        kept, removed = clean_observations(small_cohort.observations, 30.0)
        assert removed / small_cohort.n_observations < 0.01
        assert removed > 0  # corruption is actually exercised


class TestFeatureRowFastPath:
    def test_matches_real_assembly_when_uncorrupted(self):
        cfg = CohortConfig(seed=4, days=5, n_participants=4, corrupt_bpm_rate=0.0,
                           obs_every_minutes=None)
        cohort = generate_cohort(cfg)
        direct = cohort.to_feature_rows()
        assembled, stats = assemble_feature_rows(
            cohort.responses,
            clean_observations(cohort.observations, 30.0).kept,
            {p.id: p for p in cohort.participants},
            study_holidays(),
        )
        assert stats.assembled == len(direct)
        key = lambda r: (r.participant_id, r.timestamp)
        for a, b in zip(sorted(direct, key=key), sorted(assembled, key=key)):
            assert a == b

    def test_design_matches_rows(self):
        cfg = CohortConfig(seed=4, days=3, n_participants=3)
        cohort = generate_cohort(cfg)
        X, y, groups = cohort.design("happiness", ("avg_bpm", "light_level"))
        rows = cohort.to_feature_rows()
        assert X.shape == (len(rows), 2)
        assert np.array_equal(y, [r.label_happiness for r in rows])

    def test_deterministic_label_mode(self):
        cohort = generate_cohort(simulator.deterministic_label_config(seed=2, n_days=4))
        eta = cohort._resp["eta_happiness"]
        assert np.array_equal(cohort._resp["happiness"], (eta > 0).astype(np.int64))
