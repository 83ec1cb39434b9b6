"""Synthetic-cohort generator with a known ground-truth latent model.

Per poll instant a latent linear predictor

    eta = x . true_beta + u_participant + cluster_shift

feeds a logistic draw for each outcome (or a hard threshold when
``deterministic_labels`` is set). Sensors follow diurnal envelopes, locations
come from per-participant clusters with small jitter, and a configurable
fraction of recorded BPM values is zeroed to mimic a watch that was not worn
(labels are generated from the true sensor state, the corruption only touches
the recorded observation).

Everything is a pure function of the seed. Observation/response objects are
materialized lazily; analyses that only need matrices read the internal
arrays directly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .core import (
    FACTOR_NAMES,
    FeatureRow,
    HolidayCalendar,
    MoodResponse,
    Observation,
    Participant,
    encode_mood_state,
    study_holidays,
)
from .sampling import SamplingConfig, plan_daily_polls

_EPOCH_UTC = timezone.utc

#: Feature order of the latent design (the keys true_beta maps may use).
LATENT_FEATURES = (
    "avg_bpm",
    "light_level",
    "acceleration",
    "vmc",
    "weekend_holiday",
    "gender_male",
    "age",
    "weight",
    "sportiness",
    "neuroticism",
    "extraversion",
    "openness",
    "agreeableness",
    "conscientiousness",
)


@dataclass(frozen=True)
class ClusterSpec:
    """One location cluster: geometry, visit probability, latent mood shifts."""

    d_lat: float
    d_lon: float
    altitude: float
    prob: float
    happiness_shift: float = 0.0
    activation_shift: float = 0.0


def _default_clusters() -> tuple:
    return (
        ClusterSpec(0.0, 0.0, 12.0, 0.50),
        ClusterSpec(0.03, 0.04, 40.0, 0.35),
        ClusterSpec(-0.05, 0.02, 25.0, 0.15),
    )


def _default_beta_happiness() -> dict:
    # Signs follow the directions the analyses should echo: calmer bodies and
    # dimmer rooms go with happier reports, movement helps a little,
    # agreeableness helps, neuroticism and conscientiousness hurt.
    return {
        "const": 2.8,
        "avg_bpm": -0.018,
        "light_level": -0.45,
        "acceleration": 2.6e-4,
        "vmc": 4.6e-6,
        "neuroticism": -0.008,
        "agreeableness": 0.018,
        "conscientiousness": -0.009,
    }


def _default_beta_activation() -> dict:
    return {
        "const": 1.6,
        "avg_bpm": -0.022,
        "light_level": -0.50,
        "acceleration": 2.2e-4,
        "vmc": 8.0e-6,
        "openness": -0.009,
        "agreeableness": 0.021,
        "conscientiousness": 0.027,
        "weekend_holiday": -0.35,
        "gender_male": 0.45,
    }


@dataclass(frozen=True)
class CohortConfig:
    n_participants: int = 17
    start: date = date(2016, 12, 19)
    days: int = 46
    seed: int = 0
    tz: str = "UTC"
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    holidays: HolidayCalendar = field(default_factory=study_holidays)

    # demographics
    age_mean: float = 29.0
    age_sd: float = 8.0
    age_min: int = 23
    age_max: int = 56
    weight_mean: float = 72.0
    weight_sd: float = 12.0
    male_share: float = 0.30
    factor_mean: float = 50.0
    factor_sd: float = 15.0

    # diurnal sensor processes
    bpm_base_mean: float = 72.0
    bpm_between_sd: float = 6.0
    bpm_diurnal_amp: float = 9.0
    bpm_noise_sd: float = 5.0
    bpm_floor: float = 40.0
    light_night: float = 0.5
    light_day: float = 3.2
    light_noise_sd: float = 0.6
    accel_scale: float = 800.0
    vmc_per_accel: float = 40.0
    vmc_noise_scale: float = 60000.0

    # observation stream cadence between polls; None = observations only at polls
    obs_every_minutes: Optional[float] = 45.0
    #: recorded BPM zeroed at this rate (measurement artifact, labels unaffected)
    corrupt_bpm_rate: float = 0.005

    # location model
    center_lat: float = 42.36
    center_lon: float = -71.09
    participant_spread_deg: float = 0.15
    clusters: tuple = field(default_factory=_default_clusters)
    gps_jitter_deg: float = 0.0008
    gps_jitter_alt: float = 3.0

    # latent truth
    true_beta_happiness: dict = field(default_factory=_default_beta_happiness)
    true_beta_activation: dict = field(default_factory=_default_beta_activation)
    true_sigma_u2_happiness: float = 0.85
    true_sigma_u2_activation: float = 2.38
    #: shared per-response latent shock feeding both outcomes; ties happiness
    #: and activation together the way real moods co-move. Estimation-oriented
    #: presets turn it off because it is overdispersion the logit model does
    #: not represent.
    shared_mood_shock: float = 1.0
    deterministic_labels: bool = False

    def __post_init__(self) -> None:
        if self.n_participants < 1 or self.days < 1:
            raise ValueError("need at least one participant and one day")
        if self.true_sigma_u2_happiness < 0 or self.true_sigma_u2_activation < 0:
            raise ValueError("variances must be non-negative")
        total = sum(c.prob for c in self.clusters)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"cluster probabilities must sum to 1, got {total}")
        for name in ("true_beta_happiness", "true_beta_activation"):
            for key in getattr(self, name):
                if key != "const" and key not in LATENT_FEATURES:
                    raise ValueError(f"{name} refers to unknown feature {key!r}")


@dataclass(frozen=True)
class GroundTruth:
    """The exact generating parameters, for assertion in recovery tests."""

    beta_happiness: dict
    beta_activation: dict
    sigma_u2_happiness: float
    sigma_u2_activation: float
    happiness_cluster_shifts: tuple
    activation_cluster_shifts: tuple
    deterministic_labels: bool

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        payload["happiness_cluster_shifts"] = list(self.happiness_cluster_shifts)
        payload["activation_cluster_shifts"] = list(self.activation_cluster_shifts)
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        raw = json.loads(text)
        raw["happiness_cluster_shifts"] = tuple(raw["happiness_cluster_shifts"])
        raw["activation_cluster_shifts"] = tuple(raw["activation_cluster_shifts"])
        return cls(**raw)


def ground_truth(config: CohortConfig) -> GroundTruth:
    return GroundTruth(
        beta_happiness=dict(config.true_beta_happiness),
        beta_activation=dict(config.true_beta_activation),
        sigma_u2_happiness=config.true_sigma_u2_happiness,
        sigma_u2_activation=config.true_sigma_u2_activation,
        happiness_cluster_shifts=tuple(c.happiness_shift for c in config.clusters),
        activation_cluster_shifts=tuple(c.activation_shift for c in config.clusters),
        deterministic_labels=config.deterministic_labels,
    )


def _activity_envelope(hours: np.ndarray) -> np.ndarray:
    """Smooth 0..1 daytime activity level peaking mid-afternoon."""
    return np.exp(-(((hours - 14.0) / 5.0) ** 2))


class Cohort:
    """Generated dataset plus the arrays it was generated from."""

    def __init__(self, config: CohortConfig, participants, resp_arrays, obs_arrays, truth):
        self.config = config
        self.participants = participants
        self._resp = resp_arrays
        self._obs = obs_arrays
        self.ground_truth = truth

    @property
    def n_responses(self) -> int:
        return len(self._resp["ts"])

    @property
    def n_observations(self) -> int:
        return len(self._obs["ts"])

    def response_feature(self, name: str) -> np.ndarray:
        return self._resp[name]

    def design(self, outcome: str, predictors: Sequence[str]):
        """(X, y, groups) taken straight from the generating arrays."""
        X = np.column_stack([self._resp[p] for p in predictors]) if predictors else np.empty(
            (self.n_responses, 0)
        )
        y = self._resp["happiness"] if outcome == "happiness" else self._resp["activation"]
        return X, y.astype(np.float64), self._resp["pid"]

    @cached_property
    def observations(self) -> list:
        out = []
        o = self._obs
        for i in range(self.n_observations):
            out.append(
                Observation(
                    participant_id=str(o["pid"][i]),
                    timestamp=datetime.fromtimestamp(float(o["ts"][i]), tz=_EPOCH_UTC),
                    bpm=float(o["bpm"][i]),
                    light_level=float(o["light"][i]),
                    acceleration=float(o["accel"][i]),
                    vmc=float(o["vmc"][i]),
                    latitude=float(o["lat"][i]),
                    longitude=float(o["lon"][i]),
                    altitude=float(o["alt"][i]),
                )
            )
        return out

    @cached_property
    def responses(self) -> list:
        out = []
        r = self._resp
        for i in range(self.n_responses):
            out.append(
                MoodResponse(
                    participant_id=str(r["pid"][i]),
                    timestamp=datetime.fromtimestamp(float(r["ts"][i]), tz=_EPOCH_UTC),
                    happiness=int(r["happiness"][i]),
                    activation=int(r["activation"][i]),
                )
            )
        return out

    def to_feature_rows(self) -> list:
        """Analysis rows built directly from the generating arrays.

        Equals the clean/assemble pipeline output when no corruption is
        configured (asserted in the test suite).
        """
        rows = []
        r = self._resp
        by_id = {p.id: p for p in self.participants}
        for i in range(self.n_responses):
            p = by_id[str(r["pid"][i])]
            rows.append(
                FeatureRow(
                    participant_id=p.id,
                    timestamp=datetime.fromtimestamp(float(r["ts"][i]), tz=_EPOCH_UTC),
                    label_happiness=int(r["happiness"][i]),
                    label_activation=int(r["activation"][i]),
                    label_mood_state=encode_mood_state(
                        int(r["happiness"][i]), int(r["activation"][i])
                    ),
                    avg_bpm=float(r["avg_bpm"][i]),
                    light_level=float(r["light_level"][i]),
                    acceleration=float(r["acceleration"][i]),
                    vmc=float(r["vmc"][i]),
                    weekend_holiday=int(r["weekend_holiday"][i]),
                    gender_male=p.gender_male,
                    age=float(p.age),
                    weight=float(p.weight),
                    sportiness=float(p.sportiness),
                    neuroticism=p.neuroticism,
                    extraversion=p.extraversion,
                    openness=p.openness,
                    agreeableness=p.agreeableness,
                    conscientiousness=p.conscientiousness,
                    latitude=float(r["latitude"][i]),
                    longitude=float(r["longitude"][i]),
                    altitude=float(r["altitude"][i]),
                )
            )
        return rows


def generate_cohort(config: CohortConfig = CohortConfig()) -> Cohort:
    participants = _draw_participants(config)
    truth = ground_truth(config)

    resp_parts = []
    obs_parts = []
    for pidx, participant in enumerate(participants):
        r, o = _generate_participant(config, pidx, participant)
        resp_parts.append(r)
        obs_parts.append(o)

    resp = {k: np.concatenate([p[k] for p in resp_parts]) for k in resp_parts[0]}
    obs = {k: np.concatenate([p[k] for p in obs_parts]) for k in obs_parts[0]}
    return Cohort(config, participants, resp, obs, truth)


def _draw_participants(config: CohortConfig) -> list:
    out = []
    for pidx in range(config.n_participants):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 101, pidx]))
        age = int(np.clip(round(rng.normal(config.age_mean, config.age_sd)), config.age_min, config.age_max))
        weight = float(np.clip(rng.normal(config.weight_mean, config.weight_sd), 45.0, 130.0))
        gender = "male" if rng.uniform() < config.male_share else "female"
        sportiness = int(rng.integers(1, 4))
        factors = {
            name: float(np.clip(rng.normal(config.factor_mean, config.factor_sd), 0.0, 100.0))
            for name in FACTOR_NAMES
        }
        out.append(
            Participant(
                id=f"p{pidx:02d}",
                age=age,
                gender=gender,
                weight=weight,
                sportiness=sportiness,
                tz=config.tz,
                **factors,
            )
        )
    return out


def _local_to_epoch(instants: list, config: CohortConfig) -> np.ndarray:
    from zoneinfo import ZoneInfo

    zone = ZoneInfo(config.tz)
    return np.array(
        [
            dt.replace(microsecond=0, tzinfo=zone).astimezone(_EPOCH_UTC).timestamp()
            for dt in instants
        ]
    )


def _generate_participant(config: CohortConfig, pidx: int, participant: Participant):
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 202, pidx]))

    # one plan per study day; the scheduler owns its own seed stream
    poll_instants: list = []
    poll_ordinals: list = []
    stream_instants: list = []
    stream_ordinals: list = []
    window = config.sampling
    for d in range(config.days):
        day = config.start + timedelta(days=d)
        plan = plan_daily_polls(participant.id, day, config.seed, window)
        poll_instants.extend(plan.instants)
        poll_ordinals.extend([day.toordinal()] * len(plan.instants))
        if config.obs_every_minutes is not None:
            t0 = datetime.combine(day, window.window_start)
            t_end = datetime.combine(day, window.window_end)
            step = timedelta(minutes=config.obs_every_minutes)
            cursor = t0
            while cursor <= t_end:
                stream_instants.append(cursor)
                stream_ordinals.append(day.toordinal())
                cursor += step

    n_polls = len(poll_instants)
    n_stream = len(stream_instants)
    poll_ts = _local_to_epoch(poll_instants, config)
    # timestamps key the store per participant; nudge second-level collisions
    for i in range(1, n_polls):
        if poll_ts[i] <= poll_ts[i - 1]:
            poll_ts[i] = poll_ts[i - 1] + 1.0
    stream_ts = _local_to_epoch(stream_instants, config)
    taken = set(poll_ts.tolist())
    for i in range(n_stream):
        while stream_ts[i] in taken:
            stream_ts[i] += 1.0
        taken.add(stream_ts[i])
    poll_hours = np.array([dt.hour + dt.minute / 60.0 for dt in poll_instants])
    stream_hours = np.array([dt.hour + dt.minute / 60.0 for dt in stream_instants])

    holiday_ordinals = {d.toordinal() for d in config.holidays.dates}

    def weekend_flags(ordinals):
        arr = np.asarray(ordinals, dtype=np.int64)
        wd = (arr - 1) % 7  # ordinal 1 is a Monday
        flags = (wd >= 5).astype(np.int64)
        if holiday_ordinals:
            flags |= np.isin(arr, sorted(holiday_ordinals)).astype(np.int64)
        return flags

    # participant-level latent state
    bpm_base = config.bpm_base_mean + rng.normal(0.0, config.bpm_between_sd)
    u_h = rng.normal(0.0, math.sqrt(config.true_sigma_u2_happiness))
    u_a = rng.normal(0.0, math.sqrt(config.true_sigma_u2_activation))
    base_lat = config.center_lat + rng.uniform(-1.0, 1.0) * config.participant_spread_deg
    base_lon = config.center_lon + rng.uniform(-1.0, 1.0) * config.participant_spread_deg

    def draw_sensors(hours, n):
        act = _activity_envelope(hours)
        bpm = np.maximum(
            bpm_base + config.bpm_diurnal_amp * act + rng.normal(0.0, config.bpm_noise_sd, n),
            config.bpm_floor,
        )
        light = np.clip(
            config.light_night
            + (config.light_day - config.light_night) * act
            + rng.normal(0.0, config.light_noise_sd, n),
            0.0,
            5.0,
        )
        accel = rng.exponential(1.0, n) * config.accel_scale * (0.2 + 0.8 * act)
        vmc = config.vmc_per_accel * accel + rng.exponential(1.0, n) * config.vmc_noise_scale
        return bpm, light, accel, vmc

    def draw_gps(n):
        probs = np.array([c.prob for c in config.clusters])
        cluster_idx = rng.choice(len(config.clusters), size=n, p=probs)
        d_lat = np.array([c.d_lat for c in config.clusters])[cluster_idx]
        d_lon = np.array([c.d_lon for c in config.clusters])[cluster_idx]
        alt = np.array([c.altitude for c in config.clusters])[cluster_idx]
        lat = base_lat + d_lat + rng.normal(0.0, config.gps_jitter_deg, n)
        lon = base_lon + d_lon + rng.normal(0.0, config.gps_jitter_deg, n)
        alt = alt + rng.normal(0.0, config.gps_jitter_alt, n)
        return cluster_idx, lat, lon, alt

    bpm_p, light_p, accel_p, vmc_p = draw_sensors(poll_hours, n_polls)
    cluster_p, lat_p, lon_p, alt_p = draw_gps(n_polls)
    weekend_p = weekend_flags(poll_ordinals)

    features = {
        "avg_bpm": bpm_p,
        "light_level": light_p,
        "acceleration": accel_p,
        "vmc": vmc_p,
        "weekend_holiday": weekend_p.astype(np.float64),
        "gender_male": np.full(n_polls, float(participant.gender_male)),
        "age": np.full(n_polls, float(participant.age)),
        "weight": np.full(n_polls, float(participant.weight)),
        "sportiness": np.full(n_polls, float(participant.sportiness)),
        "neuroticism": np.full(n_polls, participant.neuroticism),
        "extraversion": np.full(n_polls, participant.extraversion),
        "openness": np.full(n_polls, participant.openness),
        "agreeableness": np.full(n_polls, participant.agreeableness),
        "conscientiousness": np.full(n_polls, participant.conscientiousness),
    }

    def latent(beta: dict, u: float, shifts: np.ndarray) -> np.ndarray:
        eta = np.full(n_polls, beta.get("const", 0.0))
        for name, b in beta.items():
            if name != "const":
                eta = eta + b * features[name]
        return eta + u + shifts[cluster_p]

    h_shifts = np.array([c.happiness_shift for c in config.clusters])
    a_shifts = np.array([c.activation_shift for c in config.clusters])
    eta_h = latent(config.true_beta_happiness, u_h, h_shifts)
    eta_a = latent(config.true_beta_activation, u_a, a_shifts)
    if config.shared_mood_shock:
        shock = config.shared_mood_shock * rng.normal(size=n_polls)
        eta_h = eta_h + shock
        eta_a = eta_a + shock
    if config.deterministic_labels:
        y_h = (eta_h > 0).astype(np.int64)
        y_a = (eta_a > 0).astype(np.int64)
    else:
        y_h = (rng.uniform(size=n_polls) < 1.0 / (1.0 + np.exp(-eta_h))).astype(np.int64)
        y_a = (rng.uniform(size=n_polls) < 1.0 / (1.0 + np.exp(-eta_a))).astype(np.int64)

    resp = {
        "pid": np.full(n_polls, participant.id, dtype=object),
        "ts": poll_ts,
        "happiness": y_h,
        "activation": y_a,
        "weekend_holiday": weekend_p,
        "latitude": lat_p,
        "longitude": lon_p,
        "altitude": alt_p,
        "cluster": cluster_p.astype(np.int64),
        "eta_happiness": eta_h,
        "eta_activation": eta_a,
    }
    for name in LATENT_FEATURES:
        if name not in resp:
            resp[name] = features[name]

    # recorded observations: the at-poll snapshot plus the background stream
    bpm_s, light_s, accel_s, vmc_s = draw_sensors(stream_hours, n_stream)
    _, lat_s, lon_s, alt_s = draw_gps(n_stream)
    obs_ts = np.concatenate([poll_ts, stream_ts])
    obs_bpm = np.concatenate([bpm_p, bpm_s])
    if config.corrupt_bpm_rate > 0:
        corrupt = rng.uniform(size=len(obs_ts)) < config.corrupt_bpm_rate
        obs_bpm = np.where(corrupt, 0.0, obs_bpm)
    obs = {
        "pid": np.full(len(obs_ts), participant.id, dtype=object),
        "ts": obs_ts,
        "bpm": obs_bpm,
        "light": np.concatenate([light_p, light_s]),
        "accel": np.concatenate([accel_p, accel_s]),
        "vmc": np.concatenate([vmc_p, vmc_s]),
        "lat": np.concatenate([lat_p, lat_s]),
        "lon": np.concatenate([lon_p, lon_s]),
        "alt": np.concatenate([alt_p, alt_s]),
    }
    order = np.argsort(obs["ts"], kind="stable")
    obs = {k: v[order] for k, v in obs.items()}
    return resp, obs


# ---------------------------------------------------------------------------
# preset configurations used by the verification suite


def recovery_config(seed: int = 0) -> CohortConfig:
    """17 participants x 1,000 polls with three nonzero level-1 effects.

    Effect sizes are large relative to their standard errors so coefficient
    recovery is a sharp test; location shifts are off so the fitted model is
    correctly specified.
    """
    return CohortConfig(
        n_participants=17,
        days=200,
        seed=seed,
        sampling=SamplingConfig(min_polls=5, max_polls=5, min_gap=timedelta(0)),
        obs_every_minutes=None,
        corrupt_bpm_rate=0.0,
        bpm_noise_sd=10.0,
        shared_mood_shock=0.0,
        true_beta_happiness={
            "const": 5.3,
            "avg_bpm": -0.055,
            "light_level": -0.9,
            "acceleration": 9.0e-4,
        },
        true_beta_activation={"const": 0.5},
        true_sigma_u2_happiness=0.85,
        true_sigma_u2_activation=0.5,
        clusters=(ClusterSpec(0.0, 0.0, 10.0, 1.0),),
    )


def empty_process_config(seed: int = 0) -> CohortConfig:
    """Intercept-plus-random-intercept generating process (no covariate effects)."""
    cfg = recovery_config(seed)
    return dataclasses.replace(
        cfg,
        true_beta_happiness={"const": 1.0},
        true_beta_activation={"const": 0.5},
    )


def location_effect_config(seed: int = 0, strength: float = 2.5, n_days: int = 40) -> CohortConfig:
    """Cohort whose moods are strongly driven by which cluster one is in."""
    return CohortConfig(
        days=n_days,
        seed=seed,
        obs_every_minutes=None,
        corrupt_bpm_rate=0.0,
        shared_mood_shock=0.0,
        clusters=(
            ClusterSpec(0.0, 0.0, 12.0, 0.40, happiness_shift=strength, activation_shift=strength),
            ClusterSpec(0.03, 0.04, 40.0, 0.35, happiness_shift=-strength, activation_shift=strength),
            ClusterSpec(-0.05, 0.02, 25.0, 0.25, happiness_shift=-strength, activation_shift=-strength),
        ),
        true_beta_happiness={"const": 0.0, "light_level": -0.15},
        true_beta_activation={"const": 0.0, "light_level": -0.15},
        true_sigma_u2_happiness=0.3,
        true_sigma_u2_activation=0.3,
    )


def deterministic_label_config(seed: int = 0, n_days: int = 40) -> CohortConfig:
    """Noise-free labels: the label is a hard function of cluster and light."""
    cfg = location_effect_config(seed, strength=4.0, n_days=n_days)
    return dataclasses.replace(
        cfg,
        deterministic_labels=True,
        true_sigma_u2_happiness=0.0,
        true_sigma_u2_activation=0.0,
    )
