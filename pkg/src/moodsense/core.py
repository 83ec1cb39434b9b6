"""Domain types, the four-outcome mood encoding, cleaning, and feature assembly.

Everything here is pure: functions return new values and never touch shared
state, so they are safe to call from any number of threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, NamedTuple, Optional, Sequence
from zoneinfo import ZoneInfo

import numpy as np

log = logging.getLogger(__name__)

GENDERS = ("male", "female", "other")

FACTOR_NAMES = (
    "neuroticism",
    "extraversion",
    "openness",
    "agreeableness",
    "conscientiousness",
)

#: Quadrant labels of the mood grid. Valence (pleasant vs unpleasant) runs on
#: the horizontal axis, activation on the vertical one.
QUADRANTS = (
    "happy-activated",
    "happy-calm",
    "unhappy-activated",
    "unhappy-calm",
)

_QUADRANT_BITS = {
    "happy-activated": (1, 1),
    "happy-calm": (1, 0),
    "unhappy-activated": (0, 1),
    "unhappy-calm": (0, 0),
}

#: Analysis variables in canonical report order.
ANALYSIS_VARIABLES = (
    "happiness",
    "activation",
    "avg_bpm",
    "light_level",
    "acceleration",
    "vmc",
    "neuroticism",
    "extraversion",
    "openness",
    "agreeableness",
    "conscientiousness",
    "weekend_holiday",
    "gender_male",
    "age",
    "weight",
    "sportiness",
)

GPS_VARIABLES = ("latitude", "longitude", "altitude")


def encode_mood_state(happiness: int, activation: int) -> int:
    """Map the two binary mood answers onto the 4-level mood-state code.

    (1,1) -> 1, (1,0) -> 2, (0,1) -> 3, (0,0) -> 4.
    """
    if happiness not in (0, 1) or activation not in (0, 1):
        raise ValueError(
            f"happiness/activation must be bits, got ({happiness!r}, {activation!r})"
        )
    if happiness == 1:
        return 1 if activation == 1 else 2
    return 3 if activation == 1 else 4


def decode_grid_selection(quadrant: str) -> tuple[int, int]:
    """Translate a grid cell name into (happiness, activation) bits."""
    try:
        return _QUADRANT_BITS[quadrant]
    except KeyError:
        raise ValueError(
            f"unknown quadrant {quadrant!r}; expected one of {', '.join(QUADRANTS)}"
        ) from None


def _require_utc(ts: datetime, what: str) -> datetime:
    if ts.tzinfo is None:
        raise ValueError(f"{what} timestamp must be timezone-aware: {ts!r}")
    return ts.astimezone(timezone.utc)


@dataclass(frozen=True)
class Participant:
    """Static attributes of one study participant.

    Factor scores live on a documented 0-100 scale; a participant missing any
    of the five is flagged ``factors_missing`` and excluded from factor
    models. ``tz`` is configuration, never inferred from data.
    """

    id: str
    age: int
    gender: str
    weight: float
    sportiness: int
    neuroticism: Optional[float] = None
    extraversion: Optional[float] = None
    openness: Optional[float] = None
    agreeableness: Optional[float] = None
    conscientiousness: Optional[float] = None
    tz: str = "UTC"

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("participant id must be non-empty")
        if int(self.age) <= 0:
            raise ValueError(f"age must be a positive integer, got {self.age}")
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if not self.weight > 0:
            raise ValueError(f"weight must be positive, got {self.weight}")
        if self.sportiness not in (1, 2, 3):
            raise ValueError(f"sportiness must be 1, 2 or 3, got {self.sportiness}")

    @property
    def factors_missing(self) -> bool:
        return any(getattr(self, name) is None for name in FACTOR_NAMES)

    @property
    def gender_male(self) -> int:
        return 1 if self.gender == "male" else 0


@dataclass(frozen=True)
class Observation:
    """One timestamped sensor snapshot for one participant.

    GPS fields are jointly present or jointly absent; ``gps_present`` is
    derived, never stored independently.
    """

    participant_id: str
    timestamp: datetime
    bpm: float
    light_level: float
    acceleration: float
    vmc: float
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    altitude: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "timestamp", _require_utc(self.timestamp, "observation"))
        if not self.bpm >= 0:
            raise ValueError(f"bpm must be non-negative, got {self.bpm}")
        if not 0.0 <= self.light_level <= 5.0:
            raise ValueError(f"light_level must lie in [0, 5], got {self.light_level}")
        if not self.acceleration >= 0:
            raise ValueError(f"acceleration must be non-negative, got {self.acceleration}")
        if not self.vmc >= 0:
            raise ValueError(f"vmc must be non-negative, got {self.vmc}")
        gps = (self.latitude, self.longitude, self.altitude)
        present = [v is not None for v in gps]
        if any(present) and not all(present):
            raise ValueError("latitude, longitude and altitude must be set together")
        if self.latitude is not None and not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if self.longitude is not None and not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")

    @property
    def gps_present(self) -> bool:
        return self.latitude is not None


@dataclass(frozen=True)
class MoodResponse:
    """One answered poll: the two binary answers plus the derived 4-level code."""

    participant_id: str
    timestamp: datetime
    happiness: int
    activation: int
    mood_state: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "timestamp", _require_utc(self.timestamp, "response"))
        derived = encode_mood_state(self.happiness, self.activation)
        if self.mood_state is None:
            object.__setattr__(self, "mood_state", derived)
        elif self.mood_state != derived:
            raise ValueError(
                f"mood_state {self.mood_state} inconsistent with "
                f"(happiness={self.happiness}, activation={self.activation})"
            )


@dataclass(frozen=True)
class HolidayCalendar:
    """Explicitly configured holiday dates. Never inferred."""

    dates: frozenset = frozenset()

    def __contains__(self, day: date) -> bool:
        return day in self.dates

    @classmethod
    def of(cls, *days: date) -> "HolidayCalendar":
        return cls(frozenset(days))


def study_holidays() -> HolidayCalendar:
    """Calendar for the default winter study window: Christmas and New Year's Eve."""
    return HolidayCalendar.of(date(2016, 12, 25), date(2016, 12, 31))


class CleanResult(NamedTuple):
    kept: list
    removed: int


def clean_observations(
    observations: Iterable[Observation], min_bpm: float = 30.0
) -> CleanResult:
    """Drop observations whose BPM reading is below ``min_bpm``.

    A zero or implausibly low heart rate means the watch was not worn or
    misread; such rows carry no usable sensor context. Order is preserved and
    the number of removed rows is reported.
    """
    if min_bpm < 0:
        raise ValueError(f"min_bpm must be non-negative, got {min_bpm}")
    kept = []
    removed = 0
    for obs in observations:
        if obs.bpm >= min_bpm:
            kept.append(obs)
        else:
            removed += 1
    return CleanResult(kept, removed)


def weekend_holiday_flag(
    timestamp: datetime, calendar: HolidayCalendar, tz: str | ZoneInfo
) -> int:
    """1 iff the local date is a Saturday, Sunday, or configured holiday.

    Depends only on the local date, never on the time of day.
    """
    zone = ZoneInfo(tz) if isinstance(tz, str) else tz
    local_date = _require_utc(timestamp, "flag").astimezone(zone).date()
    if local_date.weekday() >= 5:
        return 1
    return 1 if local_date in calendar else 0


@dataclass(frozen=True)
class FeatureRow:
    """Cleaned, joined analysis row: sensor means, controls, factors, label bits.

    ``participant_id`` carries the level-2 grouping for the multilevel models;
    it is never used as a predictor.
    """

    participant_id: str
    timestamp: datetime
    label_happiness: int
    label_activation: int
    label_mood_state: int
    avg_bpm: float
    light_level: float
    acceleration: float
    vmc: float
    weekend_holiday: int
    gender_male: int
    age: float
    weight: float
    sportiness: float
    neuroticism: Optional[float] = None
    extraversion: Optional[float] = None
    openness: Optional[float] = None
    agreeableness: Optional[float] = None
    conscientiousness: Optional[float] = None
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    altitude: Optional[float] = None

    def __post_init__(self) -> None:
        gps = (self.latitude, self.longitude, self.altitude)
        present = [v is not None for v in gps]
        if any(present) and not all(present):
            raise ValueError("GPS fields must be jointly present or jointly absent")

    @property
    def gps_present(self) -> bool:
        return self.latitude is not None


_ROW_FIELD_BY_VARIABLE = {
    "happiness": "label_happiness",
    "activation": "label_activation",
    "mood_state": "label_mood_state",
}


def row_value(row: FeatureRow, variable: str) -> float:
    """Numeric value of one analysis variable; NaN when absent."""
    field = _ROW_FIELD_BY_VARIABLE.get(variable, variable)
    value = getattr(row, field)
    return float("nan") if value is None else float(value)


def feature_matrix(rows: Sequence[FeatureRow], variables: Sequence[str]) -> np.ndarray:
    """Rows-by-variables matrix with NaN marking missing entries."""
    out = np.empty((len(rows), len(variables)), dtype=np.float64)
    for i, row in enumerate(rows):
        for j, name in enumerate(variables):
            out[i, j] = row_value(row, name)
    return out


class AssemblyStats(NamedTuple):
    assembled: int
    skipped_no_observation: int
    skipped_unknown_participant: int


def assemble_feature_row(
    response: MoodResponse,
    observations: Sequence[Observation],
    participant: Participant,
    calendar: HolidayCalendar,
    window: timedelta = timedelta(minutes=30),
) -> Optional[FeatureRow]:
    """Join one mood response with its in-window sensor context.

    Sensor fields are means over all observations within +/-``window`` of the
    response; GPS comes from the single nearest observation and is copied only
    if that observation actually carries GPS. Returns None (with a logged
    reason) when no observation falls inside the window.
    """
    deltas = [
        (abs((obs.timestamp - response.timestamp).total_seconds()), obs)
        for obs in observations
        if obs.participant_id == response.participant_id
        and abs(obs.timestamp - response.timestamp) <= window
    ]
    if not deltas:
        log.info(
            "skipping response %s@%s: no observation within %s",
            response.participant_id,
            response.timestamp.isoformat(),
            window,
        )
        return None
    in_window = [obs for _, obs in deltas]
    nearest = min(deltas, key=lambda d: (d[0], d[1].timestamp))[1]
    return FeatureRow(
        participant_id=response.participant_id,
        timestamp=response.timestamp,
        label_happiness=response.happiness,
        label_activation=response.activation,
        label_mood_state=response.mood_state,
        avg_bpm=float(np.mean([o.bpm for o in in_window])),
        light_level=float(np.mean([o.light_level for o in in_window])),
        acceleration=float(np.mean([o.acceleration for o in in_window])),
        vmc=float(np.mean([o.vmc for o in in_window])),
        weekend_holiday=weekend_holiday_flag(response.timestamp, calendar, participant.tz),
        gender_male=participant.gender_male,
        age=float(participant.age),
        weight=float(participant.weight),
        sportiness=float(participant.sportiness),
        neuroticism=participant.neuroticism,
        extraversion=participant.extraversion,
        openness=participant.openness,
        agreeableness=participant.agreeableness,
        conscientiousness=participant.conscientiousness,
        latitude=nearest.latitude if nearest.gps_present else None,
        longitude=nearest.longitude if nearest.gps_present else None,
        altitude=nearest.altitude if nearest.gps_present else None,
    )


def assemble_feature_rows(
    responses: Sequence[MoodResponse],
    observations: Sequence[Observation],
    participants: dict[str, Participant] | Sequence[Participant],
    calendar: HolidayCalendar,
    window: timedelta = timedelta(minutes=30),
) -> tuple[list[FeatureRow], AssemblyStats]:
    """Bulk feature assembly over a whole (cleaned) dataset.

    Observations are indexed per participant and binary-searched by time, so
    this stays linear-ish at cohort scale.
    """
    if not isinstance(participants, dict):
        participants = {p.id: p for p in participants}

    by_pid: dict[str, list[Observation]] = {}
    for obs in observations:
        by_pid.setdefault(obs.participant_id, []).append(obs)
    times: dict[str, np.ndarray] = {}
    for pid, obs_list in by_pid.items():
        obs_list.sort(key=lambda o: o.timestamp)
        times[pid] = np.array([o.timestamp.timestamp() for o in obs_list])

    win_s = window.total_seconds()
    rows: list[FeatureRow] = []
    skipped_no_obs = 0
    skipped_unknown = 0
    for resp in responses:
        participant = participants.get(resp.participant_id)
        if participant is None:
            skipped_unknown += 1
            log.info("skipping response for unknown participant %s", resp.participant_id)
            continue
        t = times.get(resp.participant_id)
        if t is None or len(t) == 0:
            skipped_no_obs += 1
            continue
        rt = resp.timestamp.timestamp()
        lo = int(np.searchsorted(t, rt - win_s, side="left"))
        hi = int(np.searchsorted(t, rt + win_s, side="right"))
        window_obs = by_pid[resp.participant_id][lo:hi]
        row = assemble_feature_row(resp, window_obs, participant, calendar, window)
        if row is None:
            skipped_no_obs += 1
        else:
            rows.append(row)
    return rows, AssemblyStats(len(rows), skipped_no_obs, skipped_unknown)
