"""Experience-sampling scheduler and the poll state machine.

A day plan draws 4-7 poll instants inside the participant's waking window,
spaced at least ``min_gap`` apart. Plans are pure functions of
(participant, date, seed, config): the RNG stream is derived from all three,
so replanning the same day always yields the same instants.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from datetime import date, datetime, time, timedelta
from typing import Iterable, Optional

import numpy as np

from .core import MoodResponse, decode_grid_selection

PENDING = "pending"
ANSWERED = "answered"
EXPIRED = "expired"

# Rejection sampling is geometric in the spacing slack; this cap only guards
# against degenerate float configs that would otherwise spin forever.
_MAX_REJECTIONS = 20_000_000


class PollStateError(ValueError):
    """Raised on an illegal poll state transition."""


class PlanningError(ValueError):
    """Raised when the waking window cannot host the maximum poll count."""


@dataclass(frozen=True)
class SamplingConfig:
    window_start: time = time(8, 0)
    window_end: time = time(22, 0)
    min_gap: timedelta = timedelta(minutes=90)
    min_polls: int = 4
    max_polls: int = 7
    ttl: timedelta = timedelta(minutes=60)


@dataclass(frozen=True)
class PollPlan:
    participant_id: str
    day: date
    instants: tuple


@dataclass(frozen=True)
class Poll:
    id: str
    participant_id: str
    issued_at: datetime
    status: str = PENDING
    response: Optional[MoodResponse] = None


def _plan_seed(seed: int, participant_id: str, day: date) -> np.random.Generator:
    pid_hash = int.from_bytes(
        hashlib.sha256(participant_id.encode("utf-8")).digest()[:8], "big"
    )
    return np.random.default_rng(np.random.SeedSequence([seed, pid_hash, day.toordinal()]))


def plan_daily_polls(
    participant_id: str,
    day: date,
    seed: int,
    config: SamplingConfig = SamplingConfig(),
) -> PollPlan:
    """Draw one day's poll instants for one participant.

    The count is uniform over {min_polls..max_polls}; instants are uniform in
    the waking window, redrawn until consecutive gaps all reach ``min_gap``.
    Instants carry no timezone: they are wall-clock times on ``day`` and the
    caller localizes them.
    """
    start = datetime.combine(day, config.window_start)
    end = datetime.combine(day, config.window_end)
    span = (end - start).total_seconds()
    gap = config.min_gap.total_seconds()
    if gap < 0 or span <= 0:
        raise PlanningError(f"invalid waking window {config.window_start}-{config.window_end}")
    if span < config.max_polls * gap:
        raise PlanningError(
            f"waking window of {span:.0f}s cannot hold {config.max_polls} polls "
            f"with a {gap:.0f}s minimum gap"
        )

    rng = _plan_seed(seed, participant_id, day)
    count = int(rng.integers(config.min_polls, config.max_polls + 1))
    for _ in range(_MAX_REJECTIONS):
        offsets = np.sort(rng.uniform(0.0, span, size=count))
        instants = tuple(start + timedelta(seconds=float(o)) for o in offsets)
        # Validate on the truncated-to-microseconds datetimes the caller will
        # actually see, so the spacing invariant holds exactly downstream.
        gaps_ok = all(
            (b - a).total_seconds() >= gap for a, b in zip(instants, instants[1:])
        )
        if gaps_ok:
            return PollPlan(participant_id, day, instants)
    raise PlanningError("poll spacing rejection sampling did not terminate")


def record_response(poll: Poll, quadrant: str, answered_at: datetime) -> Poll:
    """Answer a pending poll; the poll is immutable afterwards."""
    if poll.status != PENDING:
        raise PollStateError(f"poll {poll.id} is {poll.status}, not pending")
    if answered_at < poll.issued_at:
        raise ValueError(
            f"answered_at {answered_at.isoformat()} precedes issue time of poll {poll.id}"
        )
    happiness, activation = decode_grid_selection(quadrant)
    response = MoodResponse(
        participant_id=poll.participant_id,
        timestamp=answered_at,
        happiness=happiness,
        activation=activation,
    )
    return replace(poll, status=ANSWERED, response=response)


def expire_poll(poll: Poll) -> Poll:
    if poll.status != PENDING:
        raise PollStateError(f"poll {poll.id} is {poll.status}, not pending")
    return replace(poll, status=EXPIRED)


def expire_stale_polls(polls: Iterable[Poll], now: datetime, ttl: timedelta) -> list[Poll]:
    """Expire every pending poll older than ``ttl``; others pass through."""
    if ttl <= timedelta(0):
        raise ValueError(f"ttl must be positive, got {ttl}")
    out = []
    for poll in polls:
        if poll.status == PENDING and now - poll.issued_at > ttl:
            out.append(expire_poll(poll))
        else:
            out.append(poll)
    return out


def next_pending_poll(
    polls: Iterable[Poll], participant_id: str, now: datetime
) -> Optional[Poll]:
    """Earliest already-issued pending poll for the participant, if any."""
    due = [
        p
        for p in polls
        if p.participant_id == participant_id and p.status == PENDING and p.issued_at <= now
    ]
    if not due:
        return None
    return min(due, key=lambda p: (p.issued_at, p.id))
