"""HTTP API for the live polling and dashboard loop.

Handlers run concurrently; every mutation goes through the store's
single-writer lock. Poll expiry is enforced lazily on both the fetch path and
the answer path, so a stale poll can never be answered.
"""

from __future__ import annotations

import logging
from datetime import date, datetime, timezone
from typing import Optional

from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel

from . import __version__
from .core import QUADRANTS
from .pipeline import PipelineConfig, PipelineError, build_feature_rows, export_map_layer
from .correlation import correlation_table
from .forest import gps_ablation
from .glmm import model_suite
from .reports import (
    render_ablation_text,
    render_correlation_text,
    render_suite_text,
)
from .sampling import PENDING, Poll, expire_poll, next_pending_poll, plan_daily_polls
from .store import (
    Store,
    StoreError,
    format_ts,
    parse_ts,
    record_to_observation,
)

log = logging.getLogger(__name__)


class ObservationIn(BaseModel):
    participant_id: str
    timestamp: str
    bpm: float
    light_level: float
    acceleration: float
    vmc: float
    latitude: Optional[float] = None
    longitude: Optional[float] = None
    altitude: Optional[float] = None


class AnswerIn(BaseModel):
    quadrant: str


class PlanIn(BaseModel):
    participant_id: str
    day: str  # ISO date
    seed: int = 0


class IssueIn(BaseModel):
    participant_id: str


def _poll_json(poll: Poll) -> dict:
    out = {
        "id": poll.id,
        "participant_id": poll.participant_id,
        "issued_at": format_ts(poll.issued_at),
        "status": poll.status,
    }
    if poll.response is not None:
        out["response"] = {
            "happiness": poll.response.happiness,
            "activation": poll.response.activation,
            "mood_state": poll.response.mood_state,
            "answered_at": format_ts(poll.response.timestamp),
        }
    return out


def create_app(
    store: Store,
    config: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    now_fn=lambda: datetime.now(timezone.utc),
) -> FastAPI:
    app = FastAPI(title="moodsense", version=__version__)

    @app.get("/api/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/api/observations")
    def post_observations(payload: ObservationIn | list[ObservationIn]):
        items = payload if isinstance(payload, list) else [payload]
        accepted = 0
        rejected = []
        for i, item in enumerate(items):
            rec = item.model_dump()
            try:
                store.add_observation(record_to_observation(rec))
                accepted += 1
            except (ValueError, StoreError) as exc:
                rejected.append({"index": i, "reason": str(exc)})
        status = 200 if accepted else 400
        if rejected and accepted:
            log.info("observation batch: %d accepted, %d rejected", accepted, len(rejected))
        if status == 400 and items:
            raise HTTPException(status_code=400, detail={"accepted": 0, "rejected": rejected})
        return {"accepted": accepted, "rejected": rejected}

    def _expire_due(participant_id: str, now: datetime) -> None:
        for poll in list(store.polls.values()):
            if (
                poll.participant_id == participant_id
                and poll.status == PENDING
                and now - poll.issued_at > config.sampling.ttl
            ):
                store.put_poll(expire_poll(poll))

    @app.get("/api/polls/next")
    def get_next_poll(participant: str = Query(...)):
        now = now_fn()
        _expire_due(participant, now)
        poll = next_pending_poll(store.polls.values(), participant, now)
        if poll is None:
            return {"status": "no poll due", "poll": None}
        return {"status": "pending", "poll": _poll_json(poll)}

    @app.post("/api/polls/plan")
    def post_plan(body: PlanIn):
        day = date.fromisoformat(body.day)
        plan = plan_daily_polls(body.participant_id, day, body.seed, config.sampling)
        created = []
        for k, instant in enumerate(plan.instants):
            issued = instant.replace(tzinfo=timezone.utc)
            poll = Poll(
                id=f"{body.participant_id}-{day.isoformat()}-{k}",
                participant_id=body.participant_id,
                issued_at=issued,
            )
            try:
                store.put_poll(poll)
                created.append(_poll_json(poll))
            except StoreError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"created": created}

    @app.post("/api/polls/issue")
    def post_issue(body: IssueIn):
        now = now_fn()
        poll = Poll(
            id=f"{body.participant_id}-manual-{format_ts(now)}",
            participant_id=body.participant_id,
            issued_at=now,
        )
        try:
            store.put_poll(poll)
        except StoreError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"poll": _poll_json(poll)}

    @app.post("/api/polls/{poll_id}/answer")
    def post_answer(poll_id: str, body: AnswerIn):
        if body.quadrant not in QUADRANTS:
            raise HTTPException(status_code=422, detail=f"unknown quadrant {body.quadrant!r}")
        now = now_fn()
        poll = store.polls.get(poll_id)
        if poll is None:
            raise HTTPException(status_code=404, detail=f"no poll {poll_id!r}")
        if poll.status == PENDING and now - poll.issued_at > config.sampling.ttl:
            store.put_poll(expire_poll(poll))
            raise HTTPException(status_code=409, detail="poll expired")
        if poll.status != PENDING:
            raise HTTPException(status_code=409, detail=f"poll already {poll.status}")
        answered = store.answer_poll(poll_id, body.quadrant, now)
        return {"poll": _poll_json(answered)}

    @app.get("/api/dashboard")
    def get_dashboard(participant: str = Query(...)):
        participants, observations, responses, _ = store.snapshot()
        p = participants.get(participant)
        mood = [
            {
                "timestamp": format_ts(r.timestamp),
                "happiness": r.happiness,
                "activation": r.activation,
                "mood_state": r.mood_state,
            }
            for r in sorted(
                (r for r in responses if r.participant_id == participant),
                key=lambda r: r.timestamp,
            )
        ]
        obs = sorted(
            (o for o in observations if o.participant_id == participant),
            key=lambda o: o.timestamp,
        )
        return {
            "participant": participant,
            "mood": mood,
            "bpm": [{"timestamp": format_ts(o.timestamp), "bpm": o.bpm} for o in obs],
            "light": [
                {"timestamp": format_ts(o.timestamp), "light_level": o.light_level} for o in obs
            ],
            "factors": None
            if p is None or p.factors_missing
            else {
                "neuroticism": p.neuroticism,
                "extraversion": p.extraversion,
                "openness": p.openness,
                "agreeableness": p.agreeableness,
                "conscientiousness": p.conscientiousness,
            },
        }

    @app.get("/api/map")
    def get_map(
        participant: Optional[str] = None,
        start: Optional[str] = None,
        end: Optional[str] = None,
    ):
        return export_map_layer(
            store,
            config,
            participant_id=participant,
            start=parse_ts(start) if start else None,
            end=parse_ts(end) if end else None,
        )

    @app.get("/api/reports/{kind}")
    def get_report(kind: str, replicates: Optional[int] = None):
        rows, _ = build_feature_rows(store, config)
        if not rows:
            raise HTTPException(status_code=409, detail="no analyzable rows")
        try:
            if kind == "correlations":
                return {"kind": kind, "text": render_correlation_text(correlation_table(rows))}
            if kind == "glmm":
                text = "".join(
                    render_suite_text(model_suite(rows, outcome, config.glmm)) + "\n"
                    for outcome in ("happiness", "activation")
                )
                return {"kind": kind, "text": text}
            if kind == "forest":
                eval_cfg = config.forest
                if replicates is not None:
                    from dataclasses import replace

                    eval_cfg = replace(eval_cfg, n_replicates=replicates)
                grid = gps_ablation(rows, seed=seed, config=eval_cfg)
                return {"kind": kind, "text": render_ablation_text(grid)}
        except (ValueError, PipelineError) as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        raise HTTPException(status_code=404, detail=f"unknown report {kind!r}")

    return app


def serve(
    store: Store,
    host: str = "127.0.0.1",
    port: int = 8000,
    config: PipelineConfig = PipelineConfig(),
    seed: int = 0,
) -> None:
    import uvicorn

    app = create_app(store, config, seed)
    uvicorn.run(app, host=host, port=port, log_level="warning")
