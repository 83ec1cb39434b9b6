from datetime import datetime, timedelta, timezone

import pytest
from fastapi.testclient import TestClient

from moodsense.core import Participant
from moodsense.pipeline import PipelineConfig
from moodsense.server import create_app
from moodsense.store import Store

UTC = timezone.utc


class Clock:
    def __init__(self, start):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, **kw):
        self.now = self.now + timedelta(**kw)


@pytest.fixture()
def harness(tmp_path):
    store = Store(tmp_path / "store")
    store.add_participant(
        Participant(id="p1", age=30, gender="female", weight=65.0, sportiness=2,
                    neuroticism=40.0, extraversion=55.0, openness=60.0,
                    agreeableness=52.0, conscientiousness=47.0)
    )
    clock = Clock(datetime(2017, 1, 11, 12, 0, tzinfo=UTC))
    app = create_app(store, PipelineConfig(), seed=0, now_fn=clock)
    client = TestClient(app)
    yield client, store, clock
    store.close()


def obs_payload(minute=0, **kw):
    base = {
        "participant_id": "p1",
        "timestamp": f"2017-01-11T11:{minute:02d}:00Z",
        "bpm": 72.0,
        "light_level": 2.5,
        "acceleration": 120.0,
        "vmc": 30000.0,
    }
    base.update(kw)
    return base


class TestObservations:
    def test_post_then_dashboard_reflects(self, harness):
        client, _, _ = harness
        r = client.post("/api/observations", json=obs_payload())
        assert r.status_code == 200 and r.json()["accepted"] == 1
        dash = client.get("/api/dashboard", params={"participant": "p1"}).json()
        assert len(dash["bpm"]) == 1
        assert dash["bpm"][0]["bpm"] == 72.0
        assert dash["factors"]["openness"] == 60.0

    def test_batch_with_partial_rejection(self, harness):
        client, _, _ = harness
        r = client.post(
            "/api/observations",
            json=[obs_payload(0), obs_payload(1, light_level=9.0)],
        )
        body = r.json()
        assert body["accepted"] == 1
        assert body["rejected"][0]["index"] == 1
        assert "light_level" in body["rejected"][0]["reason"]

    def test_all_invalid_is_400(self, harness):
        client, _, _ = harness
        r = client.post("/api/observations", json=obs_payload(bpm=-2.0))
        assert r.status_code == 400


class TestPollLoop:
    def test_no_poll_due(self, harness):
        client, _, _ = harness
        body = client.get("/api/polls/next", params={"participant": "p1"}).json()
        assert body["status"] == "no poll due"
        assert body["poll"] is None

    def test_issue_answer_dashboard_flow(self, harness):
        client, _, _ = harness
        issued = client.post("/api/polls/issue", json={"participant_id": "p1"}).json()["poll"]
        nxt = client.get("/api/polls/next", params={"participant": "p1"}).json()
        assert nxt["poll"]["id"] == issued["id"]
        answer = client.post(
            f"/api/polls/{issued['id']}/answer", json={"quadrant": "happy-activated"}
        )
        assert answer.status_code == 200
        assert answer.json()["poll"]["response"]["mood_state"] == 1
        dash = client.get("/api/dashboard", params={"participant": "p1"}).json()
        assert dash["mood"][-1]["mood_state"] == 1

    def test_reanswer_conflicts(self, harness):
        client, _, _ = harness
        poll = client.post("/api/polls/issue", json={"participant_id": "p1"}).json()["poll"]
        client.post(f"/api/polls/{poll['id']}/answer", json={"quadrant": "happy-calm"})
        again = client.post(f"/api/polls/{poll['id']}/answer", json={"quadrant": "happy-calm"})
        assert again.status_code == 409

    def test_expired_poll_conflicts(self, harness):
        client, _, clock = harness
        poll = client.post("/api/polls/issue", json={"participant_id": "p1"}).json()["poll"]
        clock.advance(hours=2)  # past the 60-minute ttl
        r = client.post(f"/api/polls/{poll['id']}/answer", json={"quadrant": "happy-calm"})
        assert r.status_code == 409
        assert "expired" in r.json()["detail"]
        nxt = client.get("/api/polls/next", params={"participant": "p1"}).json()
        assert nxt["status"] == "no poll due"

    def test_unknown_poll_404(self, harness):
        client, _, _ = harness
        assert client.post("/api/polls/nope/answer", json={"quadrant": "happy-calm"}).status_code == 404

    def test_unknown_quadrant_422(self, harness):
        client, _, _ = harness
        poll = client.post("/api/polls/issue", json={"participant_id": "p1"}).json()["poll"]
        r = client.post(f"/api/polls/{poll['id']}/answer", json={"quadrant": "meh"})
        assert r.status_code == 422

    def test_plan_creates_day_schedule(self, harness):
        client, store, _ = harness
        r = client.post(
            "/api/polls/plan",
            json={"participant_id": "p1", "day": "2017-01-12", "seed": 3},
        )
        created = r.json()["created"]
        assert 4 <= len(created) <= 7
        assert len(store.polls) == len(created)


class TestMapAndReports:
    def seed_mapped_response(self, client, clock):
        client.post(
            "/api/observations",
            json=obs_payload(58, latitude=42.36, longitude=-71.09, altitude=12.0),
        )
        poll = client.post("/api/polls/issue", json={"participant_id": "p1"}).json()["poll"]
        client.post(f"/api/polls/{poll['id']}/answer", json={"quadrant": "happy-activated"})

    def test_map_layer(self, harness):
        client, _, clock = harness
        self.seed_mapped_response(client, clock)
        layer = client.get("/api/map", params={"participant": "p1"}).json()
        assert layer["type"] == "FeatureCollection"
        assert len(layer["features"]) == 1
        feat = layer["features"][0]
        assert feat["geometry"]["coordinates"][0] == pytest.approx(-71.09)
        assert feat["properties"]["happiness"] == 1

    def test_map_excludes_gpsless_nearest(self, harness):
        client, _, clock = harness
        # nearest observation (same minute as answer) carries no GPS
        client.post("/api/observations", json=obs_payload(58, latitude=42.0, longitude=1.0, altitude=5.0))
        client.post("/api/observations", json=obs_payload(59))
        poll = client.post("/api/polls/issue", json={"participant_id": "p1"}).json()["poll"]
        client.post(f"/api/polls/{poll['id']}/answer", json={"quadrant": "happy-calm"})
        layer = client.get("/api/map").json()
        assert layer["features"] == []

    def test_reports_deterministic(self, harness):
        client, _, clock = harness
        for m in range(40):
            client.post("/api/observations", json=obs_payload(m, bpm=70.0 + m % 7))
        for k in range(6):
            poll = client.post("/api/polls/issue", json={"participant_id": "p1"}).json()["poll"]
            q = ["happy-activated", "unhappy-calm"][k % 2]
            client.post(f"/api/polls/{poll['id']}/answer", json={"quadrant": q})
            clock.advance(minutes=7)
        a = client.get("/api/reports/correlations").json()
        b = client.get("/api/reports/correlations").json()
        assert a == b
        assert "Pearson" in a["text"]

    def test_unknown_report_404(self, harness):
        client, _, clock = harness
        self.seed_mapped_response(client, clock)
        assert client.get("/api/reports/anova").status_code == 404

    def test_empty_store_report_conflict(self, harness):
        client, _, _ = harness
        assert client.get("/api/reports/correlations").status_code == 409
