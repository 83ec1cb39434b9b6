"""End-to-end analysis runs: clean, assemble, analyze, write reports.

Reports are byte-identical across runs for identical store contents, config
and seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta
from pathlib import Path
from typing import Optional

from . import reports
from .core import (
    HolidayCalendar,
    assemble_feature_rows,
    clean_observations,
    study_holidays,
)
from .correlation import correlation_table
from .forest import EvalConfig, ForestConfig, gps_ablation
from .glmm import FitConfig, model_suite
from .sampling import SamplingConfig
from .store import Store

log = logging.getLogger(__name__)

ANALYSES = ("correlations", "glmm_suite", "forest_ablation")


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    min_bpm: float = 30.0
    window_minutes: float = 30.0
    holidays: HolidayCalendar = field(default_factory=study_holidays)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    glmm: FitConfig = field(default_factory=FitConfig)
    forest: EvalConfig = field(default_factory=EvalConfig)

    @property
    def window(self) -> timedelta:
        return timedelta(minutes=self.window_minutes)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        cfg = cls()
        kwargs = {}
        if "min_bpm" in raw:
            kwargs["min_bpm"] = float(raw["min_bpm"])
        if "window_minutes" in raw:
            kwargs["window_minutes"] = float(raw["window_minutes"])
        if "holidays" in raw:
            kwargs["holidays"] = HolidayCalendar.of(
                *(date.fromisoformat(d) for d in raw["holidays"])
            )
        if "sampling" in raw:
            s = raw["sampling"]
            kwargs["sampling"] = SamplingConfig(
                window_start=time.fromisoformat(s.get("window_start", "08:00")),
                window_end=time.fromisoformat(s.get("window_end", "22:00")),
                min_gap=timedelta(minutes=float(s.get("min_gap_minutes", 90))),
                min_polls=int(s.get("min_polls", 4)),
                max_polls=int(s.get("max_polls", 7)),
                ttl=timedelta(minutes=float(s.get("ttl_minutes", 60))),
            )
        if "glmm" in raw:
            g = raw["glmm"]
            kwargs["glmm"] = FitConfig(
                n_quad=int(g.get("n_quad", 15)),
                tol=float(g.get("tol", 1e-5)),
                max_iter=int(g.get("max_iter", 200)),
            )
        if "forest" in raw:
            f = raw["forest"]
            kwargs["forest"] = EvalConfig(
                forest=ForestConfig(
                    n_trees=int(f.get("n_trees", 100)),
                    n_features_per_split=f.get("n_features_per_split"),
                    min_leaf=int(f.get("min_leaf", 1)),
                    max_depth=f.get("max_depth"),
                ),
                n_replicates=int(f.get("n_replicates", 100)),
                test_fraction=float(f.get("test_fraction", 0.30)),
                stratified=bool(f.get("stratified", False)),
            )
        return replace(cfg, **kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class DatasetSummary:
    n_observations: int
    n_removed_by_cleaning: int
    n_rows: int
    n_skipped_responses: int


def build_feature_rows(store: Store, config: PipelineConfig) -> tuple[list, DatasetSummary]:
    """Snapshot -> clean -> assemble; the shared front half of every analysis."""
    participants, observations, responses, _ = store.snapshot()
    cleaned = clean_observations(observations, config.min_bpm)
    rows, stats = assemble_feature_rows(
        responses, cleaned.kept, participants, config.holidays, config.window
    )
    summary = DatasetSummary(
        n_observations=len(observations),
        n_removed_by_cleaning=cleaned.removed,
        n_rows=stats.assembled,
        n_skipped_responses=stats.skipped_no_observation + stats.skipped_unknown_participant,
    )
    return rows, summary


def run_pipeline(
    store: Store,
    analysis: str,
    config: PipelineConfig = PipelineConfig(),
    seed: int = 0,
    out_dir: str | Path = ".",
) -> list:
    """Run one analysis end to end and write its text + CSV reports."""
    if analysis not in ANALYSES:
        raise PipelineError(f"analysis must be one of {ANALYSES}, got {analysis!r}")
    rows, summary = build_feature_rows(store, config)
    if not rows:
        raise PipelineError("no analyzable rows after cleaning and assembly")
    log.info(
        "pipeline %s: %d rows (%d observations, %d removed by cleaning, %d responses skipped)",
        analysis,
        summary.n_rows,
        summary.n_observations,
        summary.n_removed_by_cleaning,
        summary.n_skipped_responses,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(stem: str, text: str, csv_text: str) -> None:
        for suffix, content in ((".txt", text), (".csv", csv_text)):
            path = out / (stem + suffix)
            path.write_text(content, encoding="utf-8")
            written.append(path)

    if analysis == "correlations":
        table = correlation_table(rows)
        emit("correlations", reports.render_correlation_text(table), reports.render_correlation_csv(table))
    elif analysis == "glmm_suite":
        for outcome in ("happiness", "activation"):
            suite = model_suite(rows, outcome, config.glmm)
            emit(
                f"glmm_{outcome}",
                reports.render_suite_text(suite),
                reports.render_suite_csv(suite),
            )
    else:
        grid = gps_ablation(rows, seed=seed, config=config.forest)
        emit(
            "forest_ablation",
            reports.render_ablation_text(grid),
            reports.render_ablation_csv(grid),
        )
    return written


def export_map_layer(
    store: Store,
    config: PipelineConfig = PipelineConfig(),
    participant_id: Optional[str] = None,
    start: Optional[datetime] = None,
    end: Optional[datetime] = None,
) -> dict:
    """GeoJSON point layer: one feature per response whose nearest in-window
    observation carries GPS."""
    rows, _ = build_feature_rows(store, config)
    features = []
    for row in rows:
        if not row.gps_present:
            continue
        if participant_id is not None and row.participant_id != participant_id:
            continue
        if start is not None and row.timestamp < start:
            continue
        if end is not None and row.timestamp > end:
            continue
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [row.longitude, row.latitude, row.altitude],
                },
                "properties": {
                    "participant_id": row.participant_id,
                    "timestamp": row.timestamp.isoformat().replace("+00:00", "Z"),
                    "happiness": row.label_happiness,
                    "activation": row.label_activation,
                    "mood_state": row.label_mood_state,
                },
            }
        )
    if not features:
        log.warning("map layer is empty: no GPS-bearing responses matched")
    features.sort(key=lambda f: (f["properties"]["participant_id"], f["properties"]["timestamp"]))
    return {"type": "FeatureCollection", "features": features}
