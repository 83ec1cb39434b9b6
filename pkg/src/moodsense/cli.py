"""Command-line entry point: simulate, ingest, clean, analyze, export-map, serve."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

from .core import clean_observations
from .pipeline import PipelineConfig, PipelineError, export_map_layer, run_pipeline
from .simulator import CohortConfig, generate_cohort
from .store import (
    SchemaError,
    Store,
    StoreError,
    ingest_file,
    parse_ts,
    write_observations_csv,
    write_participants_csv,
    write_responses_csv,
)

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moodsense",
        description="Body-sensing mood pipeline: polls, sensors, and the analysis chain.",
    )
    parser.add_argument("--store", default="moodsense-store", help="store directory")
    parser.add_argument("--seed", type=int, default=0, help="seed for anything stochastic")
    parser.add_argument("--config", default=None, help="JSON pipeline config file")
    parser.add_argument("--out-dir", default="reports", help="directory for written outputs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic cohort as CSV files")
    sim.add_argument("--participants", type=int, default=None)
    sim.add_argument("--days", type=int, default=None)

    ing = sub.add_parser("ingest", help="ingest CSV/JSONL files into the store")
    ing.add_argument("--kind", required=True, choices=("observations", "participants", "responses"))
    ing.add_argument("files", nargs="+")

    cln = sub.add_parser("clean", help="report/writes the BPM-cleaned observation set")
    cln.add_argument("--min-bpm", type=float, default=None)

    ana = sub.add_parser("analyze", help="run one analysis and write its reports")
    ana.add_argument("analysis", choices=("correlations", "glmm", "forest"))

    emap = sub.add_parser("export-map", help="write the mood map layer as GeoJSON")
    emap.add_argument("--participant", default=None)
    emap.add_argument("--start", default=None, help="RFC3339 lower bound")
    emap.add_argument("--end", default=None, help="RFC3339 upper bound")
    emap.add_argument("--out", default=None, help="output path (default <out-dir>/map.geojson)")

    srv = sub.add_parser("serve", help="run the HTTP API")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    return parser


_ANALYSIS_BY_NAME = {
    "correlations": "correlations",
    "glmm": "glmm_suite",
    "forest": "forest_ablation",
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    out_dir = Path(args.out_dir)

    try:
        if args.command == "simulate":
            overrides = {}
            if args.participants is not None:
                overrides["n_participants"] = args.participants
            if args.days is not None:
                overrides["days"] = args.days
            cohort = generate_cohort(CohortConfig(seed=args.seed, **overrides))
            out_dir.mkdir(parents=True, exist_ok=True)
            n_p = write_participants_csv(out_dir / "participants.csv", cohort.participants)
            n_o = write_observations_csv(out_dir / "observations.csv", cohort.observations)
            n_r = write_responses_csv(out_dir / "responses.csv", cohort.responses)
            (out_dir / "ground_truth.json").write_text(cohort.ground_truth.to_json() + "\n")
            print(f"simulated {n_p} participants, {n_o} observations, {n_r} responses -> {out_dir}")
            return 0

        if args.command == "ingest":
            with Store(args.store) as store:
                total_ok = 0
                total_bad = 0
                for path in args.files:
                    result = ingest_file(store, path, args.kind)
                    total_ok += result.accepted
                    total_bad += len(result.rejected)
                    for lineno, reason in result.rejected:
                        print(f"{path}:{lineno}: rejected: {reason}", file=sys.stderr)
                print(f"ingested {total_ok} {args.kind} ({total_bad} rejected)")
            return 0

        if args.command == "clean":
            min_bpm = args.min_bpm if args.min_bpm is not None else config.min_bpm
            with Store(args.store) as store:
                _, observations, _, _ = store.snapshot()
                result = clean_observations(observations, min_bpm)
                out_dir.mkdir(parents=True, exist_ok=True)
                write_observations_csv(out_dir / "observations_clean.csv", result.kept)
            print(
                f"cleaning at min_bpm={min_bpm}: kept {len(result.kept)}, removed {result.removed}"
            )
            return 0

        if args.command == "analyze":
            with Store(args.store) as store:
                written = run_pipeline(
                    store, _ANALYSIS_BY_NAME[args.analysis], config, args.seed, out_dir
                )
            for path in written:
                print(path)
            return 0

        if args.command == "export-map":
            with Store(args.store) as store:
                layer = export_map_layer(
                    store,
                    config,
                    participant_id=args.participant,
                    start=parse_ts(args.start) if args.start else None,
                    end=parse_ts(args.end) if args.end else None,
                )
            out_path = Path(args.out) if args.out else out_dir / "map.geojson"
            out_path.parent.mkdir(parents=True, exist_ok=True)
            out_path.write_text(json.dumps(layer, sort_keys=True, indent=2) + "\n")
            print(f"{len(layer['features'])} features -> {out_path}")
            return 0

        if args.command == "serve":
            from .server import serve

            store = Store(args.store)
            print(f"serving {args.store} on http://{args.host}:{args.port}")
            serve(store, args.host, args.port, config, args.seed)
            return 0
    except (PipelineError, SchemaError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
