"""Command-line entry point: ``ldm serve | sim run | eval | latency-report | zone import | bench``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error, 3 budget
exceeded or scenario assertion failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import httpx

from . import wire
from .errors import LdmError, MalformedLog, ValidationError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3

log = logging.getLogger("ldm")


def _emit(payload: Any) -> None:
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _err(message: str) -> None:
    sys.stderr.write(f"ldm: {message}\n")


# serve


def cmd_serve(args: argparse.Namespace) -> int:
    from .api import BindFailure, serve
    from .config import load_config

    try:
        config = load_config(args.config)
        config = config.with_overrides(host=args.host, port=args.port, journal_path=args.journal)
    except FileNotFoundError:
        _err(f"config file not found: {args.config}")
        return EXIT_USAGE
    except ValidationError as exc:
        _err(f"bad config: {exc}")
        return EXIT_USAGE
    try:
        serve(config)
    except BindFailure as exc:
        _err(str(exc))
        return EXIT_FAILURE
    return EXIT_OK


# sim


def _run_against(scenario, endpoint: str | None):
    from .api import BackgroundServer
    from .service import LocalDynamicMap
    from .sim import run_scenario

    if endpoint:
        with httpx.Client(base_url=endpoint, timeout=30.0) as client:
            return run_scenario(scenario, client)
    with BackgroundServer(LocalDynamicMap()) as server:
        with httpx.Client(base_url=server.url, timeout=30.0) as client:
            return run_scenario(scenario, client)


def cmd_sim_run(args: argparse.Namespace) -> int:
    from .sim import EndpointUnreachable, ScenarioAbort, load_scenario

    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ValidationError) as exc:
        _err(f"cannot load scenario: {exc}")
        return EXIT_USAGE
    try:
        transcript = _run_against(scenario, args.endpoint)
    except EndpointUnreachable as exc:
        _err(f"endpoint unreachable: {exc}")
        return EXIT_FAILURE
    except ScenarioAbort as exc:
        _err(f"scenario aborted: {exc}")
        return EXIT_FAILURE
    payload = transcript.to_wire()
    if args.out:
        Path(args.out).write_text(transcript.dumps() + "\n", encoding="utf-8")
    if args.json:
        sys.stdout.write(transcript.dumps() + "\n")
    else:
        _emit(payload)
    if args.check:
        if scenario.expect is None:
            _err("--assert given but the scenario embeds no expected events")
            return EXIT_USAGE
        problems = transcript.mismatches(scenario.expect)
        for p in problems:
            _err(p)
        if problems:
            return EXIT_BUDGET
    return EXIT_OK


# eval


def cmd_eval(args: argparse.Namespace) -> int:
    from .metrics import format_table, run_eval

    try:
        gt = wire.read_ndjson(args.gt, wire.annotation_from_wire)
        pred = wire.read_ndjson(args.pred, wire.annotation_from_wire)
        latency = wire.read_ndjson(args.latency, wire.latency_from_wire) if args.latency else []
        reports = run_eval(gt, pred, latency, iou_threshold=args.iou, group_by=args.group_by)
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except LdmError as exc:
        _err(f"malformed input: {exc}")
        return EXIT_USAGE
    rows = [wire.report_to_wire(r) for r in reports]
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    if args.json:
        _emit(rows)
    else:
        print(format_table(reports))
        print()
        print(json.dumps(rows, indent=2))
    return EXIT_OK


# latency-report


def cmd_latency_report(args: argparse.Namespace) -> int:
    from .ingest import summarize_latencies

    try:
        records = wire.read_ndjson(args.log, wire.latency_from_wire)
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except MalformedLog as exc:
        _err(f"malformed latency log: {exc}")
        return EXIT_USAGE
    if not records:
        _err("latency log is empty; nothing to report")
        return EXIT_USAGE
    summary = summarize_latencies(records, args.budget_ms)
    payload = {
        "frames": summary.frames,
        "mean_detection_ms": summary.mean_detection_ms,
        "mean_filtering_ms": summary.mean_filtering_ms,
        "mean_total_ms": summary.mean_total_ms,
        "budget_ms": summary.budget_ms,
        "within_budget": summary.within_budget,
    }
    if args.json:
        _emit(payload)
    else:
        verdict = "within budget" if summary.within_budget else "OVER BUDGET"
        print(f"frames             {summary.frames}")
        print(f"mean detection_ms  {summary.mean_detection_ms:.3f}")
        print(f"mean filtering_ms  {summary.mean_filtering_ms:.3f}")
        print(f"mean total_ms      {summary.mean_total_ms:.3f}")
        print(f"budget_ms          {summary.budget_ms:g} ({verdict})")
    return EXIT_OK if summary.within_budget else EXIT_BUDGET


# zone import


def _load_zone_docs(path: str) -> list[Any]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(data, dict) and "zones" in data and "vertices" not in data:
        data = data["zones"]
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise ValidationError("zone file must hold a zone object, a list of zones, or {\"zones\": [...]}")
    return data


def cmd_zone_import(args: argparse.Namespace) -> int:
    try:
        zones = _load_zone_docs(args.file)
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (json.JSONDecodeError, ValidationError) as exc:
        _err(f"cannot parse zone file: {exc}")
        return EXIT_USAGE

    results = []
    try:
        with httpx.Client(base_url=args.endpoint, timeout=30.0) as client:
            token = args.token or os.environ.get("LDM_TOKEN")
            if not token:
                resp = client.post("/v1/subscribe", json={"kind": "vehicle"})
                resp.raise_for_status()
                token = resp.json()["token"]
                _err(f"no token given; subscribed as operator {resp.json()['device_id']}")
            for i, zone in enumerate(zones):
                resp = client.post("/v1/zones", content=wire.dumps(zone),
                                   headers={"Authorization": f"Bearer {token}", "Content-Type": "application/json"})
                body = resp.json()
                if resp.status_code == 200:
                    results.append({"index": i, "zone_id": body["zone_id"], "ok": True})
                else:
                    results.append({"index": i, "ok": False, "status": resp.status_code,
                                    "code": body.get("code"), "message": body.get("message")})
    except (httpx.HTTPError, ValueError) as exc:
        _err(f"endpoint failure: {exc}")
        return EXIT_FAILURE

    if args.json:
        _emit(results)
    else:
        for r in results:
            if r["ok"]:
                print(r["zone_id"])
            else:
                print(f"error: zone #{r['index']}: {r['code']}: {r['message']}")
    return EXIT_OK if all(r["ok"] for r in results) else EXIT_FAILURE


# bench


def cmd_bench(args: argparse.Namespace) -> int:
    """Replay a frame log through an in-process pipeline with the mock detector."""
    from .auth import DeviceKind
    from .config import ServiceConfig
    from .ingest import MockDetector, summarize_latencies
    from .service import LocalDynamicMap

    try:
        frames = wire.read_ndjson(args.frames, wire.frame_from_wire)
    except OSError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except MalformedLog as exc:
        _err(f"malformed frame log: {exc}")
        return EXIT_USAGE
    detector = MockDetector(
        detection_ms=args.detection_ms,
        filtering_ms=args.filtering_ms,
        detection_jitter_ms=args.jitter_ms,
        filtering_jitter_ms=args.jitter_ms,
        seed=args.seed,
    )
    ldm = LocalDynamicMap(ServiceConfig(latency_budget_ms=args.budget_ms), detector=detector)
    tokens: dict[str, str] = {}
    failures = 0
    for frame in frames:
        if frame.device_id not in tokens:
            _, token = ldm.auth.subscribe(DeviceKind.VEHICLE, frame.device_id)
            tokens[frame.device_id] = token.value
        # replays measure the detector, so pre-computed detections are ignored
        bare = dataclasses.replace(frame, detections=None)
        try:
            ldm.ingest.ingest_frame(tokens[frame.device_id], bare)
        except LdmError as exc:
            failures += 1
            _err(f"frame {frame.frame_id}: {exc}")
    records = ldm.ingest.latency_log()
    if args.latency_out:
        wire.write_ndjson(args.latency_out, (wire.latency_to_wire(r) for r in records))
    if not records:
        _err("no frames processed")
        return EXIT_FAILURE
    summary = summarize_latencies(records, args.budget_ms)
    payload = {"frames": summary.frames, "failed": failures, "mean_detection_ms": summary.mean_detection_ms,
               "mean_filtering_ms": summary.mean_filtering_ms, "mean_total_ms": summary.mean_total_ms,
               "budget_ms": summary.budget_ms, "within_budget": summary.within_budget}
    if args.json:
        _emit(payload)
    else:
        print(f"processed {summary.frames} frame(s), {failures} failed; mean total {summary.mean_total_ms:.3f} ms")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldm", description="Local dynamic map service and tools")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--journal", help="append-only journal file for the object store")
    p.add_argument("--json", action="store_true", help="accepted for uniformity; serve prints no results")
    p.set_defaults(func=cmd_serve)

    sim = sub.add_parser("sim", help="scenario simulator").add_subparsers(dest="sim_command", required=True)
    p = sim.add_parser("run", help="run a scenario file or a bundled scenario by name")
    p.add_argument("scenario")
    p.add_argument("--endpoint", help="service base URL (default: a fresh in-process service)")
    p.add_argument("--assert", dest="check", action="store_true", help="compare events with the embedded expectations")
    p.add_argument("--out", help="also write the compact transcript to this file")
    p.add_argument("--json", action="store_true", help="compact single-line transcript")
    p.set_defaults(func=cmd_sim_run)

    p = sub.add_parser("eval", help="precision/recall from ground-truth and prediction logs")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--latency")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--group-by", default="quality", choices=("quality", "none"))
    p.add_argument("--out")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("latency-report", help="per-stage latency means against a budget")
    p.add_argument("--log", required=True)
    p.add_argument("--budget-ms", type=float, default=100.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_latency_report)

    zone = sub.add_parser("zone", help="geofence zones").add_subparsers(dest="zone_command", required=True)
    p = zone.add_parser("import", help="POST zones from a JSON file")
    p.add_argument("file")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--token", help="bearer token (default: $LDM_TOKEN, else subscribe a new operator device)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_zone_import)

    p = sub.add_parser("bench", help="replay a frame log through the mock detector")
    p.add_argument("frames")
    p.add_argument("--detection-ms", type=float, default=40.0)
    p.add_argument("--filtering-ms", type=float, default=2.0)
    p.add_argument("--jitter-ms", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget-ms", type=float, default=100.0)
    p.add_argument("--latency-out", help="write the latency log (NDJSON) here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(name)s: %(message)s")
    logging.getLogger("httpx").setLevel(logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
