from __future__ import annotations

import json
import socket
import subprocess
import sys
import time

import httpx
import pytest

from ldm import wire
from ldm.api import BackgroundServer
from ldm.cli import main
from ldm.ingest import StageLatency
from ldm.service import LocalDynamicMap


def write_latency(path, pairs):
    wire.write_ndjson(path, (wire.latency_to_wire(StageLatency(f"f{i}", d, f)) for i, (d, f) in enumerate(pairs)))
    return str(path)


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


# usage

def test_no_command_is_usage_error(capsys):
    assert main([]) == 2


def test_unknown_flag_is_usage_error():
    assert main(["latency-report", "--bogus"]) == 2


# latency-report

def test_latency_report_constant_log(tmp_path, capsys):
    log = write_latency(tmp_path / "l.ndjson", [(40, 2)] * 10)
    assert main(["latency-report", "--log", log, "--budget-ms", "100", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert (out["mean_detection_ms"], out["mean_filtering_ms"], out["mean_total_ms"]) == (40.0, 2.0, 42.0)


def test_latency_report_over_budget(tmp_path, capsys):
    log = write_latency(tmp_path / "l.ndjson", [(100, 20)] * 4)
    assert main(["latency-report", "--log", log, "--budget-ms", "100"]) == 3
    assert "OVER BUDGET" in capsys.readouterr().out


def test_latency_report_empty_and_malformed(tmp_path):
    empty = tmp_path / "e.ndjson"
    empty.write_text("")
    assert main(["latency-report", "--log", str(empty)]) == 2
    bad = tmp_path / "b.ndjson"
    bad.write_text('{"frame_id": "x"}\n')
    assert main(["latency-report", "--log", str(bad)]) == 2
    assert main(["latency-report", "--log", str(tmp_path / "missing")]) == 2


# eval

def box(x, w=10):
    return {"x": x, "y": 0, "w": w, "h": 10}


def test_eval_720p_fixture(tmp_path, capsys):
    # 74 matched, 26 spurious predictions, 10 missed objects
    gt, pred = [], []
    for i in range(110):
        frame_gt = [{"class": "car", "bbox": box(0)}] if i < 84 else []
        frame_pred = [{"class": "car", "bbox": box(0), "confidence": 0.9}] if i < 74 else []
        if 84 <= i < 110:
            frame_pred = [{"class": "car", "bbox": box(500), "confidence": 0.6}]
        gt.append({"frame_id": str(i), "role": "ground_truth", "quality": "720p", "boxes": frame_gt})
        pred.append({"frame_id": str(i), "role": "predicted", "quality": "720p", "boxes": frame_pred})
    wire.write_ndjson(tmp_path / "gt", gt)
    wire.write_ndjson(tmp_path / "pred", pred)
    assert main(["eval", "--gt", str(tmp_path / "gt"), "--pred", str(tmp_path / "pred"), "--json"]) == 0
    (row,) = json.loads(capsys.readouterr().out)
    assert row["counts"] == {"tp": 74, "fp": 26, "fn": 10}
    assert row["precision"] == 0.74
    assert row["recall"] == pytest.approx(74 / 84, abs=1e-12)
    assert round(row["recall"], 3) == 0.881


def test_eval_gt_only_renders_na(tmp_path, capsys):
    wire.write_ndjson(tmp_path / "gt", [{"frame_id": "a", "role": "gt", "quality": "480p",
                                         "boxes": [{"class": "car", "bbox": box(0)}]}])
    (tmp_path / "pred").write_text("")
    assert main(["eval", "--gt", str(tmp_path / "gt"), "--pred", str(tmp_path / "pred")]) == 0
    out = capsys.readouterr().out
    assert "n/a" in out and "0.000" in out


def test_eval_iou_threshold_flag(tmp_path, capsys):
    wire.write_ndjson(tmp_path / "gt", [{"frame_id": "a", "role": "gt", "boxes": [
        {"class": "car", "bbox": {"x": 0, "y": 0, "w": 2, "h": 2}}]}])
    wire.write_ndjson(tmp_path / "pred", [{"frame_id": "a", "role": "pred", "boxes": [
        {"class": "car", "bbox": {"x": 1, "y": 0, "w": 2, "h": 2}, "confidence": 0.9}]}])
    args = ["eval", "--gt", str(tmp_path / "gt"), "--pred", str(tmp_path / "pred"), "--json"]
    assert main(args + ["--iou", "0.3"]) == 0
    assert json.loads(capsys.readouterr().out)[0]["counts"]["tp"] == 1
    assert main(args + ["--iou", "0.9"]) == 0
    assert json.loads(capsys.readouterr().out)[0]["counts"]["tp"] == 0


def test_eval_malformed_log(tmp_path):
    (tmp_path / "gt").write_text("not json\n")
    (tmp_path / "pred").write_text("")
    assert main(["eval", "--gt", str(tmp_path / "gt"), "--pred", str(tmp_path / "pred")]) == 2


# sim

def test_sim_assert_passes(capsys):
    assert main(["sim", "run", "occluded-cyclist", "--assert", "--json"]) == 0
    transcript = json.loads(capsys.readouterr().out)
    assert [e["event"]["kind"] for e in transcript["events"]] == ["proximity_alert"]


def test_sim_wrong_expectations_exit_3(tmp_path):
    doc = {"name": "wrong", "seed": 1, "duration_ms": 200, "expect": [
        {"tick": 0, "kind": "proximity_alert", "target_device": "a", "subject": "nothing"}],
        "agents": [{"device_id": "a", "kind": "vehicle", "waypoints": [{"lat": 0, "lon": 0, "at": 0},
                                                                        {"lat": 0, "lon": 0.001, "at": 200}]}]}
    assert main(["sim", "run", write_json(tmp_path / "s.json", doc), "--assert"]) == 3


def test_sim_malformed_json(tmp_path):
    path = tmp_path / "s.json"
    path.write_text("{oops")
    assert main(["sim", "run", str(path)]) == 2


def test_sim_unreachable_endpoint():
    assert main(["sim", "run", "occluded-cyclist", "--endpoint", f"http://127.0.0.1:{free_port()}"]) == 1


def test_sim_against_endpoint_and_out_file(tmp_path):
    with BackgroundServer(LocalDynamicMap()) as server:
        assert main(["sim", "run", "uav-nofly", "--endpoint", server.url, "--assert",
                     "--out", str(tmp_path / "t.json")]) == 0
    assert json.loads((tmp_path / "t.json").read_text())["scenario"] == "uav-nofly"


# zone import

def square(zone_id, lat=60.0, lon=24.0, d=0.0002):
    return {"zone_id": zone_id, "kind": "no_fly",
            "vertices": [{"lat": lat, "lon": lon}, {"lat": lat, "lon": lon + d},
                         {"lat": lat + d, "lon": lon + d}, {"lat": lat + d, "lon": lon}]}


def test_zone_import_two_zones(tmp_path, capsys):
    path = write_json(tmp_path / "z.json", [square("a"), square("b", lat=61)])
    with BackgroundServer(LocalDynamicMap()) as server:
        assert main(["zone", "import", path, "--endpoint", server.url]) == 0
        assert sorted(z.zone_id for z in server.service.events.zones()) == ["a", "b"]
    assert capsys.readouterr().out.split() == ["a", "b"]


def test_zone_import_partial_failure(tmp_path, capsys):
    bad = {**square("bad"), "vertices": square("bad")["vertices"][:2]}
    path = write_json(tmp_path / "z.json", {"zones": [square("good"), bad]})
    with BackgroundServer(LocalDynamicMap()) as server:
        assert main(["zone", "import", path, "--endpoint", server.url]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "good" and lines[1].startswith("error: zone #1")


def test_zone_import_unreachable(tmp_path):
    path = write_json(tmp_path / "z.json", [square("a")])
    assert main(["zone", "import", path, "--endpoint", f"http://127.0.0.1:{free_port()}"]) == 1


def test_zone_import_bad_file(tmp_path):
    (tmp_path / "z.json").write_text("[")
    assert main(["zone", "import", str(tmp_path / "z.json"), "--endpoint", "http://127.0.0.1:1"]) == 2


# bench

def test_bench_writes_latency_log(tmp_path, capsys):
    frames = [{"frame_id": f"f{i}", "device_id": "cam", "capture_ts": 1000 + i, "quality": "720p"} for i in range(5)]
    wire.write_ndjson(tmp_path / "frames", frames)
    out = tmp_path / "lat"
    assert main(["bench", str(tmp_path / "frames"), "--latency-out", str(out), "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["mean_total_ms"] == 42.0
    assert main(["latency-report", "--log", str(out)]) == 0


# serve

def test_serve_missing_config(tmp_path):
    assert main(["serve", "--config", str(tmp_path / "missing.json")]) == 2


def test_serve_bad_config_key(tmp_path):
    assert main(["serve", "--config", write_json(tmp_path / "c.json", {"nope": 1})]) == 2


def test_serve_bad_port(tmp_path):
    assert main(["serve", "--config", write_json(tmp_path / "c.json", {"port": 70000})]) == 1
    assert main(["serve", "--config", write_json(tmp_path / "c.json", {"port": -1})]) == 1


def test_serve_bind_conflict_exit_1(tmp_path):
    with socket.socket() as held:
        held.bind(("127.0.0.1", 0))
        held.listen()
        cfg = write_json(tmp_path / "c.json", {"port": held.getsockname()[1]})
        assert main(["serve", "--config", cfg]) == 1


def test_serve_logs_ready_and_stops_on_signal(tmp_path):
    port = free_port()
    journal = tmp_path / "journal.ndjson"
    cfg = write_json(tmp_path / "c.json", {"port": port, "store.journal": str(journal)})
    proc = subprocess.Popen([sys.executable, "-m", "ldm.cli", "serve", "--config", cfg],
                            stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stderr.readline()
        assert "ready" in line and str(port) in line
        base = f"http://127.0.0.1:{port}"
        token = httpx.post(f"{base}/v1/subscribe", json={"kind": "vehicle", "device_id": "v"}).json()["token"]
        r = httpx.post(f"{base}/v1/devices/v/location", json={"lat": 1, "lon": 2, "at": int(time.time() * 1000)},
                       headers={"Authorization": f"Bearer {token}"})
        assert r.status_code == 200
    finally:
        proc.terminate()
        proc.wait(10)
    assert proc.returncode == 0
    assert len(journal.read_text().splitlines()) == 1
