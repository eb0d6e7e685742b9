from __future__ import annotations

import json

import pytest

from ldm.config import ServiceConfig, config_from_mapping, load_config
from ldm.errors import ValidationError
from ldm.geo import GeoPoint
from ldm.service import LocalDynamicMap
from ldm.store import LayerKind


def test_nested_and_dotted_keys_agree():
    nested = config_from_mapping({"ttl": {"highly_dynamic_ms": 1500}, "proximity": {"radius_m": 30}})
    dotted = config_from_mapping({"ttl.highly_dynamic_ms": 1500, "proximity.radius_m": 30})
    assert nested == dotted
    assert nested.ttl_highly_dynamic_ms == 1500 and nested.proximity_radius_m == 30


@pytest.mark.parametrize("doc", [{"bogus": 1}, {"port": "80"}, {"ingest": {"nope": 1}}])
def test_bad_config_rejected(doc):
    with pytest.raises(ValidationError):
        config_from_mapping(doc)


def test_load_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"port": 9000, "latency": {"budget_ms": 80}}))
    cfg = load_config(path)
    assert (cfg.port, cfg.latency_budget_ms) == (9000, 80)
    path.write_text("[1]")
    with pytest.raises(ValidationError):
        load_config(path)


def test_config_drives_service(clock):
    ldm = LocalDynamicMap(ServiceConfig(ttl_highly_dynamic_ms=1000, proximity_radius_m=20,
                                        confidence_threshold=0.8), clock=clock)
    assert ldm.store.ttl(LayerKind.HIGHLY_DYNAMIC) == 1000
    assert ldm.events.rule.radius_m == 20 and ldm.events.rule.freshness_ms == 1000
    assert ldm.ingest.confidence_threshold == 0.8


def test_restart_replays_journal(tmp_path, clock):
    cfg = ServiceConfig(journal_path=str(tmp_path / "j.ndjson"))
    first = LocalDynamicMap(cfg, clock=clock)
    first.auth.subscribe("vehicle", "v")
    first.tracker.update_location("v", GeoPoint(1, 2), 1000)
    before = first.store.all_states()
    first.close()

    second = LocalDynamicMap(cfg, clock=clock)
    assert second.store.all_states() == before
    second.close()
