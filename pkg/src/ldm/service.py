"""Composition root: one in-process LDM with every module wired together."""

from __future__ import annotations

import time
from typing import Callable

from .auth import Authenticator
from .config import ServiceConfig
from .events import EventEngine, ProximityRule, region_lookup
from .ingest import Detector, IngestPipeline
from .journal import Journal
from .store import LayerKind, ObjectStore
from .tracking import DeviceTracker


def wall_clock_ms() -> int:
    return int(time.time() * 1000)


class LocalDynamicMap:
    """Auth, store, tracking, event engine and ingest sharing one clock.

    Subscribing registers the device with the tracker; every accepted location
    fix is evaluated by the event engine.
    """

    def __init__(
        self,
        config: ServiceConfig | None = None,
        *,
        clock: Callable[[], int] = wall_clock_ms,
        detector: Detector | None = None,
    ) -> None:
        self.config = config = config or ServiceConfig()
        self.clock = clock
        self.journal = Journal(config.journal_path) if config.journal_path else None
        self.store = ObjectStore(
            ttls={
                LayerKind.HIGHLY_DYNAMIC: config.ttl_highly_dynamic_ms,
                LayerKind.TRANSIENT_DYNAMIC: config.ttl_transient_dynamic_ms,
                LayerKind.TRANSIENT_STATIC: config.ttl_transient_static_ms,
            },
            clock=clock,
            clock_skew_ms=config.clock_skew_ms,
            retention_ms=config.retention_ms,
        )
        if self.journal is not None:
            self.store.restore(self.journal.replay())
            self.store.attach_journal(self.journal)
        self.auth = Authenticator(clock)
        self.tracker = DeviceTracker(self.store, offline_timeout_ms=config.offline_timeout_ms)
        self.auth.add_listener(self.tracker.on_subscribe)
        freshness = config.proximity_freshness_ms or config.ttl_highly_dynamic_ms
        self.events = EventEngine(
            self.store,
            region_lookup(self.tracker),
            rule=ProximityRule(config.proximity_radius_m, frozenset(config.proximity_classes), freshness),
            debounce_ms=config.debounce_ms,
        )
        self.tracker.add_listener(self.events.on_location)
        self.ingest = IngestPipeline(
            self.auth,
            self.tracker,
            self.store,
            detector,
            confidence_threshold=config.confidence_threshold,
            latency_budget_ms=config.latency_budget_ms,
        )

    def close(self) -> None:
        if self.journal is not None:
            self.journal.close()
