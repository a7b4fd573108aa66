"""Service core and HTTP surface: delivery, dedup, clicks, health."""

from __future__ import annotations

import json
import threading
from datetime import datetime, timedelta, timezone

import pytest
from fastapi.testclient import TestClient

from conftest import build_service
from docrec.api import create_app
from docrec.corpus import IngestInProgressError, ingest
from docrec.eventlog import LogSnapshot
from docrec.service import (
    NotFoundError,
    RecommenderService,
    ServiceConfig,
    ValidationError,
    dedup_delivered_list,
)
from docrec.simharness import SimClock
from helpers import jsonl_stream, store_from_records

RECORDS = [
    {"id": "src", "title": "web spam detection survey", "year": 2006},
    {"id": "a", "title": "spam detection with learning", "year": 2007},
    {"id": "b", "title": "web search spam analysis", "year": 2008},
    {"id": "c", "title": "Web Spam Detection: Survey!", "year": 2006},  # dup of src
    {"id": "d", "title": "Is evaluating visual search interfaces in digital libraries still an issue?", "year": 2014},
    {"id": "e", "title": "Is evaluating visual search interfaces in digital libraries still an issue", "year": 2014},  # dup of d
    {"id": "f", "title": "spam filtering for the web", "year": 2009},
    {"id": "g", "title": "search engine ranking spam", "year": 2010},
]


@pytest.fixture
def clock():
    return SimClock(datetime(2024, 3, 1, 12, 0, tzinfo=timezone.utc))


@pytest.fixture
def service(tmp_path, clock):
    svc = build_service(tmp_path, RECORDS, clock=clock.now)
    yield svc
    svc.close()


class TestRequestRelated:
    def test_defaults_ranks_and_self_exclusion(self, service):
        record = service.request_related("src")
        assert record.requested_count == 10
        assert len(record.items) <= 10
        assert [i.rank for i in record.items] == list(range(1, len(record.items) + 1))
        assert service.store.get_by_external("src").doc_id not in \
            [i.doc_id for i in record.items]

    def test_count_out_of_range_rejected_not_clamped(self, service):
        with pytest.raises(ValidationError) as err:
            service.request_related("src", count=20)
        assert "1..15" in str(err.value)
        with pytest.raises(ValidationError):
            service.request_related("src", count=0)

    def test_unknown_external_id(self, service):
        with pytest.raises(NotFoundError):
            service.request_related("nope")

    def test_set_persisted_before_response(self, service, tmp_path):
        record = service.request_related("src", count=3)
        lines = (tmp_path / "events.log").read_text().splitlines()
        persisted = [json.loads(l) for l in lines if json.loads(l)["type"] == "set"]
        assert persisted[-1]["set_id"] == record.set_id

    def test_processing_time_measured_by_clock(self, tmp_path):
        class SteppingClock:
            def __init__(self):
                self.t = datetime(2024, 3, 1, tzinfo=timezone.utc)

            def __call__(self):
                self.t += timedelta(milliseconds=40)
                return self.t

        svc = build_service(tmp_path, RECORDS, clock=SteppingClock())
        record = svc.request_related("src", count=3)
        assert record.processing_time_ms == round(
            (record.delivered_at - record.received_at).total_seconds() * 1000)
        assert record.processing_time_ms > 0
        svc.close()

    def test_no_duplicate_keys_in_delivered_set(self, service):
        # run many requests; no set may contain the source key or two items
        # sharing (clean_title, year)
        store = service.store
        for ext in ("src", "d", "a"):
            for _ in range(30):
                record = service.request_related(ext, count=10)
                source = store.get_by_external(ext)
                keys = [store.get(i.doc_id).dedup_key() for i in record.items]
                assert source.dedup_key() not in keys
                assert len(keys) == len(set(keys))

    def test_fingerprints_recorded(self, service):
        record = service.request_related("src", count=5)
        assert record.sampled_fingerprint
        assert record.executed_fingerprint
        if not record.fallback_used:
            assert record.sampled_fingerprint == record.executed_fingerprint

    def test_empty_result_is_success(self, tmp_path, clock):
        from docrec.randomizer import ClassWeights

        svc = build_service(tmp_path, [
            {"id": "x", "title": "isolated unique topic"},
            {"id": "y", "title": "completely different thing"},
        ], config=ServiceConfig(
            weights=ClassWeights(cbf=1.0, stereotype=0.0, most_popular=0.0, random=0.0),
            rerank_probability=0.0), clock=clock.now)
        record = svc.request_related("x", count=5)
        assert record.items == []
        svc.close()


class TestDedupDeliveredList:
    def test_duplicate_candidates_keep_best_ranked(self, tmp_path):
        store = store_from_records(tmp_path, RECORDS)
        d = store.get_by_external("d")
        e = store.get_by_external("e")
        src = store.get_by_external("src")
        items = [(d.doc_id, 3.0), (e.doc_id, 2.0)]
        kept = dedup_delivered_list(items, src, store)
        assert kept == [(d.doc_id, 3.0)]

    def test_candidate_duplicating_source_removed(self, tmp_path):
        store = store_from_records(tmp_path, RECORDS)
        src = store.get_by_external("src")
        c = store.get_by_external("c")
        a = store.get_by_external("a")
        kept = dedup_delivered_list([(c.doc_id, 5.0), (a.doc_id, 1.0)], src, store)
        assert kept == [(a.doc_id, 1.0)]

    def test_all_distinct_unchanged(self, tmp_path):
        store = store_from_records(tmp_path, RECORDS)
        src = store.get_by_external("src")
        items = [(store.get_by_external(x).doc_id, float(10 - i))
                 for i, x in enumerate(("a", "b", "f"))]
        assert dedup_delivered_list(items, src, store) == items


class TestClicks:
    def test_delay_computed_from_delivery(self, service, clock):
        record = service.request_related("src", count=5)
        clock.advance(90)
        click = service.record_click(record.items[0].rec_id)
        assert click.delay_ms == 90_000

    def test_repeat_clicks_all_stored(self, service, clock, tmp_path):
        record = service.request_related("src", count=5)
        rec_id = record.items[0].rec_id
        clock.advance(10)
        service.record_click(rec_id)
        clock.advance(10)
        service.record_click(rec_id)
        snapshot = LogSnapshot.load(tmp_path)
        assert sum(1 for c in snapshot.clicks if c.rec_id == rec_id) == 2

    def test_unknown_rec_id(self, service):
        with pytest.raises(NotFoundError):
            service.record_click("ffffffffffffffffffffffffffffffff")

    def test_click_attribution_survives_restart(self, tmp_path, clock):
        svc = build_service(tmp_path, RECORDS, clock=clock.now)
        record = svc.request_related("src", count=3)
        svc.close()
        revived = RecommenderService(svc.store, svc.index, ServiceConfig(),
                                     tmp_path, clock=clock.now)
        clock.advance(5)
        click = revived.record_click(record.items[0].rec_id)
        assert click.delay_ms == 5_000
        revived.close()


class TestConfig:
    def test_cache_ttl_wired_from_config(self, tmp_path, clock):
        svc = build_service(tmp_path, RECORDS,
                            config=ServiceConfig(cache_ttl_days=3), clock=clock.now)
        assert svc.cache.ttl == timedelta(days=3)
        svc.close()

    def test_config_file_roundtrip(self, tmp_path):
        path = tmp_path / "service.json"
        path.write_text(json.dumps({
            "class_weights": {"cbf": 0.8, "stereotype": 0.1,
                              "most_popular": 0.08, "random": 0.02},
            "rerank_probability": 0.25,
            "cache_ttl_days": 7,
            "master_seed": 5,
        }))
        config = ServiceConfig.load(path)
        assert config.weights.cbf == 0.8
        assert config.rerank_probability == 0.25
        assert config.cache_ttl_days == 7
        assert config.master_seed == 5

    def test_bad_weights_rejected_at_load(self, tmp_path):
        path = tmp_path / "service.json"
        path.write_text(json.dumps({"class_weights": {
            "cbf": 0.5, "stereotype": 0.1, "most_popular": 0.1, "random": 0.1}}))
        from docrec.randomizer import WeightConfigError
        with pytest.raises(WeightConfigError):
            ServiceConfig.load(path)


class TestHealth:
    def test_fields(self, service):
        h = service.health()
        assert h["status"] == "ok"
        assert h["corpus_size"] == len(RECORDS)
        assert h["index_version"] == service.index.version
        assert h["uptime_seconds"] >= 0

    def test_uptime_non_decreasing(self, service):
        a = service.health()["uptime_seconds"]
        b = service.health()["uptime_seconds"]
        assert b >= a

    def test_answers_while_ingest_holds_lock(self, service, tmp_path):
        # an ingest in progress must not block health
        (tmp_path / "ingest.lock").touch()
        with pytest.raises(IngestInProgressError):
            ingest(jsonl_stream([{"id": "z", "title": "late arrival"}]),
                   "jsonl", service.store)
        assert service.health()["status"] == "ok"
        (tmp_path / "ingest.lock").unlink()

    def test_concurrent_requests_and_health(self, service):
        errors = []

        def hammer():
            try:
                for _ in range(20):
                    service.request_related("src", count=5)
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=hammer) for _ in range(4)]
        for t in threads:
            t.start()
        for _ in range(50):
            assert service.health()["status"] == "ok"
        for t in threads:
            t.join()
        assert not errors


@pytest.fixture
def client(service):
    return TestClient(create_app(service), raise_server_exceptions=False)


class TestHttpApi:
    def test_related_response_shape(self, client):
        resp = client.get("/v1/documents/src/related", params={"count": 5, "user": "u1"})
        assert resp.status_code == 200
        body = resp.json()
        assert set(body) == {"set_id", "processing_time_ms", "fallback_used",
                             "algorithm", "recommendations"}
        assert set(body["algorithm"]) == {"sampled", "executed"}
        for i, rec in enumerate(body["recommendations"], start=1):
            assert set(rec) == {"rec_id", "external_id", "title", "rank", "relevance"}
            assert rec["rank"] == i

    def test_unknown_document_404(self, client):
        assert client.get("/v1/documents/nope/related").status_code == 404

    def test_count_validation_422(self, client):
        resp = client.get("/v1/documents/src/related", params={"count": 20})
        assert resp.status_code == 422
        assert "1..15" in resp.json()["error"]

    def test_click_flow(self, client):
        body = client.get("/v1/documents/src/related", params={"count": 5}).json()
        rec_id = body["recommendations"][0]["rec_id"]
        assert client.post(f"/v1/clicks/{rec_id}").status_code == 204
        assert client.post("/v1/clicks/deadbeef").status_code == 404

    def test_beacon_no_cache_and_always_204(self, client):
        body = client.get("/v1/documents/src/related", params={"count": 5}).json()
        rec_id = body["recommendations"][0]["rec_id"]
        resp = client.get(f"/v1/clicks/{rec_id}/beacon")
        assert resp.status_code == 204
        assert "no-cache" in resp.headers["Cache-Control"]
        assert client.get("/v1/clicks/unknown/beacon").status_code == 204

    def test_render_event(self, client):
        body = client.get("/v1/documents/src/related", params={"count": 5}).json()
        assert client.post(f"/v1/rendered/{body['set_id']}").status_code == 204

    def test_health_route(self, client):
        resp = client.get("/v1/health")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"
