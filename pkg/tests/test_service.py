import threading
import time

import jsonschema
import numpy as np
import pytest
from fastapi.testclient import TestClient

from rlad.active import HumanOracle, QueryBatch, QueryError, QueryItem
from rlad.service import ConflictError, LabelExchange, create_app, resolve_addr

STATUS_SCHEMA = {
    "type": "object",
    "required": ["state", "episode", "epsilon", "human_labels_used", "metrics"],
    "properties": {
        "state": {"enum": ["idle", "training", "awaiting_labels", "done"]},
        "episode": {"type": "integer"},
        "epsilon": {"type": ["number", "null"]},
        "human_labels_used": {"type": "integer"},
        "pseudo_labels_assigned": {"type": "integer"},
        "metrics": {
            "type": ["object", "null"],
            "properties": {
                "precision": {"type": "number"},
                "recall": {"type": "number"},
                "f1": {"type": "number"},
            },
        },
    },
}

QUERIES_SCHEMA = {
    "type": "object",
    "required": ["batch_id", "items"],
    "properties": {
        "batch_id": {"type": "string"},
        "items": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "margin", "window", "context", "context_start",
                             "end_index", "episode"],
                "properties": {
                    "index": {"type": "integer"},
                    "margin": {"type": "number"},
                    "window": {"type": "array", "items": {"type": "number"}},
                    "context": {"type": "array", "items": {"type": "number"}},
                    "context_start": {"type": "integer"},
                    "end_index": {"type": "integer"},
                    "episode": {"type": "integer"},
                },
            },
        },
    },
}


def make_batch(indices, margins=None):
    margins = margins or [0.1 * (k + 1) for k in range(len(indices))]
    items = [
        QueryItem(
            index=i,
            margin=m,
            window=np.full(4, 0.5),
            context=np.arange(8, dtype=float),
            context_start=max(0, i - 4),
            end_index=i + 3,
            episode=2,
        )
        for i, m in zip(indices, margins)
    ]
    return QueryBatch.build(items)


@pytest.fixture()
def exchange():
    return LabelExchange()


@pytest.fixture()
def client(exchange):
    return TestClient(create_app(exchange))


class TestStatus:
    def test_idle_before_any_run(self, client):
        payload = client.get("/api/status").json()
        jsonschema.validate(payload, STATUS_SCHEMA)
        assert payload["state"] == "idle"

    def test_awaiting_labels_while_batch_pending(self, exchange, client):
        exchange.set_status({"state": "training", "episode": 3, "epsilon": 0.9,
                             "human_labels_used": 20, "pseudo_labels_assigned": 5,
                             "metrics": None})
        exchange.publish_batch(make_batch([1, 2, 3]))
        payload = client.get("/api/status").json()
        jsonschema.validate(payload, STATUS_SCHEMA)
        assert payload["state"] == "awaiting_labels"
        assert payload["pending_items"] == 3

    def test_done_with_final_metrics(self, exchange, client):
        exchange.set_status({"state": "done", "episode": 9, "epsilon": 0.5,
                             "human_labels_used": 30, "pseudo_labels_assigned": 12,
                             "metrics": {"precision": 1.0, "recall": 0.9, "f1": 0.947}})
        payload = client.get("/api/status").json()
        jsonschema.validate(payload, STATUS_SCHEMA)
        assert payload["state"] == "done"
        assert payload["metrics"]["f1"] == pytest.approx(0.947)


class TestQueries:
    def test_no_content_when_nothing_pending(self, client):
        assert client.get("/api/queries").status_code == 204

    def test_pending_batch_payload(self, exchange, client):
        exchange.publish_batch(make_batch([4, 7, 9, 11, 15]))
        resp = client.get("/api/queries")
        assert resp.status_code == 200
        payload = resp.json()
        jsonschema.validate(payload, QUERIES_SCHEMA)
        assert len(payload["items"]) == 5
        margins = [it["margin"] for it in payload["items"]]
        assert margins == sorted(margins)

    def test_repeated_get_is_idempotent(self, exchange, client):
        exchange.publish_batch(make_batch([1, 2]))
        assert client.get("/api/queries").json() == client.get("/api/queries").json()


class TestLabels:
    def submit(self, client, batch_id, pairs):
        return client.post(
            "/api/labels",
            json={"batch_id": batch_id,
                  "labels": [{"index": i, "label": l} for i, l in pairs]},
        )

    def test_full_submission_completes_batch(self, exchange, client):
        batch = make_batch([1, 2, 3])
        exchange.publish_batch(batch)
        resp = self.submit(client, batch.batch_id, [(1, 0), (2, 1), (3, 0)])
        assert resp.status_code == 200
        assert resp.json() == {"accepted": 3, "complete": True}
        got = exchange.wait_for_labels(timeout=1)
        assert got == {1: 0, 2: 1, 3: 0}
        assert client.get("/api/queries").status_code == 204

    def test_partial_submissions_accumulate(self, exchange, client):
        batch = make_batch([1, 2, 3, 4, 5])
        exchange.publish_batch(batch)
        first = self.submit(client, batch.batch_id, [(1, 0), (2, 1)])
        assert first.json() == {"accepted": 2, "complete": False}
        second = self.submit(client, batch.batch_id, [(3, 0), (4, 0), (5, 1)])
        assert second.json() == {"accepted": 3, "complete": True}
        assert exchange.wait_for_labels(timeout=1) == {1: 0, 2: 1, 3: 0, 4: 0, 5: 1}

    def test_unknown_batch_id_conflicts(self, exchange, client):
        exchange.publish_batch(make_batch([1]))
        resp = self.submit(client, "nope", [(1, 0)])
        assert resp.status_code == 409

    def test_out_of_range_label_is_validation_error(self, exchange, client):
        batch = make_batch([1])
        exchange.publish_batch(batch)
        resp = self.submit(client, batch.batch_id, [(1, 2)])
        assert resp.status_code == 422
        # nothing recorded
        assert self.submit(client, batch.batch_id, [(1, 1)]).json()["complete"] is True

    def test_duplicate_index_conflicts_and_records_nothing(self, exchange, client):
        batch = make_batch([1, 2])
        exchange.publish_batch(batch)
        self.submit(client, batch.batch_id, [(1, 0)])
        resp = self.submit(client, batch.batch_id, [(1, 1)])
        assert resp.status_code == 409
        mixed = self.submit(client, batch.batch_id, [(2, 0), (2, 1)])
        assert mixed.status_code == 409
        done = self.submit(client, batch.batch_id, [(2, 0)])
        assert done.json()["complete"] is True

    def test_index_outside_batch_conflicts(self, exchange, client):
        batch = make_batch([1])
        exchange.publish_batch(batch)
        assert self.submit(client, batch.batch_id, [(99, 0)]).status_code == 409

    def test_exactly_once_across_batches(self, exchange):
        batch = make_batch([5])
        exchange.publish_batch(batch)
        exchange.submit(batch.batch_id, [(5, 1)])
        exchange.wait_for_labels(timeout=1)
        again = make_batch([5])
        exchange.publish_batch(again)
        with pytest.raises(ConflictError):
            exchange.submit(again.batch_id, [(5, 0)])


class TestTrainerLoop:
    def test_human_oracle_round_trip(self, exchange, client):
        exchange.set_status({"state": "training", "episode": 1, "epsilon": 1.0,
                             "human_labels_used": 0, "pseudo_labels_assigned": 0,
                             "metrics": None})
        oracle = HumanOracle(exchange, timeout=5)
        batch = make_batch([10, 20, 30])
        result = {}

        def trainer():
            result["answers"] = oracle.label_batch(batch)

        thread = threading.Thread(target=trainer)
        thread.start()
        deadline = time.time() + 5
        while client.get("/api/queries").status_code != 200:
            assert time.time() < deadline
            time.sleep(0.01)
        assert client.get("/api/status").json()["state"] == "awaiting_labels"
        payload = client.get("/api/queries").json()
        pairs = [(it["index"], it["index"] % 2) for it in payload["items"]]
        resp = client.post(
            "/api/labels",
            json={"batch_id": payload["batch_id"],
                  "labels": [{"index": i, "label": l} for i, l in pairs]},
        )
        assert resp.json()["complete"] is True
        thread.join(timeout=5)
        assert not thread.is_alive()
        assert result["answers"] == [(10, 0), (20, 0), (30, 0)]
        # batch resolved: the trainer resumes and the console sees training again
        assert client.get("/api/status").json()["state"] == "training"

    def test_timeout_keeps_batch_republishable(self, exchange):
        oracle = HumanOracle(exchange, timeout=0.05)
        batch = make_batch([1, 2])
        with pytest.raises(QueryError):
            oracle.label_batch(batch)
        # partial labels survive a timeout; re-publication keeps them
        exchange.submit(batch.batch_id, [(1, 1)])
        exchange.publish_batch(batch)
        exchange.submit(batch.batch_id, [(2, 0)])
        assert exchange.wait_for_labels(timeout=1) == {1: 1, 2: 0}


class TestResolveAddr:
    def test_default(self, monkeypatch):
        monkeypatch.delenv("RLAD_ADDR", raising=False)
        assert resolve_addr() == ("127.0.0.1", 8723)

    def test_env_var(self, monkeypatch):
        monkeypatch.setenv("RLAD_ADDR", "0.0.0.0:9000")
        assert resolve_addr() == ("0.0.0.0", 9000)

    def test_flag_wins(self, monkeypatch):
        monkeypatch.setenv("RLAD_ADDR", "0.0.0.0:9000")
        assert resolve_addr("localhost:1234") == ("localhost", 1234)

    def test_bad_format_rejected(self):
        with pytest.raises(ValueError):
            resolve_addr("not-an-address")
