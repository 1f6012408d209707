"""HTTP annotation service: review queues, annotation events, proxy retraining.

State is event-sourced: the generated dataset file is immutable and every
human action (relabel, mark out-of-scope, confirm) is appended to a
line-delimited JSON event log before it is acknowledged. Replaying the log
over the dataset reconstructs the exact curation state, and a periodic
snapshot keeps restarts cheap.
"""

import datetime as _dt
import glob
import json
import logging
import os
import threading
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel

from divgen import curation
from divgen.metrics import HashedNGramEmbedder, label_accuracy, metrics_report
from divgen.mocklm import KeywordLabeler
from divgen.pipeline import (
    OOS_IN_SCOPE,
    OOS_OUT_OF_SCOPE,
    Dataset,
    TaskSpec,
    dataset_lines,
    load_dataset,
    load_task,
)

__all__ = ["AnnotationEvent", "TaskStore", "ServiceState", "create_app"]

logger = logging.getLogger(__name__)

ACTIONS = ("relabel", "mark_oos", "confirm")
QUEUE_STRATEGIES = ("random", "low_confidence")


@dataclass
class AnnotationEvent:
    event_id: int
    timestamp: str
    instance_id: str
    action: str
    payload: dict
    annotator: str

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "timestamp": self.timestamp,
            "instance_id": self.instance_id,
            "action": self.action,
            "payload": self.payload,
            "annotator": self.annotator,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "AnnotationEvent":
        return cls(**{k: record[k] for k in (
            "event_id", "timestamp", "instance_id", "action", "payload", "annotator")})


class TaskStore:
    """Single-task curation state: immutable dataset + append-only event log."""

    def __init__(
        self,
        key: str,
        task: TaskSpec,
        dataset_path: str,
        events_path: str,
        snapshot_path: str | None = None,
        seed: int = 0,
        specified_weight: float = curation.DEFAULT_SPECIFIED_WEIGHT,
        snapshot_every: int = 100,
    ):
        self.key = key
        self.task = task
        self.dataset_path = dataset_path
        self.events_path = events_path
        self.snapshot_path = snapshot_path
        self.seed = seed
        self.specified_weight = specified_weight
        self.snapshot_every = snapshot_every
        self.embedder = HashedNGramEmbedder()
        self.lock = threading.Lock()

        self.original, _ = load_dataset(dataset_path)
        self.state = {inst.id: inst for inst in self.original.copy().instances}
        self.order = [inst.id for inst in self.original.instances]
        self.last_event_id = 0
        self.proxies: curation.ProxyModelSet | None = None
        self.scores: dict[str, dict[str, float]] = {}
        self.job_status: dict = {"state": "idle"}
        self._diversity_cache: float | None = None
        self._load_snapshot()
        self._replay_events()

    # -- persistence ------------------------------------------------------

    def _load_snapshot(self) -> None:
        if not self.snapshot_path or not os.path.exists(self.snapshot_path):
            return
        try:
            with open(self.snapshot_path, encoding="utf-8") as fh:
                snap = json.load(fh)
            from divgen.pipeline import DataInstance

            instances = {r["id"]: DataInstance.from_dict(r) for r in snap["instances"]}
            if set(instances) != set(self.order):
                logger.warning("snapshot for %s does not match dataset; ignoring it", self.key)
                return
            self.state = instances
            self.last_event_id = snap["last_event_id"]
        except (json.JSONDecodeError, KeyError) as exc:
            logger.warning("unreadable snapshot for %s (%s); replaying full log", self.key, exc)

    def _replay_events(self) -> None:
        if not os.path.exists(self.events_path):
            return
        with open(self.events_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    event = AnnotationEvent.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError):
                    logger.warning("skipping corrupt trailing event record in %s", self.events_path)
                    continue
                if event.event_id <= self.last_event_id:
                    continue
                self._apply(event)
                self.last_event_id = event.event_id

    def _write_snapshot(self) -> None:
        if not self.snapshot_path:
            return
        snap = {
            "last_event_id": self.last_event_id,
            "instances": [self.state[i].to_dict() for i in self.order],
        }
        tmp = f"{self.snapshot_path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(snap, fh, sort_keys=True, separators=(",", ":"))
        os.replace(tmp, self.snapshot_path)

    # -- events -----------------------------------------------------------

    def _validate(self, instance_id: str, action: str, payload: dict) -> None:
        if action not in ACTIONS:
            raise ValueError(f"unknown action {action!r}")
        if instance_id not in self.state:
            raise KeyError(f"unknown instance {instance_id!r}")
        if action == "relabel":
            label = payload.get("label")
            if label not in self.task.labels:
                raise ValueError(f"invalid label {label!r} for task {self.key}")

    def _apply(self, event: AnnotationEvent) -> None:
        inst = self.state[event.instance_id]
        if event.action == "relabel":
            inst.current_label = event.payload["label"]
            inst.label_provenance = "human"
        elif event.action == "mark_oos":
            flagged = bool(event.payload.get("flag", True))
            inst.oos_state = OOS_OUT_OF_SCOPE if flagged else OOS_IN_SCOPE
            inst.label_provenance = "human"
        elif event.action == "confirm":
            inst.label_provenance = "human"

    def post_annotation(self, instance_id: str, action: str, payload: dict, annotator: str) -> AnnotationEvent:
        """Validate, durably append, then apply one annotation event."""
        with self.lock:
            self._validate(instance_id, action, payload)
            event = AnnotationEvent(
                event_id=self.last_event_id + 1,
                timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(),
                instance_id=instance_id,
                action=action,
                payload=payload,
                annotator=annotator,
            )
            with open(self.events_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._apply(event)
            self.last_event_id = event.event_id
            if self.last_event_id % self.snapshot_every == 0:
                self._write_snapshot()
            return event

    # -- queries ----------------------------------------------------------

    def uninspected_ids(self) -> list[str]:
        return [
            i for i in self.order
            if self.state[i].label_provenance in ("specified", "proxy")
        ]

    def queue(self, n: int, strategy: str = "random") -> list[dict]:
        if strategy not in QUEUE_STRATEGIES:
            raise ValueError(f"unknown queue strategy {strategy!r}")
        pending = self.uninspected_ids()
        if strategy == "random":
            rng = np.random.default_rng([self.seed, self.last_event_id])
            picked = [pending[int(i)] for i in rng.permutation(len(pending))[:n]]
        else:
            by_confidence = sorted(
                pending,
                key=lambda i: (max(self.scores.get(i, {"": 0.0}).values()), i),
            )
            picked = by_confidence[:n]
        return [self._instance_view(i) for i in picked]

    def _instance_view(self, instance_id: str) -> dict:
        inst = self.state[instance_id]
        view = inst.to_dict()
        view["scores"] = self.scores.get(instance_id, {})
        return view

    def retrain_proxies(self) -> dict:
        """Retrain per-label proxies on every human/oracle-labeled instance."""
        with self.lock:
            labeled = [
                i for i in self.order
                if self.state[i].label_provenance in ("human", "oracle")
                and self.state[i].oos_state != OOS_OUT_OF_SCOPE
            ]
            if not labeled:
                raise ValueError("no labeled instances to train proxies on")
            snapshot = Dataset(
                task_name=self.original.task_name,
                instances=[self.state[i] for i in self.order],
                run_metadata=dict(self.original.run_metadata, labels=list(self.task.labels)),
            )
            oracle_labels = {i: self.state[i].current_label for i in labeled}
        proxies = curation.train_proxies(snapshot, set(labeled), oracle_labels, self.embedder)
        with self.lock:
            self.proxies = proxies
            self._rescore(labeled_ids=set(labeled))
            summary = self._proxy_summary(labeled, oracle_labels)
            return summary

    def _rescore(self, labeled_ids: set[str]) -> None:
        pending = [i for i in self.order if i not in labeled_ids]
        if not pending or self.proxies is None:
            self.scores = {}
            return
        vectors = self.embedder.embed([self.state[i].text for i in pending])
        weight = self.specified_weight
        confidences = {
            label: self.proxies.confidences(label, vectors) for label in self.task.labels
        }
        self.scores = {}
        for row, instance_id in enumerate(pending):
            specified = self.state[instance_id].specified_label
            self.scores[instance_id] = {
                label: curation.final_score(
                    1 if label == specified else 0, float(confidences[label][row]), weight
                )
                for label in self.task.labels
            }

    def _proxy_summary(self, labeled: list[str], oracle_labels: dict[str, str]) -> dict:
        vectors = self.embedder.embed([self.state[i].text for i in labeled])
        positives = {
            label: sum(1 for i in labeled if oracle_labels[i] == label)
            for label in self.task.labels
        }
        margin_rows = []
        for label in self.task.labels:
            assert self.proxies is not None
            clf = self.proxies.classifiers[label]
            margin_rows.append(clf.margin(vectors) if clf else np.full(len(labeled), -np.inf))
        predicted = [self.task.labels[int(k)] for k in np.argmax(np.stack(margin_rows, axis=1), axis=1)]
        accuracy = float(np.mean([p == oracle_labels[i] for p, i in zip(predicted, labeled)]))
        return {
            "n_labeled": len(labeled),
            "positives_per_label": positives,
            "training_accuracy": accuracy,
            "stub_labels": [l for l, c in (self.proxies.classifiers if self.proxies else {}).items() if c is None],
        }

    def current_dataset(self) -> Dataset:
        return Dataset(
            task_name=self.original.task_name,
            instances=[self.state[i] for i in self.order],
            run_metadata=self.original.run_metadata,
        )

    def metrics(self) -> dict:
        from divgen.demo import synthetic_task_from_spec_or_keywords

        dataset = self.current_dataset()
        evaluator = (
            KeywordLabeler(synthetic_task_from_spec_or_keywords(self.task))
            if self.task.planted_keywords
            else None
        )
        if self._diversity_cache is None:
            vectors = self.embedder.embed([inst.text for inst in dataset.instances])
            from divgen.metrics import remote_clique_diversity

            self._diversity_cache = (
                remote_clique_diversity(vectors) if len(dataset.instances) >= 2 else None
            )
        report = {
            "n_instances": len(dataset.instances),
            "diversity": self._diversity_cache,
            "per_label_counts": dataset.counts_by("current_label"),
            "label_accuracy": label_accuracy(dataset, evaluator) if evaluator else None,
            "inspected_count": len(self.order) - len(self.uninspected_ids()),
            "oos_flagged": sum(1 for i in self.order if self.state[i].oos_state == OOS_OUT_OF_SCOPE),
            "n_events": self.last_event_id,
            "state_version": self.last_event_id,
        }
        return report

    def export_lines(self, variant: str) -> list[str]:
        if variant == "raw":
            return dataset_lines(self.original)
        dataset = self.current_dataset()
        if variant == "lr":
            return dataset_lines(dataset)
        if variant == "oosf":
            kept = [inst for inst in dataset.instances if inst.oos_state != OOS_OUT_OF_SCOPE]
            return dataset_lines(Dataset(dataset.task_name, kept, dataset.run_metadata))
        raise ValueError(f"unknown export variant {variant!r}")


@dataclass
class ServiceState:
    stores: dict[str, TaskStore] = field(default_factory=dict)
    sync_jobs: bool = False


class AnnotationBody(BaseModel):
    instance_id: str
    action: str
    label: str | None = None
    flag: bool | None = None
    annotator: str = "anonymous"


def discover_tasks(data_dir: str, seed: int = 0, specified_weight: float = 0.3) -> dict[str, TaskStore]:
    """Pair every <name>.task.json in the directory with its dataset and log."""
    stores: dict[str, TaskStore] = {}
    for task_path in sorted(glob.glob(os.path.join(data_dir, "*.task.json"))):
        key = os.path.basename(task_path)[: -len(".task.json")]
        dataset_path = os.path.join(data_dir, f"{key}.ndjson")
        if not os.path.exists(dataset_path):
            logger.warning("task %s has no dataset file %s; skipping", key, dataset_path)
            continue
        stores[key] = TaskStore(
            key=key,
            task=load_task(task_path),
            dataset_path=dataset_path,
            events_path=os.path.join(data_dir, f"{key}.events.ndjson"),
            snapshot_path=os.path.join(data_dir, f"{key}.snapshot.json"),
            seed=seed,
            specified_weight=specified_weight,
        )
    return stores


def create_app(
    data_dir: str,
    seed: int = 0,
    specified_weight: float = 0.3,
    sync_jobs: bool = False,
    api_token: str | None = None,
    ui_dir: str | None = None,
    ui_origin: str | None = None,
):
    """Build the FastAPI application over a directory of task datasets."""
    from fastapi import FastAPI, HTTPException, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse, PlainTextResponse

    if api_token is None:
        api_token = os.environ.get("DIVGEN_API_TOKEN")
    if ui_origin is None:
        ui_origin = os.environ.get("DIVGEN_UI_ORIGIN", "*")

    state = ServiceState(stores=discover_tasks(data_dir, seed, specified_weight), sync_jobs=sync_jobs)
    app = FastAPI(title="divgen annotation service")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[ui_origin],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": exc.status_code, "message": str(exc.detail)},
        )

    def store_or_404(task_key: str) -> TaskStore:
        store = state.stores.get(task_key)
        if store is None:
            raise HTTPException(404, f"unknown task {task_key!r}")
        return store

    def check_write_token(request: Request) -> None:
        if not api_token:
            return
        header = request.headers.get("Authorization", "")
        if header != f"Bearer {api_token}":
            raise HTTPException(401, "missing or invalid API token")

    @app.get("/tasks")
    def list_tasks():
        return [
            {
                "task": key,
                "name": store.task.name,
                "labels": store.task.labels,
                "n_instances": len(store.order),
                "inspected_count": len(store.order) - len(store.uninspected_ids()),
                "state_version": store.last_event_id,
            }
            for key, store in sorted(state.stores.items())
        ]

    @app.get("/tasks/{task_key}/queue")
    def get_queue(task_key: str, n: int = 20, strategy: str = "random"):
        store = store_or_404(task_key)
        try:
            items = store.queue(n, strategy)
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return {"task": task_key, "strategy": strategy, "instances": items}

    @app.post("/tasks/{task_key}/annotations")
    def post_annotation(task_key: str, body: AnnotationBody, request: Request):
        check_write_token(request)
        store = store_or_404(task_key)
        payload: dict = {}
        if body.action == "relabel":
            payload["label"] = body.label
        if body.action == "mark_oos":
            payload["flag"] = True if body.flag is None else body.flag
        try:
            event = store.post_annotation(body.instance_id, body.action, payload, body.annotator)
        except KeyError as exc:
            raise HTTPException(404, str(exc))
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return {"event_id": event.event_id, "state_version": store.last_event_id}

    @app.post("/tasks/{task_key}/proxies/retrain")
    def retrain(task_key: str, request: Request):
        check_write_token(request)
        store = store_or_404(task_key)
        if store.job_status.get("state") == "running":
            return {"state": "running"}

        def job():
            try:
                summary = store.retrain_proxies()
                store.job_status = {"state": "done", "summary": summary}
            except ValueError as exc:
                store.job_status = {"state": "failed", "message": str(exc)}

        store.job_status = {"state": "running"}
        if state.sync_jobs:
            job()
            return store.job_status
        thread = threading.Thread(target=job, daemon=True)
        thread.start()
        return {"state": "running"}

    @app.get("/tasks/{task_key}/proxies/status")
    def proxy_status(task_key: str):
        return store_or_404(task_key).job_status

    @app.get("/tasks/{task_key}/metrics")
    def get_metrics(task_key: str):
        return store_or_404(task_key).metrics()

    @app.get("/tasks/{task_key}/export")
    def export(task_key: str, variant: str = "raw"):
        store = store_or_404(task_key)
        try:
            lines = store.export_lines(variant)
        except ValueError as exc:
            raise HTTPException(400, str(exc))
        return PlainTextResponse("\n".join(lines) + "\n", media_type="application/x-ndjson")

    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
