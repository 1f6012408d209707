"""Drive the annotation service end to end, in process.

Materializes the demo task, generates its dataset, then plays a short
annotation session against the HTTP API: pull a queue, relabel and flag
instances, retrain proxies, and export the curated variants.
"""

import json
import tempfile

from fastapi.testclient import TestClient

from divgen.demo import build_mock_backend, materialize_demo
from divgen.pipeline import load_task, run_generation
from divgen.service import create_app

workdir = tempfile.mkdtemp(prefix="divgen-demo-")
task_path = materialize_demo(workdir)
task = load_task(task_path)
task.target_count = 100
run_generation(task, build_mock_backend(task), rng_seed=5,
               out_path=f"{workdir}/demo-emotions.ndjson")

api = TestClient(create_app(workdir, seed=1, sync_jobs=True))

print("tasks:", json.dumps(api.get("/tasks").json(), indent=2))

queue = api.get("/tasks/demo-emotions/queue", params={"n": 12}).json()["instances"]
print(f"\nreviewing {len(queue)} queued instances:")
for k, card in enumerate(queue):
    if k % 4 == 0:
        action = {"instance_id": card["id"], "action": "relabel", "label": "sadness"}
    elif k % 4 == 1:
        action = {"instance_id": card["id"], "action": "mark_oos"}
    else:
        action = {"instance_id": card["id"], "action": "confirm"}
    ack = api.post("/tasks/demo-emotions/annotations", json={**action, "annotator": "demo"})
    print(f"  {action['action']:<9} {card['id']} -> event {ack.json()['event_id']}")

api.post("/tasks/demo-emotions/proxies/retrain")
print("\nproxy status:", api.get("/tasks/demo-emotions/proxies/status").json()["state"])

metrics = api.get("/tasks/demo-emotions/metrics").json()
print("metrics:", json.dumps(metrics, indent=2))

for variant in ("raw", "lr", "oosf"):
    lines = api.get("/tasks/demo-emotions/export", params={"variant": variant}).text.splitlines()
    print(f"export {variant}: {len(lines) - 1} instances")
print(f"\nevent log persisted in {workdir}/demo-emotions.events.ndjson")
