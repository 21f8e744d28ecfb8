"""HTTP labeling service and the human oracle behind it.

The loop engine and the HTTP service share a data directory:

  batch.json             the pending batch: id token plus sample ids in
                         descending-confusion order (written by the oracle)
  labels_<batch>.jsonl   write-ahead log of accepted labels, one JSON object
                         per line (appended by the service before it
                         acknowledges, so restarts lose nothing)
  run_state.json         the run's persisted state (read-only view for
                         /api/status)

The oracle blocks the loop by polling the label log until every sample of
the batch is labeled. First write wins per sample: a resubmission with the
same label counts as a duplicate, a conflicting one is rejected.
"""

from __future__ import annotations

import io
import json
import os
import threading
import time
import uuid

import numpy as np
from fastapi import FastAPI
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .data import Dataset
from .loop import Oracle, OracleError

BATCH_FILE = "batch.json"


def _batch_path(data_dir) -> str:
    return os.path.join(data_dir, BATCH_FILE)


def _labels_path(data_dir, batch_id: str) -> str:
    return os.path.join(data_dir, f"labels_{batch_id}.jsonl")


def read_batch(data_dir) -> dict | None:
    try:
        with open(_batch_path(data_dir)) as f:
            return json.load(f)
    except FileNotFoundError:
        return None


def read_labels(data_dir, batch_id: str) -> dict[int, int]:
    """Replay the write-ahead log into a sample_id -> class_index map.
    First occurrence of a sample wins."""
    out: dict[int, int] = {}
    try:
        with open(_labels_path(data_dir, batch_id)) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                out.setdefault(int(rec["sample_id"]), int(rec["class_index"]))
    except FileNotFoundError:
        pass
    return out


class HumanOracle(Oracle):
    """Publishes a batch for the HTTP service and blocks until humans have
    labeled every sample in it."""

    def __init__(self, data_dir, num_classes: int, poll_interval: float = 1.0,
                 timeout: float | None = None):
        self.data_dir = data_dir
        self.num_classes = num_classes
        self.poll_interval = poll_interval
        self.timeout = timeout
        os.makedirs(data_dir, exist_ok=True)

    def label(self, sample_ids: list[int]) -> list[int]:
        batch_id = uuid.uuid4().hex
        batch = {
            "batch_id": batch_id,
            "sample_ids": [int(i) for i in sample_ids],
            "created_at": time.time(),
        }
        tmp = _batch_path(self.data_dir) + ".tmp"
        with open(tmp, "w") as f:
            json.dump(batch, f)
        os.replace(tmp, _batch_path(self.data_dir))

        deadline = None if self.timeout is None else time.monotonic() + self.timeout
        want = set(batch["sample_ids"])
        while True:
            got = read_labels(self.data_dir, batch_id)
            if want <= set(got):
                break
            if deadline is not None and time.monotonic() > deadline:
                raise OracleError(
                    f"timed out waiting for labels ({len(got)}/{len(want)} received)")
            time.sleep(self.poll_interval)
        os.remove(_batch_path(self.data_dir))
        return [got[i] for i in batch["sample_ids"]]


# ---------------------------------------------------------------------------
# HTTP service

class LabelItem(BaseModel):
    sample_id: int
    class_index: int


class LabelSubmission(BaseModel):
    batch_id: str
    labels: list[LabelItem]


def create_app(data_dir, ds: Dataset, run_dir=None, run_id: str = "run") -> FastAPI:
    """Build the labeling FastAPI app over a shared data directory.

    ``run_dir`` (defaults to ``data_dir``) is where the loop persists
    run_state.json; /api/status mirrors it.
    """
    run_dir = run_dir or data_dir
    app = FastAPI(title="guidedlabel labeling service")
    write_lock = threading.Lock()

    def current_batch():
        return read_batch(data_dir)

    @app.get("/api/status")
    def status():
        iteration = 0
        labeled_size = 0
        try:
            with open(os.path.join(run_dir, "run_state.json")) as f:
                st = json.load(f)
            iteration = st.get("iteration", 0)
            labeled_size = len(st.get("pool", {}).get("labeled_ids", []))
        except (FileNotFoundError, json.JSONDecodeError):
            pass
        batch = current_batch()
        batch_info = None
        if batch is not None:
            done = read_labels(data_dir, batch["batch_id"])
            batch_info = {
                "batch_id": batch["batch_id"],
                "total": len(batch["sample_ids"]),
                "remaining": len([i for i in batch["sample_ids"] if i not in done]),
            }
        return {
            "run_id": run_id,
            "iteration": iteration,
            "labeled_size": labeled_size,
            "class_names": ds.class_names,
            "batch": batch_info,
        }

    @app.get("/api/batch")
    def batch(limit: int = 50):
        b = current_batch()
        if b is None:
            return JSONResponse({"error": "no batch pending"}, status_code=409)
        done = read_labels(data_dir, b["batch_id"])
        items = []
        for sid in b["sample_ids"]:
            if sid in done:
                continue
            h, w, c = ds.images[sid].shape
            items.append({
                "sample_id": sid,
                "image_url": f"/api/image/{sid}",
                "width": int(w),
                "height": int(h),
                "channels": int(c),
            })
            if len(items) >= limit:
                break
        return {"batch_id": b["batch_id"], "items": items}

    @app.post("/api/labels")
    def submit(sub: LabelSubmission):
        b = current_batch()
        if b is None or b["batch_id"] != sub.batch_id:
            return JSONResponse({"error": "stale or unknown batch_id"}, status_code=410)
        bad = [it.sample_id for it in sub.labels
               if not 0 <= it.class_index < ds.num_classes]
        if bad:
            return JSONResponse({"error": "class_index out of range", "sample_ids": bad},
                                status_code=422)
        batch_ids = set(b["sample_ids"])
        accepted = duplicates = rejected = 0
        with write_lock:
            done = read_labels(data_dir, b["batch_id"])
            with open(_labels_path(data_dir, b["batch_id"]), "a") as f:
                for it in sub.labels:
                    if it.sample_id not in batch_ids:
                        rejected += 1
                    elif it.sample_id in done:
                        if done[it.sample_id] == it.class_index:
                            duplicates += 1
                        else:
                            rejected += 1  # first write wins
                    else:
                        f.write(json.dumps({"sample_id": it.sample_id,
                                            "class_index": it.class_index}) + "\n")
                        f.flush()
                        os.fsync(f.fileno())
                        done[it.sample_id] = it.class_index
                        accepted += 1
        return {"accepted": accepted, "duplicates": duplicates, "rejected": rejected}

    @app.get("/api/image/{sample_id}")
    def image(sample_id: int):
        b = current_batch()
        if b is None or sample_id not in set(b["sample_ids"]):
            return Response(status_code=404)
        from PIL import Image as PILImage
        arr = (np.clip(ds.images[sample_id], 0, 1) * 255).round().astype(np.uint8)
        if arr.shape[2] == 1:
            img = PILImage.fromarray(arr[:, :, 0], mode="L")
        else:
            img = PILImage.fromarray(arr, mode="RGB")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    return app
