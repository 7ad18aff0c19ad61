"""File-backed knowledge store: one directory per task with task.json
(metadata + meta-feature) and an appendable observations.jsonl."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .similarity import TaskRecord
from .space import ConfigSpace, Configuration
from .surrogate import STATUS_OK

log = logging.getLogger(__name__)


def _obs_line(cfg: Configuration, space: ConfigSpace, latencies, costs,
              status: str, fidelity: float) -> str:
    return json.dumps({
        "config": cfg.as_dict(space),
        "per_query_latency_s": [float(x) for x in latencies],
        "per_query_cost_s": [float(x) for x in costs],
        "status": status,
        "fidelity": fidelity,
    })


class KnowledgeStore:
    """Single-writer, multi-reader store rooted at a directory."""

    def __init__(self, root: str | Path, space: ConfigSpace):
        self.root = Path(root)
        self.space = space
        self.root.mkdir(parents=True, exist_ok=True)

    def task_dir(self, task_id: str) -> Path:
        return self.root / task_id

    def load_all(self) -> list[TaskRecord]:
        """All readable tasks; malformed files are skipped with a warning,
        and a torn trailing observation line is dropped."""
        records = []
        for d in sorted(self.root.iterdir()):
            if not d.is_dir():
                continue
            try:
                records.append(self._load_task(d))
            except Exception as exc:  # noqa: BLE001 - fault isolation by design
                log.warning("skipping malformed task %s: %s", d.name, exc)
        return records

    def _load_task(self, d: Path) -> TaskRecord:
        meta = json.loads((d / "task.json").read_text())
        observations = []
        obs_path = d / "observations.jsonl"
        if obs_path.exists():
            for line in obs_path.read_text().splitlines():
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError:
                    log.warning("dropping torn observation line in %s", d.name)
                    continue
                # Full-fidelity ok observations back the TaskRecord; partial
                # and failed runs carry no complete per-query vectors.
                if obj.get("status") != STATUS_OK or obj.get("fidelity", 1.0) != 1.0:
                    continue
                cfg = self.space.from_dict_values(obj["config"])
                observations.append((cfg,
                                     np.asarray(obj["per_query_latency_s"]),
                                     np.asarray(obj["per_query_cost_s"])))
        return TaskRecord(task_id=meta["task_id"],
                          meta=np.asarray(meta["meta_feature"], dtype=float),
                          queries=list(meta["queries"]),
                          observations=observations)

    def init_task(self, task_id: str, queries: list[str], meta_feature) -> None:
        d = self.task_dir(task_id)
        d.mkdir(parents=True, exist_ok=True)
        (d / "task.json").write_text(json.dumps({
            "task_id": task_id,
            "queries": list(queries),
            "meta_feature": [float(x) for x in meta_feature],
        }, indent=2))
        stale = d / "observations.jsonl"
        if stale.exists():  # a fresh task must not inherit old observations
            stale.unlink()

    def append_observation(self, task_id: str, cfg: Configuration,
                           latencies, costs, status: str,
                           fidelity: float) -> None:
        """Durable before returning: written, flushed, and fsynced."""
        path = self.task_dir(task_id) / "observations.jsonl"
        line = _obs_line(cfg, self.space, latencies, costs, status, fidelity)
        import os
        with open(path, "a") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def finalize_task(self, task_id: str, final_id: str | None = None) -> str:
        """Move the finished task to a permanent id so it can serve future
        runs as history. A duplicate id gets a timestamp suffix."""
        d = self.task_dir(task_id)
        if not d.exists():
            raise FileNotFoundError(f"task {task_id} was never initialized")
        if final_id is None:
            final_id = task_id if task_id != "current" else f"task-{int(time.time())}"
        target = self.task_dir(final_id)
        if target != d and target.exists():
            final_id = f"{final_id}-{int(time.time())}"
            target = self.task_dir(final_id)
        meta = json.loads((d / "task.json").read_text())
        meta["task_id"] = final_id
        (d / "task.json").write_text(json.dumps(meta, indent=2))
        if target != d:
            d.rename(target)
        return final_id

    def write_task(self, record: TaskRecord) -> None:
        """Persist a complete TaskRecord (used by the suite generator)."""
        task_id = record.task_id
        if self.task_dir(task_id).exists():
            task_id = f"{task_id}-{int(time.time())}"
        self.init_task(task_id, record.queries, record.meta)
        path = self.task_dir(task_id) / "observations.jsonl"
        with open(path, "w") as fh:
            for cfg, p, c in record.observations:
                fh.write(_obs_line(cfg, self.space, p, c, STATUS_OK, 1.0) + "\n")
