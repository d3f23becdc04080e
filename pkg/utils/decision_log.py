import json
import os
from typing import Iterable, Optional

from .simenv import Grant


def dumps_record(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_jsonl(path: str, records: Iterable[dict]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        for record in records:
            f.write(dumps_record(record))
            f.write("\n")
    return path


def read_jsonl(path: str) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def grant_record(grant: Optional[Grant]) -> Optional[list[int]]:
    return None if grant is None else list(grant.as_tuple())


class DecisionLog:
    """Scheduling decisions of one run, in the order they were taken."""

    def __init__(self, scheduler: str):
        self.scheduler = scheduler
        self.records: list[dict] = []

    def __len__(self) -> int:
        return len(self.records)

    def record(
        self,
        timestamp_ms: int,
        service_id: str,
        event: str,
        algorithm: str,
        action: str,
        before: Optional[Grant] = None,
        after: Optional[Grant] = None,
        reward: Optional[float] = None,
        rollback: bool = False,
        **extra,
    ) -> dict:
        entry = {
            "scheduler": self.scheduler,
            "timestamp_ms": timestamp_ms,
            "service_id": service_id,
            "event": event,
            "algorithm": algorithm,
            "action": action,
            "before": grant_record(before),
            "after": grant_record(after),
            "reward": reward,
            "rollback": rollback,
        }
        entry.update(extra)
        self.records.append(entry)
        return entry

    def write(self, path: str) -> str:
        return write_jsonl(path, self.records)


def run_output_dir(results_dir: str, scenario: str, scheduler: str, seed: int) -> str:
    return os.path.join(results_dir, scenario, f"{scheduler}-seed{seed}")
