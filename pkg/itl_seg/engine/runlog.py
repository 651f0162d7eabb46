import json
import logging
from pathlib import Path
from typing import List, Optional, Union

logger = logging.getLogger(__name__)


class TrainingLog:
    """JSON-lines training log that also keeps its records in memory"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.records: List[dict] = []
        self._path = Path(path) if path is not None else None
        self._file = None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self._path, "a")

    @property
    def path(self) -> Optional[Path]:
        return self._path

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self._file is not None:
            self._file.write(json.dumps(record) + "\n")

    def log_step(self, phase: int, site: str, epoch: int, step: int, lr: float, losses: dict) -> None:
        self.write({"kind": "step", "phase": phase, "site": site, "epoch": epoch, "step": step, "lr": lr, **losses})

    def log_epoch(self, phase: int, site: str, epoch: int, lr: float, train: dict, val: Optional[dict]) -> None:
        self.write({"kind": "epoch", "phase": phase, "site": site, "epoch": epoch, "lr": lr,
                    "train": train, "val": val})
        if self._file is not None:
            self._file.flush()

    def steps(self, phase: Optional[int] = None) -> List[dict]:
        return [r for r in self.records if r["kind"] == "step" and (phase is None or r["phase"] == phase)]

    def epochs(self, phase: Optional[int] = None) -> List[dict]:
        return [r for r in self.records if r["kind"] == "epoch" and (phase is None or r["phase"] == phase)]

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_training_log(path: Union[str, Path]) -> List[dict]:
    with open(path, "r") as f:
        return [json.loads(line) for line in f if line.strip()]
