import hashlib
import json
import logging
import os
import sys
import zlib
from pathlib import Path
from typing import Any, Iterable, Union

import torch

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: Union[int, str] = logging.INFO) -> None:
    """Configure the root logger with a single stream handler."""
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)


def stable_hash(text: str) -> int:
    """Process-independent 32-bit hash of a string (python's hash() is salted)."""
    return zlib.crc32(text.encode("utf-8"))


def derive_seed(*parts: Any) -> int:
    """Combine seed material into one deterministic 63-bit seed."""
    digest = hashlib.sha256(repr(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def tensor_digest(tensors: Iterable[torch.Tensor]) -> str:
    """sha256 over the raw bytes of a sequence of tensors."""
    h = hashlib.sha256()
    for t in tensors:
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def write_json(path: Union[str, Path], obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=False)
        f.write("\n")


def read_json(path: Union[str, Path]) -> Any:
    with open(path, "r") as f:
        return json.load(f)


def is_nonempty_dir(path: Union[str, Path]) -> bool:
    return os.path.isdir(path) and len(os.listdir(path)) > 0
