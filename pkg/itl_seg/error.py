"""
Module error.py

This module contains the exception hierarchy used across itl_seg.

"""


class ITLError(Exception):
    """Base class for all itl_seg errors"""


class DatasetError(ITLError, ValueError):
    """A manifest, slice file or in-memory dataset violates its contract"""

    def __init__(self, message, path=None, case_id=None, slice_index=None):
        parts = [message]
        if path is not None:
            parts.append(f"path={path}")
        if case_id is not None:
            parts.append(f"case_id={case_id}")
        if slice_index is not None:
            parts.append(f"slice_index={slice_index}")
        super().__init__(parts[0] if len(parts) == 1 else f"{parts[0]} ({', '.join(parts[1:])})")
        self.message = message
        self.path = path
        self.case_id = case_id
        self.slice_index = slice_index


class ConfigError(ITLError, ValueError):
    """Invalid or unknown configuration value"""


class CheckpointError(ITLError, RuntimeError):
    """Missing, corrupt or mismatching checkpoint / weights file"""


class MemoryStoreError(ITLError, KeyError):
    """Invalid operation on the exemplar memory"""

    def __str__(self):
        # KeyError quotes its argument; keep the plain message
        return str(self.args[0]) if self.args else ""
