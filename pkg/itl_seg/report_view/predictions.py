import logging
import os
from pathlib import Path
from typing import Dict, Union

import idx2numpy
import numpy as np

logger = logging.getLogger(__name__)

PREDICTION_SUFFIX = ".idx"


def prediction_path(pred_dir: Union[str, Path], site_id: str, case_id: str) -> Path:
    return Path(pred_dir) / f"{site_id}__{case_id}{PREDICTION_SUFFIX}"


def write_prediction(pred_dir: Union[str, Path], site_id: str, case_id: str, stack: np.ndarray) -> Path:
    """Store a DxHxW binary prediction stack as an unsigned-byte IDX tensor."""
    path = prediction_path(pred_dir, site_id, case_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    idx2numpy.convert_to_file(str(path), np.ascontiguousarray(stack, dtype=np.uint8))
    return path


def decode_predictions(pred_dir: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Decode prediction IDX files, keyed "<site>__<case>"."""
    predictions = {}
    for filename in sorted(os.listdir(pred_dir)):
        full_path = os.path.join(pred_dir, filename)
        if not (os.path.isfile(full_path) and filename.endswith(PREDICTION_SUFFIX)):
            continue
        key = filename[:-len(PREDICTION_SUFFIX)]
        try:
            predictions[key] = idx2numpy.convert_from_file(full_path)
        except Exception as e:
            logger.warning("Error decoding %s: %s", full_path, e)
    return predictions
