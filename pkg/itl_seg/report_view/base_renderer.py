from abc import ABC, abstractmethod
import csv
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from itl_seg.metrics import boundary


def _with_extension(path, extension: str) -> Path:
    path = Path(path)
    return path if path.suffix == extension else path.parent / (path.name + extension)


class BaseRenderer(ABC):
    @abstractmethod
    def render(self, data, path: Path) -> Path:
        """Render the given data into a file at `path` and return the written path."""
        pass

    @property
    @abstractmethod
    def name(self) -> str:
        """Subclasses must provide a name property."""
        pass


class OverlayRenderer(BaseRenderer):
    """Grayscale slice with ground-truth (green) and predicted (red) contours.

    data: {"image": HxW float, "gt": HxW binary, "pred": HxW binary}
    """
    MIN_DISPLAY_HEIGHT = 256
    GT_COLOUR = (0, 255, 0)
    PRED_COLOUR = (255, 0, 0)

    def _prepare_image(self, image: np.ndarray) -> np.ndarray:
        lo, hi = float(image.min()), float(image.max())
        scaled = np.zeros_like(image, dtype=np.float64) if hi == lo else (image - lo) / (hi - lo)
        gray = (scaled * 255).round().astype(np.uint8)
        return np.repeat(gray[..., None], 3, axis=2)

    def render(self, data: Mapping[str, np.ndarray], path: Path) -> Path:
        rgb = self._prepare_image(np.asarray(data["image"], dtype=np.float64))
        rgb[boundary(data["gt"])] = self.GT_COLOUR
        rgb[boundary(data["pred"])] = self.PRED_COLOUR
        picture = Image.fromarray(rgb)

        scale_factor = max(1, int(np.ceil(self.MIN_DISPLAY_HEIGHT / picture.height)))
        if scale_factor > 1:
            picture = picture.resize((picture.width * scale_factor, picture.height * scale_factor), Image.Resampling.NEAREST)
        path = _with_extension(path, ".png")
        path.parent.mkdir(parents=True, exist_ok=True)
        picture.save(path)
        return path

    @property
    def name(self) -> str:
        return "Overlay Renderer"


class LossCurveRenderer(BaseRenderer):
    """Per-epoch train and validation loss of one or more runs, phases laid end to end.

    data: {label: RunRecord}
    """

    def _series(self, record, split: str) -> List[Optional[float]]:
        values = []
        for result in record.results:
            values.extend(result.epoch_losses(split, "l_all" if split == "train" else "l_site"))
        return values

    def render(self, data: Mapping, path: Path) -> Path:
        fig, axes = plt.subplots(1, 2, figsize=(11, 4), sharey=True)
        for label, record in data.items():
            for ax, split in zip(axes, ("train", "val")):
                ys = np.array([np.nan if v is None else v for v in self._series(record, split)], dtype=float)
                ax.plot(np.arange(1, len(ys) + 1), ys, label=label)
        boundaries = np.cumsum([len(r.loss_trace) for r in next(iter(data.values())).results])[:-1] if data else []
        for ax, title in zip(axes, ("training loss (L_all)", "validation loss (L_site)")):
            for b in boundaries:
                ax.axvline(b + 0.5, color="gray", linewidth=0.5, linestyle=":")
            ax.set_title(title)
            ax.set_xlabel("epoch")
            ax.grid(alpha=0.3)
        axes[0].set_ylabel("Dice loss")
        axes[0].legend(loc="upper right", fontsize="small")
        fig.tight_layout()
        path = _with_extension(path, ".png")
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=100)
        plt.close(fig)
        return path

    @property
    def name(self) -> str:
        return "Loss Curve Renderer"


class TableRenderer(BaseRenderer):
    """Rows of dictionaries as CSV.

    data: list of dicts sharing their keys
    """

    def render(self, data: Sequence[Dict], path: Path) -> Path:
        path = _with_extension(path, ".csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = list(data[0].keys()) if data else []
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in data:
                writer.writerow([f"{row[c]:.6f}" if isinstance(row[c], float) else row[c] for c in columns])
        return path

    @property
    def name(self) -> str:
        return "Table Renderer"
