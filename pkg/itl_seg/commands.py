"""
Module commands.py

This module contains the four command implementations behind the CLI:
synthesizing datasets, training, evaluating a checkpoint and building the
report bundle of finished runs.

"""

import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from itl_seg import RUNS_DIR
from itl_seg.config import ExperimentConfig, save_config
from itl_seg.data.io import load_site, write_site
from itl_seg.data.preprocess import check_shapes, preprocess_site
from itl_seg.data.synth import synthesize_sites
from itl_seg.data.types import SiteDataset
from itl_seg.engine.results import RunRecord
from itl_seg.engine.trainer import Engine
from itl_seg.error import ConfigError, ITLError
from itl_seg.metrics import evaluate_site, write_metrics_csv
from itl_seg.model.checkpoint import load_checkpoint
from itl_seg.report_view.base_renderer import LossCurveRenderer, OverlayRenderer, TableRenderer
from itl_seg.report_view.extract_renderers import load_renderer_classes
from itl_seg.report_view.predictions import write_prediction
from itl_seg.report_view.tables import (cost_table, forgetting_deltas, forgetting_table, ordering_comparison,
                                        scheme_comparison)
from itl_seg.util import is_nonempty_dir

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _prepare_output(out_dir: PathLike) -> Path:
    """Create an output directory, refusing to overwrite a non-empty one."""
    out_dir = Path(out_dir)
    if is_nonempty_dir(out_dir):
        raise ConfigError(f"Output directory {out_dir} is not empty; refusing to overwrite")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"Cannot create output directory {out_dir}: {e}") from e
    if not os.access(out_dir, os.W_OK):
        raise ConfigError(f"Output directory {out_dir} is not writable")
    return out_dir


def default_run_dir(config: ExperimentConfig) -> Path:
    t = config.train
    gamma = f"{t.gamma_percent:g}".replace(".", "p")
    name = f"{t.scheme}_{config.encoder.kind}_g{gamma}_{t.ablation}_s{t.seed}"
    return Path(os.environ.get("ITL_SEG_OUTPUT_ROOT") or RUNS_DIR) / name


def load_sites(config: ExperimentConfig) -> List[SiteDataset]:
    """Load (or synthesize) and preprocess every site, in the configured order."""
    data = config.data
    if data.manifests:
        sites = [load_site(m, shape=data.image_size, split_seed=data.split_seed) for m in data.manifests]
    elif data.synth:
        sites = [preprocess_site(s, data.image_size) for s in synthesize_sites(data.synth, data.image_size)]
    else:
        raise ConfigError("The config lists neither data.manifests nor data.synth")
    for site in sites:
        check_shapes(site, data.image_size)

    by_id = {s.site_id: s for s in sites}
    if len(by_id) != len(sites):
        raise ConfigError(f"Duplicate site ids: {[s.site_id for s in sites]}")
    if config.site_order is None:
        return sites
    unknown = [s for s in config.site_order if s not in by_id]
    if unknown:
        raise ConfigError(f"site_order names unknown sites: {unknown}")
    return [by_id[s] for s in config.site_order]


def cmd_synth_data(config: ExperimentConfig, out_dir: PathLike) -> Path:
    """Write one manifest directory per synthetic site spec."""
    if not config.data.synth:
        raise ConfigError("synth-data needs at least one entry in data.synth")
    out_dir = _prepare_output(out_dir)
    for site in synthesize_sites(config.data.synth, config.data.image_size):
        manifest = write_site(site, out_dir / site.site_id)
        logger.info("Wrote %s", manifest)
    return out_dir


def cmd_train(config: ExperimentConfig, out_dir: Optional[PathLike] = None, progress: bool = True) -> Path:
    """Train according to the configured scheme; returns the run directory."""
    run_dir = Path(out_dir or config.output_dir or default_run_dir(config))
    sites = load_sites(config)
    run_dir = _prepare_output(run_dir)
    config = config.with_output_dir(run_dir)
    save_config(config, run_dir / "config.yaml")

    engine = Engine(config.train, config.encoder, config.decoder, config.loss_config(), config.augment,
                    out_dir=run_dir, progress=progress)
    try:
        record = engine.run(sites)
    finally:
        engine.close()
    logger.info("Finished %s run with %d phase result(s) in %s", record.scheme, len(record), run_dir)
    return run_dir


def cmd_evaluate(config: ExperimentConfig, checkpoint: PathLike, out_dir: PathLike) -> Path:
    """Evaluate a checkpoint on the configured sites; writes metrics.csv, IDX predictions and overlays."""
    bundle = load_checkpoint(checkpoint, device=config.train.device)
    sites = load_sites(config)
    out_dir = _prepare_output(out_dir)

    rows = []
    overlay = OverlayRenderer()
    for site in sites:
        predictions: Dict[str, np.ndarray] = {}
        metrics = evaluate_site(bundle, site, config.train.threshold, predictions_out=predictions)
        rows.append({
            "scheme": config.train.scheme,
            "backbone": bundle.encoder_spec.kind,
            "gamma": float(config.train.gamma_percent),
            "phase": bundle.phase_index,
            "site": site.site_id,
            "dsc_percent": metrics.dsc_percent,
            "hd95_mm": metrics.hd95_mm,
        })
        for case_id, stack in predictions.items():
            write_prediction(out_dir / "predictions", site.site_id, case_id, stack)
            slices = site.cases("test")[case_id]
            mid = len(slices) // 2
            overlay.render({"image": slices[mid].image, "gt": slices[mid].mask, "pred": stack[mid]},
                           out_dir / "overlays" / f"{site.site_id}__{case_id}")
        logger.info("%s: DSC %.2f%% 95HD %.2f mm", site.site_id, metrics.dsc_percent, metrics.hd95_mm)
    return write_metrics_csv(rows, out_dir / "metrics.csv")


def _load_record(run_dir: Path) -> RunRecord:
    path = run_dir / "run.json"
    if not path.is_file():
        raise ConfigError(f"{run_dir} is not a completed run (no run.json)")
    return RunRecord.load(path)


def cmd_report(run_dirs: Sequence[PathLike], out_dir: PathLike, renderer_paths: Sequence[str] = ()) -> Path:
    """Build the report bundle of one or more finished runs."""
    if not run_dirs:
        raise ConfigError("report needs at least one run directory")
    names = [Path(d).name for d in run_dirs]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise ConfigError(f"Run directories share a name: {duplicates}")
    records = {Path(d).name: _load_record(Path(d)) for d in run_dirs}
    out_dir = _prepare_output(out_dir)
    table, curves = TableRenderer(), LossCurveRenderer()

    for name, record in records.items():
        table.render(forgetting_table(record, "dsc_percent"), out_dir / "forgetting" / f"{name}_dsc")
        table.render(forgetting_table(record, "hd95_mm"), out_dir / "forgetting" / f"{name}_hd95")
        table.render(forgetting_deltas(record), out_dir / "forgetting" / f"{name}_deltas")
        curves.render({name: record}, out_dir / "loss_curves" / name)
    if len(records) > 1:
        curves.render(records, out_dir / "loss_curves" / "overlay")

    all_records = list(records.values())
    table.render(scheme_comparison(all_records), out_dir / "scheme_comparison")
    table.render(cost_table(all_records), out_dir / "costs")
    ordering = ordering_comparison(all_records)
    if ordering:
        table.render(ordering, out_dir / "ordering_comparison")

    for path in renderer_paths:
        for cls in load_renderer_classes(path):
            renderer = cls()
            try:
                written = renderer.render(records, out_dir / "plugins" / cls.__name__)
            except ITLError:
                raise
            except Exception as e:
                raise ConfigError(f"Renderer {renderer.name} failed: {e}") from e
            logger.info("%s wrote %s", renderer.name, written)
    return out_dir
