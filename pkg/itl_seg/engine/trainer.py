"""
Module trainer.py

This module contains the Engine that runs incremental-transfer training
phase by phase, the three reference schemes (isolated, mixed, sequential
fine-tuning), the component ablations and the training cost table.

Run directory layout (when an output directory is given):
    train_log.jsonl                 per-step and per-epoch loss records
    checkpoints/phaseNN_<site>.pt   trained bundle of every phase
    memory/phaseNN.json             memory manifest after every phase
    run.json                        RunRecord
    metrics.csv                     per-phase, per-site DSC / 95HD

"""

import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from itl_seg.data.augment import AugmentConfig, augment
from itl_seg.data.loader import ContextItem, SliceDataset, context_items, make_loader, to_tensors
from itl_seg.data.preprocess import holdout_validation
from itl_seg.data.types import SiteDataset
from itl_seg.engine.config import TrainConfig
from itl_seg.engine.results import PhaseResult, RunRecord
from itl_seg.engine.runlog import TrainingLog
from itl_seg.error import ConfigError, ITLError
from itl_seg.loss import LossConfig, compute_breakdown, site_loss
from itl_seg.memory import MemoryStore, sample_rehearsal_batch, save_memory_manifest, update_memory
from itl_seg.metrics import evaluate_site, write_metrics_csv
from itl_seg.model.bundle import ModelBundle, build_model, count_parameters, handoff
from itl_seg.model.checkpoint import save_checkpoint
from itl_seg.model.specs import DecoderSpec, EncoderSpec
from itl_seg.util import derive_seed, tensor_digest

logger = logging.getLogger(__name__)

ABLATION_MODES = ("pretrain_only", "model_loss_only", "both")
LOSS_KEYS = ("l_site", "l_target", "l_source", "l_model", "l_all")


def mixing_entropy(site_sequence: Sequence[str], fraction: float = 0.2) -> float:
    """Mean normalized site entropy over consecutive windows of `fraction` of the sequence.

    1.0 means every window holds all sites in equal shares.
    """
    seq = list(site_sequence)
    kinds = sorted(set(seq))
    if len(kinds) <= 1:
        return 1.0
    width = max(1, math.ceil(fraction * len(seq)))
    values = []
    for start in range(0, len(seq) - width + 1, width):
        window = seq[start:start + width]
        p = np.array([window.count(k) for k in kinds], dtype=np.float64) / len(window)
        p = p[p > 0]
        values.append(float(-(p * np.log(p)).sum() / np.log(len(kinds))))
    return float(np.mean(values))


def _mean_breakdowns(records: List[Dict[str, float]]) -> Dict[str, float]:
    return {k: float(np.mean([r[k] for r in records])) for k in LOSS_KEYS}


class Engine:
    """Phase loop of incremental-transfer learning and its baselines"""

    def __init__(self, config: TrainConfig, encoder_spec: EncoderSpec, decoder_spec: DecoderSpec,
                 loss_config: Optional[LossConfig] = None, augment_config: Optional[AugmentConfig] = None,
                 out_dir: Optional[Union[str, Path]] = None, progress: bool = False):
        self.config = config
        self.encoder_spec = encoder_spec
        self.decoder_spec = decoder_spec
        base = loss_config or LossConfig()
        self.loss_config = replace(base, alpha=config.alpha, delta=config.delta)
        self.augment_config = augment_config if augment_config is not None else AugmentConfig()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.progress = progress
        self.device = torch.device(config.device)
        self.log = TrainingLog(self.out_dir / "train_log.jsonl" if self.out_dir else None)

    def close(self):
        self.log.close()

    # Building blocks

    def _encoder_spec(self, config: TrainConfig) -> EncoderSpec:
        if config.ablation == "model_loss_only" and self.encoder_spec.pretrained:
            return replace(self.encoder_spec, pretrained=False, weights_path=None)
        return self.encoder_spec

    def _fresh_bundle(self, config: TrainConfig, site_id: str) -> ModelBundle:
        seed = derive_seed(config.seed, "model", site_id)
        return build_model(self._encoder_spec(config), self.decoder_spec, phase=1, seed=seed).to(self.device)

    def _split_items(self, site: SiteDataset, config: TrainConfig) -> Tuple[List[ContextItem], List[ContextItem]]:
        seed = derive_seed(config.seed, "validation", site.site_id)
        fit_ids, val_ids = holdout_validation(sorted(site.case_ids("train")), config.val_fraction, seed)
        return context_items(site, "train", fit_ids), context_items(site, "train", val_ids)

    def _rehearsal_tensors(self, store: MemoryStore, rng: np.random.Generator, config: TrainConfig):
        groups = sample_rehearsal_batch(store, config.rehearsal_batch_size, rng)
        batches = {}
        for site_id, exemplars in groups.items():
            pairs = [augment(e.context, e.sample.mask, self.augment_config, rng) for e in exemplars]
            x, y = to_tensors([p[0] for p in pairs], [p[1] for p in pairs])
            batches[site_id] = (x.to(self.device), y.to(self.device))
        return batches

    def _validation_losses(self, bundle: ModelBundle, items: List[ContextItem], config: TrainConfig) -> Optional[dict]:
        """Site-level loss of held-out current-site cases, evaluation mode."""
        if not items:
            return None
        was_training = bundle.training
        bundle.eval()
        losses = []
        try:
            with torch.no_grad():
                for start in range(0, len(items), config.batch_size):
                    chunk = items[start:start + config.batch_size]
                    x, y = to_tensors([c for _, c in chunk], [s.mask for s, _ in chunk])
                    loss = site_loss(bundle, x.to(self.device), y.to(self.device), self.loss_config.smoothing_eps)
                    losses.append((float(loss), len(chunk)))
        finally:
            bundle.train(was_training)
        l_site = sum(v * n for v, n in losses) / len(items)
        return {"l_site": l_site, "l_target": 0.0, "l_source": 0.0, "l_model": 0.0, "l_all": l_site}

    def _fit(self, bundle: ModelBundle, fit_items: List[ContextItem], val_items: List[ContextItem],
             store: MemoryStore, config: TrainConfig, label: str, audit_mixing: bool = False):
        """Optimize encoder and target decoder; returns (loss_trace, steps, mixing entropy)."""
        phase = bundle.phase_index
        torch.manual_seed(derive_seed(config.seed, "phase", phase, label))
        dataset = SliceDataset(fit_items, self.augment_config, seed=derive_seed(config.seed, "augment", phase, label))
        loader = make_loader(dataset, config.batch_size, shuffle=True,
                             seed=derive_seed(config.seed, "shuffle", phase, label), num_workers=config.num_workers)
        rng = np.random.default_rng(derive_seed(config.seed, "rehearsal", phase, label))
        rehearse = config.use_model_loss and phase > 1 and not store.is_empty()

        # Optimizer moments restart every phase
        optimizer = torch.optim.Adam(bundle.trainable_parameters(), lr=config.lr_init, betas=config.betas)
        scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=list(config.milestones),
                                                         gamma=config.lr_decay)
        trace, steps, entropy = [], 0, None
        bundle.train()
        epochs = tqdm(range(config.epochs), desc=f"phase {phase} [{label}]", disable=not self.progress, leave=False)
        for epoch in epochs:
            dataset.set_epoch(epoch)
            lr = optimizer.param_groups[0]["lr"]
            step_losses, order = [], []
            for x, y, idx in loader:
                memory = self._rehearsal_tensors(store, rng, config) if rehearse else {}
                breakdown = compute_breakdown(bundle, x.to(self.device), y.to(self.device), memory,
                                              self.loss_config, use_model_loss=config.use_model_loss)
                optimizer.zero_grad(set_to_none=True)
                breakdown.l_all.backward()
                optimizer.step()
                losses = breakdown.as_dict()
                step_losses.append(losses)
                self.log.log_step(phase, label, epoch, steps, lr, losses)
                steps += 1
                if audit_mixing and epoch == 0:
                    order.extend(int(i) for i in idx)
            if audit_mixing and epoch == 0:
                site_ids = dataset.site_ids()
                entropy = mixing_entropy([site_ids[i] for i in order])
            train = _mean_breakdowns(step_losses)
            val = self._validation_losses(bundle, val_items, config)
            trace.append({"epoch": epoch, "lr": lr, "train": train, "val": val})
            self.log.log_epoch(phase, label, epoch, lr, train, val)
            epochs.set_postfix(loss=f"{train['l_all']:.4f}")
            scheduler.step()
        return trace, steps, entropy

    def _source_digest(self, bundle: ModelBundle) -> Optional[str]:
        if bundle.source_decoder is None:
            return None
        state = bundle.source_decoder.state_dict()
        return tensor_digest(state[k] for k in sorted(state))

    def _save_checkpoint(self, bundle: ModelBundle, label: str) -> Optional[str]:
        if self.out_dir is None:
            return None
        path = self.out_dir / "checkpoints" / f"phase{bundle.phase_index:02d}_{label}.pt"
        save_checkpoint(bundle, path)
        return str(path.relative_to(self.out_dir))

    def _evaluate(self, bundle: ModelBundle, sites: Sequence[SiteDataset], config: TrainConfig):
        return {s.site_id: evaluate_site(bundle, s, config.threshold) for s in sites}

    def _finish(self, record: RunRecord) -> RunRecord:
        if self.out_dir is not None:
            record.save(self.out_dir / "run.json")
            write_metrics_csv(record.metric_rows(), self.out_dir / "metrics.csv")
        return record

    # Operations

    def run_phase(self, bundle: ModelBundle, site: SiteDataset, store: MemoryStore,
                  seen_sites: Optional[Sequence[SiteDataset]] = None,
                  config: Optional[TrainConfig] = None) -> Tuple[ModelBundle, PhaseResult, MemoryStore]:
        """Train one incremental phase; returns the handed-off bundle, the phase result and the updated memory."""
        config = config or self.config
        seen_sites = list(seen_sites) if seen_sites is not None else [site]
        phase = bundle.phase_index
        if site.site_id in store:
            raise ConfigError(f"Site {site.site_id} was already trained in an earlier phase")
        bundle = bundle.to(self.device)
        fit_items, val_items = self._split_items(site, config)
        digest_start = self._source_digest(bundle)
        logger.info("Phase %d: training on %s (%d slices, memory %d)", phase, site.site_id, len(fit_items),
                    store.total_size)

        trace, steps, _ = self._fit(bundle, fit_items, val_items, store, config, site.site_id)

        digest_end = self._source_digest(bundle)
        if digest_start != digest_end:
            raise ITLError(f"Source decoder changed during phase {phase}")
        metrics = self._evaluate(bundle, seen_sites, config)
        checkpoint = self._save_checkpoint(bundle, site.site_id)

        fit_cases = sorted({s.case_id for s, _ in fit_items})
        new_store = update_memory(store, site, np.random.default_rng(derive_seed(config.seed, "memory", site.site_id)),
                                  fit_case_ids=fit_cases)
        if self.out_dir is not None:
            save_memory_manifest(new_store, self.out_dir / "memory" / f"phase{phase:02d}.json")

        result = PhaseResult(
            phase_index=phase,
            trained_site=site.site_id,
            metrics=metrics,
            loss_trace=trace,
            steps=steps,
            train_samples=len(fit_items) + (store.total_size if config.use_model_loss else 0),
            memory_size=new_store.total_size,
            source_digest_start=digest_start,
            source_digest_end=digest_end,
            checkpoint=checkpoint,
        )
        for site_id, m in metrics.items():
            logger.info("Phase %d: %s DSC %.2f%% 95HD %.2f mm", phase, site_id, m.dsc_percent, m.hd95_mm)
        return handoff(bundle), result, new_store

    def run_itl(self, sites: Sequence[SiteDataset], config: Optional[TrainConfig] = None,
                initial_bundle: Optional[ModelBundle] = None, scheme: Optional[str] = None) -> RunRecord:
        """Train the sites in the given order, one phase each."""
        config = config or self.config
        if not sites:
            raise ConfigError("At least one site is needed")
        bundle = initial_bundle if initial_bundle is not None else self._fresh_bundle(config, sites[0].site_id)
        store = MemoryStore(gamma_percent=config.gamma_percent, selection_seed=config.seed)
        record = RunRecord(scheme=scheme or config.scheme, backbone=self.encoder_spec.kind, gamma=config.gamma_percent,
                           seed=config.seed, site_order=[s.site_id for s in sites], ablation=config.ablation)
        for i, site in enumerate(sites):
            trained_total = count_parameters(bundle)[0]
            bundle, result, store = self.run_phase(bundle, site, store, sites[:i + 1], config)
            record.results.append(result)
            record.per_phase_samples.append(result.train_samples)
            record.stored_parameters = trained_total
        return self._finish(record)

    def run_isolated(self, sites: Sequence[SiteDataset], config: Optional[TrainConfig] = None) -> RunRecord:
        """One fresh model per site, trained and evaluated on that site only."""
        config = config or self.config
        record = RunRecord(scheme="isolated", backbone=self.encoder_spec.kind, gamma=0.0, seed=config.seed,
                           site_order=[s.site_id for s in sites], ablation=config.ablation, models_stored=len(sites))
        total = 0
        for site in sites:
            bundle = self._fresh_bundle(config, site.site_id)
            total += count_parameters(bundle)[0]
            store = MemoryStore(gamma_percent=0.0, selection_seed=config.seed)
            _, result, _ = self.run_phase(bundle, site, store, [site], config)
            record.results.append(result)
            record.per_phase_samples.append(result.train_samples)
        record.stored_parameters = total
        return self._finish(record)

    def run_mixed(self, sites: Sequence[SiteDataset], config: Optional[TrainConfig] = None) -> RunRecord:
        """One model on the pooled, shuffled training data of every site."""
        config = config or self.config
        if not sites:
            raise ConfigError("At least one site is needed")
        fit_items, val_items = [], []
        for site in sites:
            fit, val = self._split_items(site, config)
            fit_items.extend(fit)
            val_items.extend(val)
        bundle = self._fresh_bundle(config, "mixed")
        store = MemoryStore(gamma_percent=0.0, selection_seed=config.seed)
        logger.info("Mixed training on %d pooled slices from %d sites", len(fit_items), len(sites))
        trace, steps, entropy = self._fit(bundle, fit_items, val_items, store, config, "mixed", audit_mixing=True)
        result = PhaseResult(
            phase_index=1,
            trained_site="mixed",
            metrics=self._evaluate(bundle, sites, config),
            loss_trace=trace,
            steps=steps,
            train_samples=len(fit_items),
            mixing_entropy=entropy,
            checkpoint=self._save_checkpoint(bundle, "mixed"),
        )
        record = RunRecord(scheme="mixed", backbone=self.encoder_spec.kind, gamma=0.0, seed=config.seed,
                           site_order=[s.site_id for s in sites], ablation=config.ablation, results=[result],
                           stored_parameters=count_parameters(bundle)[0], per_phase_samples=[len(fit_items)])
        return self._finish(record)

    def run_multi_lower_bound(self, sites: Sequence[SiteDataset], config: Optional[TrainConfig] = None) -> RunRecord:
        """Sequential fine-tuning: no memory and no model-level loss."""
        config = (config or self.config).with_overrides(gamma_percent=0.0, ablation="pretrain_only")
        return self.run_itl(sites, config, scheme="multi")

    def run_ablation(self, mode: str, sites: Sequence[SiteDataset], config: Optional[TrainConfig] = None) -> RunRecord:
        config = config or self.config
        if mode not in ABLATION_MODES:
            raise ConfigError(f"Unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")
        ablation = "none" if mode == "both" else mode
        return self.run_itl(sites, config.with_overrides(ablation=ablation), scheme="itl")

    def run(self, sites: Sequence[SiteDataset]) -> RunRecord:
        """Dispatch on the configured scheme and ablation."""
        scheme = self.config.scheme
        if scheme == "isolated":
            return self.run_isolated(sites)
        if scheme == "mixed":
            return self.run_mixed(sites)
        if scheme == "multi":
            return self.run_multi_lower_bound(sites)
        if self.config.ablation != "none":
            return self.run_ablation(self.config.ablation, sites)
        return self.run_itl(sites)


def report_costs(records: Sequence[RunRecord]) -> List[dict]:
    """One row per run: stored parameters, training-set size per phase and whether model size grows with sites."""
    rows = []
    for record in records:
        rows.append({
            "scheme": record.scheme,
            "backbone": record.backbone,
            "gamma": record.gamma,
            "stored_parameters": record.stored_parameters,
            "models_stored": record.models_stored,
            "per_phase_samples": ";".join(str(n) for n in record.per_phase_samples),
            "grows_with_sites": record.models_stored > 1,
        })
    return rows
