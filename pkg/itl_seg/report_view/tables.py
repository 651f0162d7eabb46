"""
Module tables.py

This module contains the report tables built from RunRecords: the
phase x site forgetting table, the scheme comparison across seeds, the site
ordering comparison and the training cost table.

"""

from collections import OrderedDict
from typing import Dict, List, Sequence

import numpy as np

from itl_seg.engine.results import RunRecord
from itl_seg.engine.trainer import report_costs
from itl_seg.metrics import forgetting_matrix


def _order_label(site_order: Sequence[str]) -> str:
    return ">".join(site_order)


def forgetting_table(record: RunRecord, attr: str = "dsc_percent") -> List[dict]:
    """Wide lower-triangular table: one row per phase, one column per site, blank before a site is learned."""
    fm = forgetting_matrix(record.results)
    rows = []
    for phase in fm.phases:
        row = {"phase": phase}
        for site in fm.sites:
            m = fm.get(phase, site)
            row[site] = getattr(m, attr) if m is not None else ""
        rows.append(row)
    return rows


def forgetting_deltas(record: RunRecord) -> List[dict]:
    return forgetting_matrix(record.results).to_rows()


def _group(records: Sequence[RunRecord], key) -> Dict[tuple, List[RunRecord]]:
    groups: Dict[tuple, List[RunRecord]] = OrderedDict()
    for record in sorted(records, key=lambda r: (r.config_key, r.seed)):
        groups.setdefault(key(record), []).append(record)
    return groups


def scheme_comparison(records: Sequence[RunRecord]) -> List[dict]:
    """Final per-site metrics of each configuration, mean and std over seeds."""
    rows = []
    for (scheme, backbone, gamma, ablation, order), group in _group(records, lambda r: r.config_key).items():
        finals = [r.final_metrics() for r in group]
        for site in order:
            dsc = [f[site].dsc_percent for f in finals if site in f]
            hd = [f[site].hd95_mm for f in finals if site in f]
            if not dsc:
                continue
            rows.append({
                "scheme": scheme,
                "backbone": backbone,
                "gamma": float(gamma),
                "ablation": ablation,
                "site_order": _order_label(order),
                "site": site,
                "n_seeds": len(dsc),
                "dsc_mean": float(np.mean(dsc)),
                "dsc_std": float(np.std(dsc)),
                "hd95_mean": float(np.mean(hd)),
                "hd95_std": float(np.std(hd)),
            })
    return rows


def ordering_comparison(records: Sequence[RunRecord]) -> List[dict]:
    """Final metrics per site order, for configurations run under more than one order."""
    by_config = _group(records, lambda r: (r.scheme, r.backbone, r.gamma, r.ablation))
    rows = []
    for (scheme, backbone, gamma, ablation), group in by_config.items():
        orders = OrderedDict()
        for r in group:
            orders.setdefault(tuple(r.site_order), []).append(r)
        if len(orders) < 2:
            continue
        for order, runs in orders.items():
            finals = [r.final_metrics() for r in runs]
            site_dsc = {s: float(np.mean([f[s].dsc_percent for f in finals])) for s in order}
            site_hd = {s: float(np.mean([f[s].hd95_mm for f in finals])) for s in order}
            for site in sorted(order):
                rows.append({"scheme": scheme, "backbone": backbone, "gamma": float(gamma),
                             "site_order": _order_label(order), "site": site,
                             "dsc_mean": site_dsc[site], "hd95_mean": site_hd[site]})
            rows.append({"scheme": scheme, "backbone": backbone, "gamma": float(gamma),
                         "site_order": _order_label(order), "site": "average",
                         "dsc_mean": float(np.mean(list(site_dsc.values()))),
                         "hd95_mean": float(np.mean(list(site_hd.values())))})
    return rows


def cost_table(records: Sequence[RunRecord]) -> List[dict]:
    """One cost row per configuration (seeds collapsed)."""
    firsts = [group[0] for group in _group(records, lambda r: r.config_key).values()]
    return report_costs(firsts)
