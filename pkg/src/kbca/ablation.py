"""Variant grid runner: repeats with distinct seeds, summary table, CSV."""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .train import train

log = logging.getLogger(__name__)

GRID = {
    "det": {"variant": "det"},
    "det+hard_knowledge": {"variant": "det", "hard_knowledge": True},
    "bam+key": {"variant": "bam", "prior_source": "key"},
    "bam+knowledge": {"variant": "bam", "prior_source": "knowledge"},
}

BASELINES = {
    "text-only": {"variant": "det", "modalities": "text"},
    "speech-only": {"variant": "det", "modalities": "speech"},
}

VARIANTS = {**GRID, **BASELINES}


@dataclass
class RunResult:
    slot: int
    name: str
    seed: int
    fold: int
    ua: float
    wa: float
    best_epoch: int
    epochs: int


def plan(names, base_cfg, repeats, folds=0):
    """Ordered list of ``(slot, name, cfg, fold)``; run r of every config uses seed base+r."""
    runs = []
    for slot, name in enumerate(names):
        if name not in VARIANTS:
            raise KeyError(f"unknown ablation config {name!r}; choose from {sorted(VARIANTS)}")
        for r in range(repeats):
            for fold in range(folds) if folds else [-1]:
                runs.append((slot, name, base_cfg.replace(seed=base_cfg.seed + r, **VARIANTS[name]), fold))
    return runs


_worker_data = {}


def _dataset(root):
    if root not in _worker_data:
        _worker_data[root] = Dataset.load(root)
    return _worker_data[root]


def _run_one(job):
    root, slot, name, cfg, fold, k = job
    ds = _dataset(root)
    if fold >= 0:
        ds = ds.kfold(k, fold)
    _, rep = train(cfg, ds)
    return RunResult(slot, name, cfg.seed, fold, rep["test_ua"], rep["test_wa"], rep["best_epoch"], len(rep["epochs"]))


def run_ablation(root, base_cfg, names=tuple(GRID), repeats=3, folds=0, workers=1, progress=None):
    """Train every planned run on the dataset at ``root``.

    Results come back in plan order whatever the number of workers; each run
    derives all randomness from its own seed.
    """
    root = str(root)
    jobs = [(root, *run, folds) for run in plan(names, base_cfg, repeats, folds)]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for res in ex.map(_run_one, jobs):
                results.append(res)
                if progress:
                    progress(res)
    else:
        for job in jobs:
            res = _run_one(job)
            results.append(res)
            if progress:
                progress(res)
    return results


def summarize(results):
    """One row per grid slot, in slot order: mean and sample std."""
    groups = {}
    for r in results:
        groups.setdefault(r.slot, []).append(r)
    rows = []
    for slot in sorted(groups):
        g = groups[slot]
        ua = np.array([r.ua for r in g])
        wa = np.array([r.wa for r in g])
        ddof = 1 if len(g) > 1 else 0
        rows.append({
            "name": g[0].name,
            "runs": len(g),
            "ua_mean": float(ua.mean()),
            "ua_std": float(ua.std(ddof=ddof)),
            "wa_mean": float(wa.mean()),
            "wa_std": float(wa.std(ddof=ddof)),
        })
    return rows


CSV_FIELDS = ["name", "runs", "ua_mean", "ua_std", "wa_mean", "wa_std"]


def to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{r[k]:.6f}" if isinstance(r[k], float) else r[k]) for k in CSV_FIELDS})
    return buf.getvalue()


def to_table(rows):
    header = ["config", "runs", "UA", "WA"]
    body = [
        [r["name"], str(r["runs"]), f"{100 * r['ua_mean']:.2f} ± {100 * r['ua_std']:.2f}",
         f"{100 * r['wa_mean']:.2f} ± {100 * r['wa_std']:.2f}"]
        for r in rows
    ]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = []
    for k, line in enumerate([header] + body):
        cells = [line[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(line[1:], widths[1:])]
        lines.append("  ".join(cells))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
