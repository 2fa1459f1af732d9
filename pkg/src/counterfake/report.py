"""Merge finished runs into one comparison report.

Each run directory contributes its provenance, its evaluation metrics and the
tail of its training log. The merged output is a comparison table (CSV and
JSON) ordered white-box, gray-box, black-box, plus a bar chart of mean AIH by
variant and an overlay of the total generator loss curves.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigurationError, IngestionError
from .experiments import LOG_COLUMNS, SETTING_BY_VARIANT, VARIANTS

TAIL_FRACTION = 0.1


def _read_log(path: str) -> dict[str, list[float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list[float]] = {c: [] for c in LOG_COLUMNS}
        for row in reader:
            for c in LOG_COLUMNS:
                cols[c].append(float(row[c]))
    return cols


def collect_run(run_dir: str) -> dict:
    """Gather one run's provenance, metrics and loss-log tail."""
    if not os.path.isdir(run_dir):
        raise IngestionError(f"not a run directory: {run_dir}")
    out: dict = {"dir": run_dir, "variant": None, "setting": None,
                 "aggregates": {}, "tail": {}, "curve": None}
    prov_path = os.path.join(run_dir, "provenance.json")
    if os.path.exists(prov_path):
        with open(prov_path) as fh:
            prov = json.load(fh)
        out["variant"] = prov.get("variant")
        out["setting"] = prov.get("setting")
        out["seed"] = prov.get("seed")
    metrics_path = os.path.join(run_dir, "reports", "metrics.json")
    if os.path.exists(metrics_path):
        with open(metrics_path) as fh:
            metrics = json.load(fh)
        out["aggregates"] = metrics.get("aggregates", {})
        out["variant"] = out["variant"] or metrics.get("variant")
    log_path = os.path.join(run_dir, "logs", "train_log.csv")
    if os.path.exists(log_path):
        cols = _read_log(log_path)
        n = max(1, int(np.ceil(TAIL_FRACTION * len(cols["step"]))))
        out["tail"] = {c: float(np.mean(cols[c][-n:])) for c in LOG_COLUMNS[1:]}
        out["curve"] = {"step": cols["step"], "total_G": cols["total_G"]}
    if out["variant"] is None:
        raise IngestionError(f"{run_dir} has neither provenance nor metrics naming a variant")
    out["setting"] = out["setting"] or SETTING_BY_VARIANT.get(out["variant"], "custom")
    return out


def _variant_order(name: str) -> tuple[int, str]:
    known = list(VARIANTS)
    return (known.index(name), name) if name in known else (len(known), name)


COMPARISON_COLUMNS = ("variant", "setting", "images", "aih_mean", "aih_std",
                      "ati_mean", "ati_std", "total_G_tail", "adv_tail", "edge_tail")


def merge_reports(run_dirs: list[str], out_dir: str) -> dict:
    """Merge runs into comparison.csv / comparison.json plus two plots.

    Two runs claiming the same variant label would produce an ambiguous
    table, so that is a configuration error. A single run passes through
    unchanged as a one-row table.
    """
    runs = [collect_run(d) for d in run_dirs]
    seen: dict[str, str] = {}
    for run in runs:
        if run["variant"] in seen:
            raise ConfigurationError(
                f"duplicate variant {run['variant']!r} in {seen[run['variant']]} and {run['dir']}")
        seen[run["variant"]] = run["dir"]
    runs.sort(key=lambda r: _variant_order(r["variant"]))

    rows = []
    for run in runs:
        agg = run["aggregates"]
        tail = run["tail"]
        rows.append({
            "variant": run["variant"], "setting": run["setting"],
            "images": agg.get("count"),
            "aih_mean": agg.get("aih_mean"), "aih_std": agg.get("aih_std"),
            "ati_mean": agg.get("ati_mean"), "ati_std": agg.get("ati_std"),
            "total_G_tail": tail.get("total_G"), "adv_tail": tail.get("adv"),
            "edge_tail": tail.get("edge"),
        })

    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "comparison.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_COLUMNS)
        for row in rows:
            writer.writerow(["" if row[c] is None else
                             (f"{row[c]:.9g}" if isinstance(row[c], float) else row[c])
                             for c in COMPARISON_COLUMNS])
    json_path = os.path.join(out_dir, "comparison.json")
    with open(json_path, "w") as fh:
        json.dump({"rows": rows}, fh, sort_keys=True, indent=2)
        fh.write("\n")

    with_aih = [r for r in rows if r["aih_mean"] is not None]
    if with_aih:
        fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(with_aih)), 3.2), dpi=100)
        names = [r["variant"] for r in with_aih]
        means = [r["aih_mean"] for r in with_aih]
        stds = [r["aih_std"] or 0.0 for r in with_aih]
        ax.bar(range(len(names)), means, yerr=stds, capsize=3, color="#4878cf")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right")
        ax.set_ylabel("mean AIH")
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "aih_by_variant.png"), metadata={"Software": None})
        plt.close(fig)

    with_curves = [r for r in runs if r["curve"]]
    if with_curves:
        fig, ax = plt.subplots(figsize=(5.0, 3.2), dpi=100)
        for run in with_curves:
            ax.plot(run["curve"]["step"], run["curve"]["total_G"], lw=1.0,
                    label=run["variant"])
        ax.set_xlabel("step")
        ax.set_ylabel("total_G")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "total_G_by_variant.png"), metadata={"Software": None})
        plt.close(fig)

    return {"rows": rows, "csv": csv_path, "json": json_path}
