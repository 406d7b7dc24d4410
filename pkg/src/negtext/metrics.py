"""Detection metrics and result export.

AUROC is the rank-based probability that a random ID score exceeds a
random OOD score (ties count one half). FPR95 sweeps the attained score
values for the largest threshold keeping ID true-positive rate at or
above 95% and reports the OOD fraction at or above it.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import InputError
from .scoring import ScoreRecord

HISTOGRAM_BINS = 50
SCORE_FMT = "%.9g"  # 9 significant digits in every CSV


@dataclass(frozen=True)
class MetricReport:
    auroc: float
    fpr95: float
    n_id: int
    n_ood: int
    per_dataset: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "auroc": self.auroc,
            "fpr95": self.fpr95,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
        }
        if self.per_dataset:
            out["per_dataset"] = self.per_dataset
        return out


def auroc(id_scores, ood_scores) -> float:
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise InputError("both ID and OOD scores are required")
    ranks = rankdata(np.concatenate([id_scores, ood_scores]))
    n_id = id_scores.size
    u = float(np.sum(ranks[:n_id])) - n_id * (n_id + 1) / 2.0
    return u / (n_id * ood_scores.size)


def fpr95(id_scores, ood_scores, tpr_target: float = 0.95) -> float:
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise InputError("both ID and OOD scores are required")
    # largest attained threshold with TPR(gamma) >= target; no interpolation
    candidates = np.unique(id_scores)[::-1]  # descending
    n = id_scores.size
    gamma = candidates[-1]
    for value in candidates:
        if np.count_nonzero(id_scores >= value) / n >= tpr_target:
            gamma = value
            break
    return float(np.count_nonzero(ood_scores >= gamma) / ood_scores.size)


def compute_report(id_scores, ood_scores) -> MetricReport:
    return MetricReport(
        auroc=auroc(id_scores, ood_scores),
        fpr95=fpr95(id_scores, ood_scores),
        n_id=len(id_scores),
        n_ood=len(ood_scores),
    )


def _fmt(x: float) -> str:
    return SCORE_FMT % x


def export_results(
    records: list[ScoreRecord],
    ground_truth: dict[str, str],
    out_dir,
) -> dict[str, Path]:
    """Write records CSV, histogram CSV, and a JSON metric report.

    The report is computed from the serialized (9-significant-digit)
    score values so that re-importing the CSV reproduces it exactly.
    """
    if not records:
        raise InputError("no records to export")
    missing = [r.image_id for r in records if r.image_id not in ground_truth]
    if missing:
        raise InputError(f"records without ground truth: {missing[:10]}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records_path = out_dir / "records.csv"
    with records_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["image_id", "s_nl", "s_ens", "s_vsnl", "s_ada", "predicted_class", "tag"]
        )
        for r in records:
            writer.writerow(
                [
                    r.image_id,
                    _fmt(r.s_nl),
                    _fmt(r.s_ens),
                    _fmt(r.s_vsnl),
                    _fmt(r.s_ada),
                    r.predicted_class,
                    ground_truth[r.image_id],
                ]
            )

    s_ada = np.array([float(_fmt(r.s_ada)) for r in records])
    tags = [ground_truth[r.image_id] for r in records]
    counts, edges = np.histogram(s_ada, bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    hist_path = out_dir / "histogram.csv"
    with hist_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for i, count in enumerate(counts):
            writer.writerow([_fmt(edges[i]), _fmt(edges[i + 1]), int(count)])

    out = {"records": records_path, "histogram": hist_path}
    id_scores = s_ada[[t == "ID" for t in tags]]
    ood_scores = s_ada[[t == "OOD" for t in tags]]
    if id_scores.size and ood_scores.size:
        report = compute_report(id_scores, ood_scores)
        report_path = out_dir / "report.json"
        report_path.write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True),
            encoding="utf-8",
        )
        out["report"] = report_path
    return out


def load_records_csv(path) -> tuple[list[ScoreRecord], dict[str, str]]:
    path = Path(path)
    records: list[ScoreRecord] = []
    tags: dict[str, str] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(
                ScoreRecord(
                    image_id=row["image_id"],
                    s_nl=float(row["s_nl"]),
                    s_ens=float(row["s_ens"]),
                    s_vsnl=float(row["s_vsnl"]),
                    s_ada=float(row["s_ada"]),
                    predicted_class=int(row["predicted_class"]),
                )
            )
            if "tag" in row and row["tag"]:
                tags[row["image_id"]] = row["tag"]
    return records, tags
