"""Classification metrics (ACC, AUC, F1), the mastery-ordering agreement
score, seed aggregation, and the robustness / hyperparameter sweep harnesses.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError


def acc(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of thresholded scores matching the binary labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ContractError("acc on empty input")
    return float(np.mean((scores >= threshold).astype(np.int64) == labels))


def auc(scores, labels):
    """Mann-Whitney AUC via average ranks; ties count half.

    Returns None (not applicable) when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1(scores, labels, threshold: float = 0.5) -> float:
    """Harmonic mean of precision and recall on the positive class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ContractError("f1 on empty input")
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2 * precision * recall / (precision + recall))


def doa(mastery: np.ndarray, logs, q_matrix: np.ndarray):
    """Mastery-ordering agreement over held-out responses.

    For each concept, ordered student pairs whose mastery differs are
    scored by how often the higher-mastery student outperforms the other
    on shared exercises tagged with that concept; pairs with no
    disagreeing responses are skipped, as are concepts with no scorable
    pairs. Returns None when no concept is scorable.
    """
    mastery = np.asarray(mastery, dtype=np.float64)
    q_matrix = np.asarray(q_matrix)
    n_students, n_concepts = mastery.shape

    responses: dict[tuple, int] = {}
    for s, e, r in logs:
        responses[(s, e)] = r

    concept_scores = []
    for k in range(n_concepts):
        exercises = np.flatnonzero(q_matrix[:, k] == 1)
        if exercises.size == 0:
            continue
        # right[s, j] / wrong[s, j]: s answered exercises[j] correctly / not
        right = np.zeros((n_students, exercises.size))
        wrong = np.zeros((n_students, exercises.size))
        for j, e in enumerate(exercises):
            for s in range(n_students):
                r = responses.get((s, int(e)))
                if r == 1:
                    right[s, j] = 1.0
                elif r == 0:
                    wrong[s, j] = 1.0
        num = right @ wrong.T  # num[a, d] = #exercises with r_a=1, r_d=0
        den = num + wrong @ right.T
        higher = mastery[:, k][:, None] > mastery[:, k][None, :]
        eligible = higher & (den > 0)
        if not np.any(eligible):
            continue
        concept_scores.append(float(np.mean(num[eligible] / den[eligible])))
    return float(np.mean(concept_scores)) if concept_scores else None


def mean_std_str(values) -> str:
    """Format per-seed percentages as "74.46±0.18"."""
    values = np.asarray(values, dtype=np.float64)
    return f"{100 * values.mean():.2f}±{100 * values.std():.2f}"


def aggregate_seeds(per_seed: list) -> dict:
    """Aggregate per-seed metric dicts into mean±std strings."""
    out = {}
    for key in per_seed[0]:
        vals = [r[key] for r in per_seed if r[key] is not None]
        out[key] = mean_std_str(vals) if vals else "-"
    return out


def write_table(path, rows: list, columns: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(str(row.get(c, "")) for c in columns) + "\n")


def noise_sweep(cfg, ds, levels=(0.0, 0.05, 0.10, 0.15), seeds=(0, 1, 2, 3, 4),
                out_dir=None) -> list:
    """Retrain per (noise level, seed) and tabulate test metrics.

    The plotted quantity is test ACC per level; level 0 rows coincide with
    the plain comparative run under identical seeds.
    """
    from .training import train

    rows = []
    for level in levels:
        for seed in seeds:
            run_cfg = dataclasses.replace(cfg, noise_level=float(level), seed=int(seed))
            result = train(run_cfg, ds)
            rows.append({"noise_level": level, "seed": seed,
                         **{k: result.test_metrics[k]
                            for k in ("acc", "auc", "f1")}})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_table(os.path.join(out_dir, "noise_sweep.tsv"), rows,
                    ["noise_level", "seed", "acc", "auc", "f1"])
        _write_plot_series(os.path.join(out_dir, "noise_acc_series.tsv"), rows,
                           x_key="noise_level", y_key="acc")
    return rows


def rho_sweep(cfg, ds, rhos=(0.05, 0.1, 0.2, 0.4), levels=(0.0,),
              seeds=(0, 1, 2, 3, 4), out_dir=None) -> list:
    """Grid over the unconditional-loss weight, optionally crossed with
    noise levels; one row per (rho, level, seed)."""
    from .training import train

    rows = []
    for rho in rhos:
        for level in levels:
            for seed in seeds:
                run_cfg = dataclasses.replace(cfg, rho=float(rho),
                                              noise_level=float(level), seed=int(seed))
                result = train(run_cfg, ds)
                rows.append({"rho": rho, "noise_level": level, "seed": seed,
                             **{k: result.test_metrics[k]
                                for k in ("acc", "auc", "f1")}})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_table(os.path.join(out_dir, "rho_sweep.tsv"), rows,
                    ["rho", "noise_level", "seed", "acc", "auc", "f1"])
        _write_plot_series(os.path.join(out_dir, "rho_acc_series.tsv"), rows,
                           x_key="rho", y_key="acc", series_key="noise_level")
    return rows


def _write_plot_series(path, rows, x_key, y_key, series_key=None) -> None:
    """Per-series mean curves as plain value files (no rendering here)."""
    series: dict = {}
    for row in rows:
        key = row.get(series_key) if series_key else "all"
        series.setdefault(key, {}).setdefault(row[x_key], []).append(row[y_key])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"series\t{x_key}\tmean_{y_key}\n")
        for key in sorted(series, key=str):
            for x in sorted(series[key]):
                mean = float(np.mean(series[key][x]))
                fh.write(f"{key}\t{x}\t{mean}\n")
