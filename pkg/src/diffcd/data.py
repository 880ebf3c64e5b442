"""Response-log ingestion, 7:1:2 splitting, and synthetic noise injection.

File formats:
  logs file      one ``student,exercise,correct`` per line (header optional)
  q-matrix file  one ``exercise,concept`` per line

Raw ids are re-indexed densely (sorted order of first appearance of the raw
values), which keeps loading independent of row order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .optim import named_stream


@dataclass
class ResponseDataset:
    num_students: int
    num_exercises: int
    num_concepts: int
    logs: list  # (student_id, exercise_id, correctness) triples
    q_matrix: np.ndarray  # binary (num_exercises, num_concepts)
    concept_names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.concept_names:
            self.concept_names = [f"concept_{k}" for k in range(self.num_concepts)]

    def validate(self) -> None:
        seen = set()
        for s, e, r in self.logs:
            if not (0 <= s < self.num_students and 0 <= e < self.num_exercises):
                raise DataError(f"log ({s},{e},{r}) out of range")
            if r not in (0, 1):
                raise DataError(f"correctness must be 0/1, got {r}")
            if (s, e) in seen:
                raise DataError(f"duplicate (student, exercise) pair ({s},{e})")
            seen.add((s, e))
        if self.q_matrix.shape != (self.num_exercises, self.num_concepts):
            raise DataError(f"q_matrix shape {self.q_matrix.shape} inconsistent")
        empty = np.flatnonzero(self.q_matrix.sum(axis=1) == 0)
        if empty.size:
            raise DataError(f"exercises with no concept: {empty[:5].tolist()}")


@dataclass
class SplitSpec:
    train: list
    val: list
    test: list
    seed: int

    def as_dict(self):
        return {"seed": self.seed, "train": self.train, "val": self.val, "test": self.test}


@dataclass
class NoiseSpec:
    level: float
    seed: int
    added_logs: list


def _parse_pairs(path, n_fields, what):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.replace("\t", ",").split(",")]
            if lineno == 1 and not all(_is_int(p) for p in parts):
                continue  # header
            if len(parts) != n_fields:
                raise DataError(f"{what} line {lineno}: expected {n_fields} fields, got {len(parts)}")
            if not all(_is_int(p) for p in parts):
                raise DataError(f"{what} line {lineno}: non-integer field in {line!r}")
            rows.append((lineno, tuple(int(p) for p in parts)))
    return rows


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


def load_dataset(logs_path, qmatrix_path, min_responses: int = 0,
                 concept_names: list | None = None) -> ResponseDataset:
    """Load logs and Q-matrix files into a densely indexed dataset.

    `min_responses` drops students with fewer responses; the filter runs
    after duplicate detection, before re-indexing.
    """
    log_rows = _parse_pairs(logs_path, 3, "logs")
    q_rows = _parse_pairs(qmatrix_path, 2, "q-matrix")
    if not log_rows:
        raise DataError(f"no response logs in {logs_path}")
    if not q_rows:
        raise DataError(f"no q-matrix entries in {qmatrix_path}")

    seen = {}
    for lineno, (s, e, r) in log_rows:
        if r not in (0, 1):
            raise DataError(f"logs line {lineno}: correctness must be 0/1, got {r}")
        if (s, e) in seen:
            raise DataError(
                f"logs line {lineno}: duplicate (student, exercise) pair "
                f"({s},{e}), first seen at line {seen[(s, e)]}"
            )
        seen[(s, e)] = lineno

    triples = [t for _, t in log_rows]
    if min_responses > 0:
        counts = {}
        for s, _, _ in triples:
            counts[s] = counts.get(s, 0) + 1
        triples = [t for t in triples if counts[t[0]] >= min_responses]
        if not triples:
            raise DataError("min_responses filter removed every log")

    q_pairs = {pair for _, pair in q_rows}
    raw_exercises_q = {e for e, _ in q_pairs}
    students = sorted({s for s, _, _ in triples})
    exercises = sorted({e for _, e, _ in triples} | raw_exercises_q)
    concepts = sorted({k for _, k in q_pairs})
    s_index = {raw: i for i, raw in enumerate(students)}
    e_index = {raw: i for i, raw in enumerate(exercises)}
    k_index = {raw: i for i, raw in enumerate(concepts)}

    q = np.zeros((len(exercises), len(concepts)), dtype=np.int64)
    for e_raw, k_raw in sorted(q_pairs):
        q[e_index[e_raw], k_index[k_raw]] = 1
    dangling = [e for e in {t[1] for t in triples} if q[e_index[e]].sum() == 0]
    if dangling:
        raise DataError(f"exercises with responses but no q-matrix concepts: {sorted(dangling)[:5]}")

    logs = [(s_index[s], e_index[e], r) for s, e, r in triples]
    names = concept_names or [f"concept_{k}" for k in concepts]
    ds = ResponseDataset(len(students), len(exercises), len(concepts), logs, q, names)
    ds.validate()
    return ds


def save_dataset(ds: ResponseDataset, logs_path, qmatrix_path) -> None:
    with open(logs_path, "w", encoding="utf-8") as fh:
        fh.write("student,exercise,correct\n")
        for s, e, r in ds.logs:
            fh.write(f"{s},{e},{r}\n")
    with open(qmatrix_path, "w", encoding="utf-8") as fh:
        fh.write("exercise,concept\n")
        for e in range(ds.num_exercises):
            for k in np.flatnonzero(ds.q_matrix[e]):
                fh.write(f"{e},{k}\n")


def split(ds: ResponseDataset, seed: int) -> SplitSpec:
    """Global uniform shuffle, then 70/10/20 by floor with remainder to test."""
    n = len(ds.logs)
    if n < 10:
        raise ContractError(f"need at least 10 logs to split, got {n}")
    order = named_stream(seed, "split").permutation(n)
    n_train = int(np.floor(0.7 * n))
    n_val = int(np.floor(0.1 * n))
    return SplitSpec(
        train=[int(i) for i in order[:n_train]],
        val=[int(i) for i in order[n_train:n_train + n_val]],
        test=[int(i) for i in order[n_train + n_val:]],
        seed=seed,
    )


def split_stratified(ds: ResponseDataset, seed: int) -> SplitSpec:
    """Per-student 70/10/20 split (alternative mode)."""
    rng = named_stream(seed, "split-stratified")
    by_student: dict[int, list] = {}
    for i, (s, _, _) in enumerate(ds.logs):
        by_student.setdefault(s, []).append(i)
    train, val, test = [], [], []
    for s in sorted(by_student):
        idx = np.array(by_student[s])
        idx = idx[rng.permutation(len(idx))]
        k1 = int(np.floor(0.7 * len(idx)))
        k2 = int(np.floor(0.1 * len(idx)))
        train.extend(int(i) for i in idx[:k1])
        val.extend(int(i) for i in idx[k1:k1 + k2])
        test.extend(int(i) for i in idx[k1 + k2:])
    return SplitSpec(train, val, test, seed)


def inject_noise(ds: ResponseDataset, level: float, seed: int,
                 split_spec: SplitSpec | None = None,
                 mode: str = "add") -> tuple[ResponseDataset, SplitSpec | None, NoiseSpec]:
    """Append synthetic response logs at the given noise level.

    Adds round(level * |correct|) new correct-labeled logs and
    round(level * |incorrect|) incorrect-labeled ones, each pairing a
    uniformly sampled student and exercise, rejection-resampled until the
    pair is unused. When a split is given, counts are computed from and
    new indices appended to the training portion only. `mode="flip"` flips
    labels of existing training logs instead of adding new ones.
    """
    if level == 0:
        return ds, split_spec, NoiseSpec(0.0, seed, [])
    if not (0 < level <= 0.5):
        raise ContractError(f"noise level must be in (0, 0.5], got {level}")
    rng = named_stream(seed, "noise")

    pool = split_spec.train if split_spec is not None else list(range(len(ds.logs)))
    pool_logs = [ds.logs[i] for i in pool]
    n_correct = sum(1 for _, _, r in pool_logs if r == 1)
    n_incorrect = len(pool_logs) - n_correct

    if mode == "flip":
        k = int(np.floor(level * len(pool_logs) + 0.5))
        chosen = rng.choice(len(pool), size=min(k, len(pool)), replace=False)
        new_logs = list(ds.logs)
        flipped = []
        for j in sorted(int(c) for c in chosen):
            s, e, r = new_logs[pool[j]]
            new_logs[pool[j]] = (s, e, 1 - r)
            flipped.append((s, e, 1 - r))
        out = ResponseDataset(ds.num_students, ds.num_exercises, ds.num_concepts,
                              new_logs, ds.q_matrix, ds.concept_names)
        return out, split_spec, NoiseSpec(level, seed, flipped)

    need = [(1, int(np.floor(level * n_correct + 0.5))),
            (0, int(np.floor(level * n_incorrect + 0.5)))]
    existing = {(s, e) for s, e, _ in ds.logs}
    added = []
    total_needed = sum(k for _, k in need)
    rejections = 0
    for label, count in need:
        for _ in range(count):
            while True:
                s = int(rng.integers(0, ds.num_students))
                e = int(rng.integers(0, ds.num_exercises))
                if (s, e) not in existing:
                    break
                rejections += 1
                if rejections > 10 * max(total_needed, 1):
                    raise DataError(
                        f"graph too dense to place {total_needed} noise pairs "
                        f"({rejections} rejections)"
                    )
            existing.add((s, e))
            added.append((s, e, label))

    new_logs = list(ds.logs) + added
    out = ResponseDataset(ds.num_students, ds.num_exercises, ds.num_concepts,
                          new_logs, ds.q_matrix, ds.concept_names)
    new_split = split_spec
    if split_spec is not None:
        new_split = SplitSpec(
            train=split_spec.train + list(range(len(ds.logs), len(new_logs))),
            val=list(split_spec.val),
            test=list(split_spec.test),
            seed=split_spec.seed,
        )
    return out, new_split, NoiseSpec(level, seed, added)
