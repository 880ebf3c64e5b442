"""Synthetic benchmark data: DINA-style responses with guess/slip noise and a
long-tail distribution of per-student response counts."""

from __future__ import annotations

import numpy as np

from .data import ResponseDataset
from .optim import named_stream


def generate_dina(num_students: int = 300, num_exercises: int = 200,
                  num_concepts: int = 10, guess: float = 0.1, slip: float = 0.1,
                  seed: int = 0, min_logs: int = 10, max_logs: int | None = None) -> ResponseDataset:
    """Ground-truth mastery drives responses: a student answers correctly
    with probability 1-slip when they master every concept the exercise
    requires, and with probability `guess` otherwise.

    Per-student response counts follow a clipped log-normal, so a few
    students answer many exercises while most answer few.
    """
    rng = named_stream(seed, "dina")
    max_logs = max_logs or num_exercises

    q = np.zeros((num_exercises, num_concepts), dtype=np.int64)
    for e in range(num_exercises):
        k = int(rng.integers(1, 4))
        q[e, rng.choice(num_concepts, size=k, replace=False)] = 1

    skill_prob = rng.uniform(0.2, 0.8, size=num_students)
    mastery = (rng.random((num_students, num_concepts))
               < skill_prob[:, None]).astype(np.int64)

    counts = np.clip(np.exp(rng.normal(3.3, 0.9, size=num_students)),
                     min_logs, max_logs).astype(np.int64)

    logs = []
    for s in range(num_students):
        exercises = rng.choice(num_exercises, size=int(counts[s]), replace=False)
        for e in sorted(int(x) for x in exercises):
            required = np.flatnonzero(q[e])
            masters = bool(np.all(mastery[s, required] == 1))
            p = 1.0 - slip if masters else guess
            logs.append((s, e, int(rng.random() < p)))

    # every exercise must carry at least one concept; drop unanswered ones is
    # unnecessary since q covers all exercises by construction
    ds = ResponseDataset(num_students, num_exercises, num_concepts, logs, q)
    ds.validate()
    return ds
