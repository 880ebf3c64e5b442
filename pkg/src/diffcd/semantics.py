"""Text-side augmentation: per-entity prompt generation, pluggable embedding
clients (deterministic mock or HTTP endpoint), embedding-file ingestion, and
PCA projection down to the model's latent dimension.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ResponseDataset
from .errors import ContractError, DataError

STUDENT_INSTRUCTION = (
    "You are an expert in {subject} education. Describe the current student's "
    "learning situation and mastery of knowledge concepts from their answer record.\n"
    "The information provided:\n"
    '{{"right_num": "Number of questions answered correctly", '
    '"right_skills": "Knowledge concepts included in correctly answered questions", '
    '"wrong_num": "Number of questions answered incorrectly", '
    '"wrong_skills": "Knowledge concepts included in incorrectly answered questions"}}\n'
    "Requirements: 1. Reply in JSON format with this structure: "
    '{{"summarization": "A summarization of the student\'s learning situation and '
    'mastery of knowledge concepts", "reasoning": "briefly explain your reasoning '
    'for the summarization"}} '
    "2. Keep the summarization under 200 words. 3. Keep the reasoning under 200 "
    "words. 4. Do not provide any text outside the JSON string.\n"
    "Here is the information:\n"
)

EXERCISE_INSTRUCTION = (
    "You are an expert in {subject} education. Describe the type of question at "
    "hand and the skills students need to solve it correctly.\n"
    "The question description is given as a JSON string:\n"
    '{{"skills": "Skill names relevant to this question", '
    '"question_diff": "The statistical difficulty of the question, represented by '
    'the overall correct rate of all students who answered it"}}\n'
    "Requirements: 1. Reply in JSON format with this structure: "
    '{{"summarization": "summary description of the question type", '
    '"reasoning": "briefly explain your reasoning for the summarization"}} '
    "2. Keep the summarization under 200 words. 3. Keep the reasoning under 200 "
    "words. 4. Do not provide any text outside the JSON string.\n"
    "Here is the information:\n"
)


@dataclass
class PromptBundle:
    student_inputs: list  # one dict per student
    exercise_inputs: list  # one dict per exercise
    subject: str = "elementary mathematics"

    def student_prompt(self, i: int) -> str:
        head = STUDENT_INSTRUCTION.format(subject=self.subject)
        return head + json.dumps(self.student_inputs[i], ensure_ascii=False)

    def exercise_prompt(self, j: int) -> str:
        head = EXERCISE_INSTRUCTION.format(subject=self.subject)
        return head + json.dumps(self.exercise_inputs[j], ensure_ascii=False)

    def dump(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        for i in range(len(self.student_inputs)):
            with open(os.path.join(out_dir, f"student_{i}.txt"), "w", encoding="utf-8") as fh:
                fh.write(self.student_prompt(i))
        for j in range(len(self.exercise_inputs)):
            with open(os.path.join(out_dir, f"exercise_{j}.txt"), "w", encoding="utf-8") as fh:
                fh.write(self.exercise_prompt(j))


def build_prompts(ds: ResponseDataset, log_indices=None,
                  subject: str = "elementary mathematics") -> PromptBundle:
    """Build per-student and per-exercise prompt inputs from response logs.

    Only the logs in `log_indices` (the training split) are consulted, so no
    validation or test labels leak into the generated text. Each response
    contributes one skills string: the exercise's concept names joined by
    "; ", which keeps right_num == len(right_skills).
    """
    names = ds.concept_names
    if len(names) != ds.num_concepts:
        raise ContractError("concept name missing for some concept id")
    idx = range(len(ds.logs)) if log_indices is None else log_indices

    def skills_of(e: int) -> str:
        return "; ".join(names[k] for k in np.flatnonzero(ds.q_matrix[e]))

    right: dict[int, list] = {i: [] for i in range(ds.num_students)}
    wrong: dict[int, list] = {i: [] for i in range(ds.num_students)}
    counts = {j: [0, 0] for j in range(ds.num_exercises)}  # [correct, total]
    for i in idx:
        s, e, r = ds.logs[i]
        (right if r == 1 else wrong)[s].append(skills_of(e))
        counts[e][0] += r
        counts[e][1] += 1

    student_inputs = [
        {
            "right_num": len(right[i]),
            "right_skills": right[i],
            "wrong_num": len(wrong[i]),
            "wrong_skills": wrong[i],
        }
        for i in range(ds.num_students)
    ]
    exercise_inputs = [
        {
            "skills": skills_of(j),
            "question_diff": f"{counts[j][0]}/{counts[j][1]}",
        }
        for j in range(ds.num_exercises)
    ]
    return PromptBundle(student_inputs, exercise_inputs, subject)


# ---------------------------------------------------------------------------
# embedding clients
# ---------------------------------------------------------------------------

class MockEmbeddingClient:
    """Deterministic stand-in: each prompt text hashes to a fixed vector."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed(self, texts) -> list:
        out = []
        for text in texts:
            digest = hashlib.sha256(f"{self.seed}:{text}".encode()).digest()
            key = int.from_bytes(digest[:16], "little")
            rng = np.random.Generator(np.random.Philox(key=key))
            out.append(rng.standard_normal(self.dim))
        return out


class HttpEmbeddingClient:
    """POSTs prompt batches to an embeddings endpoint (OpenAI-style schema)."""

    def __init__(self, endpoint: str, model: str, token_env: str = "EMBEDDING_API_TOKEN",
                 timeout: float = 30.0, max_retries: int = 3, batch_size: int = 16):
        self.endpoint = endpoint
        self.model = model
        self.token_env = token_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.batch_size = batch_size

    def embed(self, texts) -> list:
        import requests

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        out = []
        texts = list(texts)
        for start in range(0, len(texts), self.batch_size):
            chunk = texts[start:start + self.batch_size]
            payload = {"model": self.model, "input": chunk}
            delay = 1.0
            for attempt in range(self.max_retries):
                try:
                    resp = requests.post(self.endpoint, json=payload,
                                         headers=headers, timeout=self.timeout)
                    resp.raise_for_status()
                    data = resp.json()["data"]
                    out.extend(np.asarray(item["embedding"], dtype=np.float64)
                               for item in data)
                    break
                except Exception:
                    if attempt == self.max_retries - 1:
                        raise
                    time.sleep(delay)
                    delay *= 2.0
        return out


def fetch_embeddings(prompts, client) -> np.ndarray:
    """One raw embedding row per prompt; rejects dimension drift."""
    vectors = client.embed(list(prompts))
    if not vectors:
        raise DataError("no prompts to embed")
    dim = len(vectors[0])
    for i, v in enumerate(vectors):
        if len(v) != dim:
            raise DataError(f"embedding dimension drift at row {i}: {len(v)} != {dim}")
    return np.asarray(vectors, dtype=np.float64)


def write_embedding_file(path, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, row in enumerate(matrix):
            fh.write(f"{i}\t" + ",".join(repr(float(v)) for v in row) + "\n")


def read_embedding_file(path, expected_rows: int | None = None) -> np.ndarray:
    rows = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                id_part, vec_part = line.split("\t", 1)
                idx = int(id_part)
                vec = np.asarray([float(v) for v in vec_part.split(",")])
            except ValueError as exc:
                raise DataError(f"embedding file line {lineno}: {exc}") from exc
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DataError(f"embedding file line {lineno}: dimension drift")
            if idx in rows:
                raise DataError(f"embedding file line {lineno}: duplicate id {idx}")
            rows[idx] = vec
    n = expected_rows if expected_rows is not None else (max(rows) + 1 if rows else 0)
    missing = [i for i in range(n) if i not in rows]
    if missing:
        raise DataError(f"embedding file missing ids: {missing[:5]}")
    return np.stack([rows[i] for i in range(n)])


# ---------------------------------------------------------------------------
# PCA projection
# ---------------------------------------------------------------------------

@dataclass
class SemanticTable:
    students_raw: np.ndarray
    exercises_raw: np.ndarray
    students: np.ndarray = field(default=None)
    exercises: np.ndarray = field(default=None)
    student_basis: np.ndarray = field(default=None)
    exercise_basis: np.ndarray = field(default=None)

    def project(self, d: int) -> "SemanticTable":
        self.students, self.student_basis = pca_project(self.students_raw, d)
        self.exercises, self.exercise_basis = pca_project(self.exercises_raw, d)
        return self


def pca_project(raw: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Project centered rows onto the top-d right singular vectors.

    No whitening. Sign convention: the largest-magnitude entry of every
    basis column is positive. Rank-deficient inputs pad the basis with zero
    columns and warn.
    """
    raw = np.asarray(raw, dtype=np.float64)
    n, d_raw = raw.shape
    if n <= d:
        raise ContractError(f"need more rows ({n}) than components ({d})")
    if d_raw < d:
        raise ContractError(f"raw dimension {d_raw} < target {d}")
    centered = raw - raw.mean(axis=0, keepdims=True)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(n, d_raw) * np.finfo(np.float64).eps * (svals[0] if svals.size else 0.0)
    rank = int((svals > tol).sum())
    k = min(d, rank)
    basis = vt[:k].T.copy()
    for col in range(k):
        peak = np.argmax(np.abs(basis[:, col]))
        if basis[peak, col] < 0:
            basis[:, col] = -basis[:, col]
    if k < d:
        warnings.warn(f"data rank {rank} < {d}; padding basis with zero directions")
        basis = np.hstack([basis, np.zeros((d_raw, d - k))])
    return centered @ basis, basis
