"""Long-term episodic memory and the per-episode frame cache."""

from __future__ import annotations

import itertools
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from avua.errors import DimensionMismatch, IoFailure
from avua.gateway import HashingEmbedder, cosine
from avua.types import Observation, Refinement, Trajectory

DEFAULT_K = 3
DEFAULT_MIN_SIMILARITY = 0.5
DIGEST_HEAD = 200


def memory_key(question_type: str, question_text: str) -> str:
    return f"{question_type}: {question_text}"


def digest_trajectory(tau: Trajectory) -> list[dict[str, str]]:
    return [
        {
            "action": s.action[:DIGEST_HEAD],
            "input": s.action_input.raw[:DIGEST_HEAD],
            "observation": s.observation[:DIGEST_HEAD],
        }
        for s in tau.steps
    ]


@dataclass
class MemoryRecord:
    id: str
    question_type: str
    question_text: str
    policy_raw: str
    trajectory_digest: list[dict[str, str]]
    refinement: Refinement
    verdict: bool
    confidence: int
    embedding: np.ndarray
    created_at: float
    final_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.question_type:
            raise ValueError("question_type must be non-empty")
        self.embedding = np.asarray(self.embedding, dtype=np.float64)

    def to_json(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "question_type": self.question_type,
            "question_text": self.question_text,
            "policy_raw": self.policy_raw,
            "trajectory_digest": self.trajectory_digest,
            "refinement": {"diagnosis": self.refinement.diagnosis,
                           "refined_plan": self.refinement.refined_plan,
                           "raw_text": self.refinement.raw_text},
            "verdict": self.verdict,
            "confidence": self.confidence,
            "final_answer": self.final_answer,
            "embedding": self.embedding.tolist(),
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "MemoryRecord":
        return cls(
            id=d["id"],
            question_type=d["question_type"],
            question_text=d["question_text"],
            policy_raw=d.get("policy_raw", ""),
            trajectory_digest=d.get("trajectory_digest", []),
            refinement=Refinement(**d["refinement"]),
            verdict=bool(d["verdict"]),
            confidence=int(d["confidence"]),
            embedding=np.asarray(d["embedding"], dtype=np.float64),
            created_at=float(d["created_at"]),
            final_answer=d.get("final_answer"),
        )


class LogicalClock:
    """Monotone counter standing in for wall time in deterministic runs."""

    def __init__(self, start: float = 0.0) -> None:
        self._counter = itertools.count()
        self._start = start

    def __call__(self) -> float:
        return self._start + float(next(self._counter))


class MemoryStore:
    """Append-only JSON-lines store, linearly scanned by cosine similarity.

    ``path=None`` keeps records in memory only. Reads take a snapshot of the
    record list, so a retrieval always sees a prefix of the appends.
    """

    def __init__(self, path: str | Path | None = None, embedder: HashingEmbedder | None = None,
                 min_similarity: float = DEFAULT_MIN_SIMILARITY,
                 clock: Callable[[], float] = time.time) -> None:
        self.path = Path(path) if path is not None else None
        self.embedder = embedder or HashingEmbedder()
        self.dim = self.embedder.dim
        self.min_similarity = min_similarity
        self.clock = clock
        self._records: list[MemoryRecord] = []
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        try:
            lines = self.path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read memory store {self.path}: {exc}") from exc
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = MemoryRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise IoFailure(f"{self.path}:{n}: malformed memory record ({exc})") from exc
            if rec.embedding.shape != (self.dim,):
                raise DimensionMismatch(f"{self.path}:{n}: embedding dim {rec.embedding.shape} != {self.dim}")
            self._records.append(rec)

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[MemoryRecord]:
        with self._lock:
            return list(self._records)

    def new_record(self, question_type: str, question_text: str, *, policy_raw: str = "",
                   trajectory: Trajectory | None = None, refinement: Refinement | None = None,
                   verdict: bool = False, confidence: int = 0,
                   final_answer: str | None = None) -> MemoryRecord:
        """Build a record whose embedding is keyed on type and question text."""
        return MemoryRecord(
            id="",
            question_type=question_type,
            question_text=question_text,
            policy_raw=policy_raw,
            trajectory_digest=digest_trajectory(trajectory) if trajectory else [],
            refinement=refinement or Refinement("", ""),
            verdict=verdict,
            confidence=confidence,
            embedding=self.embedder.embed(memory_key(question_type, question_text)),
            created_at=0.0,
            final_answer=final_answer,
        )

    def put(self, record: MemoryRecord) -> str:
        if record.embedding.shape != (self.dim,):
            raise DimensionMismatch(f"embedding dim {record.embedding.shape} != store dim {self.dim}")
        with self._lock:
            record.id = f"mem-{len(self._records):06d}"
            record.created_at = self.clock()
            if self.path is not None:
                try:
                    self.path.parent.mkdir(parents=True, exist_ok=True)
                    with self.path.open("a", encoding="utf-8") as fh:
                        fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
                        fh.flush()
                except OSError as exc:
                    raise IoFailure(f"cannot append to memory store {self.path}: {exc}") from exc
            self._records.append(record)
        return record.id

    def retrieve(self, question_type: str, question_text: str, k: int = DEFAULT_K,
                 only_successful: bool = False,
                 min_similarity: float | None = None) -> list[tuple[MemoryRecord, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        return self.retrieve_vector(self.embedder.embed(memory_key(question_type, question_text)), k,
                                    only_successful=only_successful, min_similarity=min_similarity)

    def retrieve_vector(self, query: np.ndarray, k: int = DEFAULT_K, only_successful: bool = False,
                        min_similarity: float | None = None) -> list[tuple[MemoryRecord, float]]:
        threshold = self.min_similarity if min_similarity is None else min_similarity
        snapshot = self.records()
        scored = []
        for seq, rec in enumerate(snapshot):
            if only_successful and not rec.verdict:
                continue
            sim = cosine(query, rec.embedding)
            if sim >= threshold:
                scored.append((sim, rec.created_at, seq, rec))
        # similarity descending, then newer first
        scored.sort(key=lambda t: (-t[0], -t[1], -t[2]))
        return [(rec, sim) for sim, _, _, rec in scored[:k]]


@dataclass
class ShortTermCache:
    """Observations already obtained this episode, keyed by (frame, tool)."""

    entries: dict[tuple[int, str], Observation] = field(default_factory=dict)

    def get(self, frame: int, tool: str) -> Observation | None:
        return self.entries.get((frame, tool))

    def put(self, frame: int, tool: str, obs: Observation) -> None:
        self.entries[(frame, tool)] = obs

    def frames(self) -> set[int]:
        return {f for f, _ in self.entries}

    def clear(self) -> None:
        self.entries.clear()
