"""Exact nearest-scenario lookup and strategy-text aggregation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .domain import BulletKind, EntryStatus, Library, LibraryEntry
from .gateway import BackendConfig, ChatMessage, GatewayError, GenerationParams, chat

log = logging.getLogger(__name__)


class EmptyIndexError(LookupError):
    """Retrieval against a library with no retrievable entries."""


@dataclass
class VectorIndex:
    """Immutable snapshot of non-retired entry embeddings for exact search."""

    dimension: int
    entry_ids: list[int]
    matrix: np.ndarray  # shape (n, dimension), unit rows
    snapshot_version: int = 0

    def __len__(self) -> int:
        return len(self.entry_ids)


@dataclass
class RetrievalResult:
    hits: list[tuple[int, float]]  # (entry_id, distance), distances non-decreasing
    query_id: str = ""


def cosine_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """1 - dot(a, b) for unit vectors, clamped to [0, 2]."""
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    dot = float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))
    return min(2.0, max(0.0, 1.0 - dot))


def build_index(lib: Library, snapshot_version: int = 0, *,
                expected_model_id: Optional[str] = None) -> VectorIndex:
    """Index every non-retired entry; refuses mixed embedding models."""
    if expected_model_id is not None and lib.embedding_model_id != expected_model_id:
        raise ValueError(
            f"library embeddings come from {lib.embedding_model_id!r}, "
            f"query embedder is {expected_model_id!r}; refusing mixed-model retrieval"
        )
    ids: list[int] = []
    rows: list[list[float]] = []
    dim: Optional[int] = None
    for entry in lib.entries:
        if entry.status is EntryStatus.RETIRED:
            continue
        if entry.scenario.embedding is None:
            raise ValueError(f"entry {entry.entry_id} has no embedding")
        if dim is None:
            dim = len(entry.scenario.embedding)
        elif len(entry.scenario.embedding) != dim:
            raise ValueError(
                f"entry {entry.entry_id}: dimension {len(entry.scenario.embedding)} != {dim}"
            )
        ids.append(entry.entry_id if entry.entry_id is not None else -1)
        rows.append(entry.scenario.embedding)
    matrix = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, dim or 0))
    return VectorIndex(dimension=dim or 0, entry_ids=ids, matrix=matrix,
                       snapshot_version=snapshot_version)


def nearest(index: VectorIndex, query: Sequence[float], k: int = 1,
            query_id: str = "") -> RetrievalResult:
    """The k nearest rows by cosine distance; ties broken by ascending entry_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        raise EmptyIndexError("index is empty")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.dimension,):
        raise ValueError(f"query dimension {q.shape} != index dimension {index.dimension}")
    dists = 1.0 - index.matrix @ q
    np.clip(dists, 0.0, 2.0, out=dists)
    pairs = sorted(zip(index.entry_ids, dists.tolist()), key=lambda p: (p[1], p[0]))
    return RetrievalResult(hits=[(eid, d) for eid, d in pairs[:k]], query_id=query_id)


def estimate_tokens(text: str) -> int:
    """Tokenizer-free estimate: ceil(characters / 4)."""
    return math.ceil(len(text) / 4)


def _render_lines(entries: Sequence[LibraryEntry]) -> list[str]:
    lines: list[str] = []
    seen: set[str] = set()
    n = 0
    for entry in entries:
        for b in entry.strategy.bullets:
            if b.text in seen:
                continue
            seen.add(b.text)
            n += 1
            tag = "DO" if b.kind is BulletKind.DO else "AVOID"
            lines.append(f"{n}. [{tag}] {b.text}")
    return lines


SUMMARIZE_SYSTEM = (
    "You condense lists of customer-service strategy directives. Keep the most "
    "important DO and AVOID items, preserve the two groups, and stay within the size limit."
)


def aggregate_strategies(entries: Sequence[LibraryEntry], token_budget: int,
                         summarizer: Optional[BackendConfig],
                         params: GenerationParams = GenerationParams()) -> str:
    """Merge strategy bullets from distance-ordered entries into one prompt text.

    Exact-text repeats are dropped. Over-budget output goes through one
    summarizer call; if that fails (or still overflows), fall back to truncating
    at the last whole bullet under budget.
    """
    lines = _render_lines(entries)
    text = "\n".join(lines)
    if estimate_tokens(text) <= token_budget:
        return text

    def truncate() -> str:
        kept: list[str] = []
        for line in lines:
            candidate = "\n".join(kept + [line])
            if estimate_tokens(candidate) > token_budget:
                break
            kept.append(line)
        return "\n".join(kept)

    if summarizer is None:
        return truncate()
    try:
        summary = chat(summarizer, [
            ChatMessage("system", SUMMARIZE_SYSTEM),
            ChatMessage("user",
                        f"Summarize these strategy directives into at most {token_budget} "
                        f"tokens (~{token_budget * 4} characters), as numbered "
                        f"\"n. [DO|AVOID] ...\" lines:\n{text}"),
        ], params)
    except GatewayError as exc:
        log.warning("strategy summarizer failed (%s); truncating at whole-bullet boundary", exc)
        return truncate()
    if estimate_tokens(summary) > token_budget:
        log.warning("summarizer output still over budget; truncating at whole-bullet boundary")
        return truncate()
    return summary
