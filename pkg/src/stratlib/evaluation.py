"""LLM-as-judge scoring, satisfaction reports, and distribution-shift diagnostics."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Sequence

from .domain import Conversation, EntryStatus, Generator, Library, Speaker
from .gateway import (
    JUDGE_PARAMS,
    BackendConfig,
    ChatMessage,
    GenerationParams,
    chat,
)
from .prompts import render_transcript_text

log = logging.getLogger(__name__)


class JudgeParseError(ValueError):
    """No 1-5 rating found in the judge's reply, even after one re-prompt."""


class EvaluationError(RuntimeError):
    """Too many judge failures to report a trustworthy mean."""


class ExemplarSet(str, Enum):
    DEMANDING = "demanding"
    NON_DEMANDING = "non_demanding"


@dataclass
class JudgeConfig:
    """Judge backend plus the few-shot rating-5 exemplar conversations."""

    backend: BackendConfig
    exemplar_set: ExemplarSet
    exemplars: list[Conversation]

    def __post_init__(self):
        if not self.exemplars:
            raise ValueError("exemplars must be non-empty")
        want_demanding = self.exemplar_set is ExemplarSet.DEMANDING
        for conv in self.exemplars:
            if conv.generator is not Generator.TEACHER:
                raise ValueError("exemplars must be teacher-generated conversations")
            if conv.profile.demanding != want_demanding:
                raise ValueError(
                    f"exemplar {conv.id} difficulty does not match {self.exemplar_set.value}"
                )


@dataclass
class EvaluationReport:
    method_label: str
    baseline: ExemplarSet
    per_conversation: list[tuple[str, int]]
    mean: float
    n: int
    model_id: str = ""


@dataclass
class ShiftStats:
    mean_distance: float
    baseline_mean_distance: float
    pct_increase: float  # percent, (mean - baseline) / baseline * 100


def display_mean(mean: float) -> str:
    """Two decimals, half-up (the satisfaction-table display convention)."""
    return str(Decimal(repr(mean)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


JUDGE_SYSTEM = (
    "You evaluate customer service conversations. Rate the conversation from "
    "1 (very dissatisfied) to 5 (very satisfied), from the customer's perspective. "
    "Reply with the rating as a single integer."
)

JUDGE_REPROMPT = (
    "Your previous reply contained no rating. Reply with a single integer from 1 to 5."
)

_RATING_RE = re.compile(r"(?<!\d)[1-5](?!\d)")


def _parse_rating(reply: str) -> int | None:
    match = _RATING_RE.search(reply)
    return int(match.group()) if match else None


def _judge_user_message(conv: Conversation, judge: JudgeConfig) -> str:
    parts = ["Here are example conversations that merit a rating of 5:"]
    for i, ex in enumerate(judge.exemplars, start=1):
        parts.append(f"--- EXAMPLE {i} (rating: 5) ---\n{render_transcript_text(ex.utterances)}")
    parts.append(
        "--- CONVERSATION TO RATE ---\n"
        f"{render_transcript_text(conv.utterances)}\n\n"
        "Rate this conversation from 1 (very dissatisfied) to 5 (very satisfied)."
    )
    return "\n\n".join(parts)


def judge_conversation(conv: Conversation, judge: JudgeConfig,
                       params: GenerationParams = JUDGE_PARAMS) -> int:
    """Score one conversation 1..5; re-prompts exactly once on an unparseable reply."""
    if not conv.usable:
        raise ValueError(f"conversation {conv.id} ended in backend_error; not judgeable")
    system = ChatMessage("system", JUDGE_SYSTEM)
    user = ChatMessage("user", _judge_user_message(conv, judge))
    reply = chat(judge.backend, [system, user], params, role="judge")
    rating = _parse_rating(reply)
    if rating is None:
        messages = [system, user, ChatMessage("assistant", reply or "(empty)"),
                    ChatMessage("user", JUDGE_REPROMPT)]
        reply = chat(judge.backend, messages, params, role="judge")
        rating = _parse_rating(reply)
    if rating is None:
        raise JudgeParseError(f"no 1-5 rating in judge reply: {reply!r}")
    return rating


#: evaluate_set aborts when more than this fraction of judgings fail.
FAILURE_THRESHOLD = 0.2


def evaluate_set(convs: Sequence[Conversation], judge: JudgeConfig, *,
                 method_label: str = "", model_id: str = "",
                 params: GenerationParams = JUDGE_PARAMS) -> EvaluationReport:
    """Judge every conversation and report per-item ratings plus the mean."""
    if not convs:
        raise ValueError("conversation set must be non-empty")
    ratings: list[tuple[str, int]] = []
    failures = 0
    for conv in convs:
        try:
            ratings.append((conv.id, judge_conversation(conv, judge, params)))
        except JudgeParseError as exc:
            failures += 1
            log.warning("judge failed on %s: %s", conv.id, exc)
    if failures / len(convs) > FAILURE_THRESHOLD:
        raise EvaluationError(f"{failures}/{len(convs)} conversations failed judging")
    if not ratings:
        raise EvaluationError("no conversations were successfully judged")
    mean = sum(r for _, r in ratings) / len(ratings)
    return EvaluationReport(
        method_label=method_label,
        baseline=judge.exemplar_set,
        per_conversation=ratings,
        mean=mean,
        n=len(ratings),
        model_id=model_id,
    )


def shift_stats(deploy_log_distances: Sequence[float],
                baseline_distances: Sequence[float]) -> ShiftStats:
    """Mean retrieval distances and their percent increase over the baseline."""
    if not deploy_log_distances or not baseline_distances:
        raise ValueError("distance lists must be non-empty")
    mean = math.fsum(deploy_log_distances) / len(deploy_log_distances)
    baseline = math.fsum(baseline_distances) / len(baseline_distances)
    return ShiftStats(
        mean_distance=mean,
        baseline_mean_distance=baseline,
        pct_increase=(mean - baseline) / baseline * 100.0,
    )


def half_conversation_delta(original_full: float, ablated_full: float,
                            original_half: float, ablated_half: float
                            ) -> tuple[float, float]:
    """(delta_half, delta_full) rating drops in percent: (ablated - original)/original."""
    if original_full <= 0 or original_half <= 0:
        raise ValueError("original ratings must be > 0")
    delta_half = (ablated_half - original_half) / original_half * 100.0
    delta_full = (ablated_full - original_full) / original_full * 100.0
    return delta_half, delta_full


def keyword_strategy_share(lib: Library, keywords: Sequence[str]) -> float:
    """Fraction of non-retired entries whose strategy text contains any keyword."""
    live = [e for e in lib.entries if e.status is not EntryStatus.RETIRED]
    if not live:
        raise ValueError("library has no non-retired entries")
    if not keywords:
        return 0.0
    lowered = [kw.lower() for kw in keywords]
    hits = 0
    for entry in live:
        text = "\n".join(b.text for b in entry.strategy.bullets).lower()
        if any(kw in text for kw in lowered):
            hits += 1
    return hits / len(live)


def first_half(conv: Conversation) -> Conversation:
    """The first ceil(n/2) utterances, shortened to end on a customer utterance."""
    n = len(conv.utterances)
    if n < 2:
        raise ValueError("conversation too short: fragment would be empty")
    m = math.ceil(n / 2)
    while m > 0 and conv.utterances[m - 1].speaker is not Speaker.CUSTOMER:
        m -= 1
    if m == 0:
        m = 2  # shortest judgeable prefix
    return Conversation(
        id=f"{conv.id}-half",
        iteration=conv.iteration,
        generator=conv.generator,
        profile=conv.profile,
        utterances=list(conv.utterances[:m]),
        end_reason=conv.end_reason,
        half_flag=True,
    )


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "method_label": report.method_label,
        "baseline": report.baseline.value,
        "model_id": report.model_id,
        "n": report.n,
        "mean": report.mean,
        "mean_display": display_mean(report.mean),
        "per_conversation": [[cid, rating] for cid, rating in report.per_conversation],
    }


def render_report_tsv(reports: Sequence[EvaluationReport]) -> str:
    """Pivot reports into a methods x (model, baseline) satisfaction table."""
    columns: list[tuple[str, ExemplarSet]] = []
    for r in reports:
        key = (r.model_id, r.baseline)
        if key not in columns:
            columns.append(key)
    methods: list[str] = []
    for r in reports:
        if r.method_label not in methods:
            methods.append(r.method_label)
    cells = {(r.method_label, r.model_id, r.baseline): r for r in reports}
    header = ["method"] + [f"{model}|{baseline.value}" for model, baseline in columns]
    lines = ["\t".join(header)]
    for method in methods:
        row = [method]
        for model, baseline in columns:
            r = cells.get((method, model, baseline))
            row.append(display_mean(r.mean) if r else "-")
        lines.append("\t".join(row))
    return "\n".join(lines)


def render_report_json(reports: Sequence[EvaluationReport]) -> str:
    return json.dumps([report_to_dict(r) for r in reports], indent=2)
