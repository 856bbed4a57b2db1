"""The per-scenario refinement loop: respond, compare, critique, apply deltas."""

from __future__ import annotations

import logging
from typing import Optional

from .domain import (
    BulletKind,
    CritiqueDelta,
    DeltaKind,
    EntryStatus,
    LibraryEntry,
    RefinementRecord,
    Scenario,
    StrategyBullet,
    StrategyPrompt,
)
from .gateway import (
    AGENT_PARAMS,
    BackendConfig,
    ChatMessage,
    GenerationParams,
    ProtocolError,
    chat,
)
from .prompts import render_agent_messages, render_strategy_text, render_transcript_text

log = logging.getLogger(__name__)


class CritiqueFormatError(ProtocolError):
    """The teacher's critique did not follow the directive grammar."""


class DeltaValidationError(ValueError):
    """A delta references bullet ids missing from the current prompt."""


def teacher_respond(scenario: Scenario, *, backend: BackendConfig, base,
                    params: GenerationParams = AGENT_PARAMS) -> str:
    """The teacher's continuation of the scenario, from the base prompt only."""
    return chat(backend, render_agent_messages(base, None, scenario.utterances),
                params, role="teacher")


def student_respond(scenario: Scenario, strategy: StrategyPrompt, *,
                    backend: BackendConfig, base,
                    params: GenerationParams = AGENT_PARAMS) -> str:
    """The student's continuation, conditioned on the current strategy bullets."""
    messages = render_agent_messages(base, render_strategy_text(strategy),
                                     scenario.utterances)
    return chat(backend, messages, params, role="student")


def parse_critique(raw: str) -> CritiqueDelta:
    """Parse the line-oriented critique grammar.

    NO_CHANGES
    ADD DO|AVOID <text>
    MOD <bullet_id> <text>
    DEL <bullet_id>
    """
    adds: list[StrategyBullet] = []
    removes: list[int] = []
    modifies: list[tuple[int, str]] = []
    saw_no_changes = False
    lines = [ln.strip() for ln in raw.splitlines() if ln.strip()]
    if not lines:
        raise CritiqueFormatError("empty critique", payload=raw)
    for line in lines:
        if line == "NO_CHANGES":
            saw_no_changes = True
            continue
        head, _, rest = line.partition(" ")
        if head == "ADD":
            kind_word, _, text = rest.partition(" ")
            if kind_word not in ("DO", "AVOID") or not text.strip():
                raise CritiqueFormatError(f"bad ADD directive: {line!r}", payload=raw)
            kind = BulletKind.DO if kind_word == "DO" else BulletKind.AVOID
            adds.append(StrategyBullet(0, kind, text.strip()))
        elif head == "MOD":
            id_word, _, text = rest.partition(" ")
            if not id_word.isdigit() or not text.strip():
                raise CritiqueFormatError(f"bad MOD directive: {line!r}", payload=raw)
            modifies.append((int(id_word), text.strip()))
        elif head == "DEL":
            if not rest.strip().isdigit():
                raise CritiqueFormatError(f"bad DEL directive: {line!r}", payload=raw)
            removes.append(int(rest.strip()))
        else:
            raise CritiqueFormatError(f"unknown directive: {line!r}", payload=raw)
    if saw_no_changes:
        if adds or removes or modifies:
            raise CritiqueFormatError("NO_CHANGES mixed with edit directives", payload=raw)
        return CritiqueDelta(kind=DeltaKind.NO_CHANGES)
    return CritiqueDelta(kind=DeltaKind.UPDATE, adds=adds, removes=removes, modifies=modifies)


def validate_delta(delta: CritiqueDelta, prompt: StrategyPrompt) -> None:
    known = prompt.bullet_ids()
    referenced = set(delta.removes) | {bid for bid, _ in delta.modifies}
    missing = referenced - known
    if missing:
        raise DeltaValidationError(
            f"delta references unknown bullet ids {sorted(missing)}; prompt has {sorted(known)}"
        )


CRITIQUE_INSTRUCTIONS = (
    "Compare the student's response with your own response to the same scenario. "
    "Propose updates to the strategy bullets instructing what they should or "
    "should not do. Reply with one directive per line, using exactly this format:\n"
    "  NO_CHANGES\n"
    "  ADD DO <text>\n"
    "  ADD AVOID <text>\n"
    "  MOD <bullet_id> <text>\n"
    "  DEL <bullet_id>\n"
    "Reply NO_CHANGES (alone) when the student's response needs no further updates."
)

REPROMPT_NOTE = (
    "Your previous reply did not follow the required directive format. "
    "Answer again using only NO_CHANGES / ADD / MOD / DEL lines."
)


def _critique_user_message(scenario: Scenario, teacher_out: str, student_out: str,
                           current: StrategyPrompt) -> str:
    bullets = render_strategy_text(current) or "(none)"
    return (
        f"SCENARIO:\n{render_transcript_text(scenario.utterances)}\n\n"
        f"YOUR RESPONSE (the target):\n{teacher_out}\n\n"
        f"STUDENT RESPONSE:\n{student_out}\n\n"
        f"CURRENT STRATEGY BULLETS:\n{bullets}\n\n"
        f"{CRITIQUE_INSTRUCTIONS}"
    )


def critique(scenario: Scenario, teacher_out: str, student_out: str,
             current: StrategyPrompt, *, backend: BackendConfig,
             params: GenerationParams = AGENT_PARAMS) -> tuple[CritiqueDelta, str]:
    """Ask the teacher to compare responses and emit a delta; one re-prompt on bad format.

    Returns (delta, raw_text). Unknown bullet-id references raise
    DeltaValidationError without a re-prompt.
    """
    if not teacher_out.strip() or not student_out.strip():
        raise ValueError("both responses must be non-empty")
    system = ChatMessage("system", "You are the teacher reviewing a student customer-service agent.")
    user = ChatMessage("user", _critique_user_message(scenario, teacher_out, student_out, current))
    raw = chat(backend, [system, user], params, role="teacher")
    try:
        delta = parse_critique(raw)
    except CritiqueFormatError:
        log.info("critique parse failed; re-prompting once")
        retry = ChatMessage("user", f"{REPROMPT_NOTE}\n\nYour previous reply was:\n{raw}")
        raw = chat(backend, [system, user, ChatMessage("assistant", raw or "(empty)"), retry],
                   params, role="teacher")
        delta = parse_critique(raw)
    validate_delta(delta, current)
    return delta, raw


def apply_delta(prompt: StrategyPrompt, delta: CritiqueDelta) -> StrategyPrompt:
    """Removes, then modifies, then appends adds with fresh ids; bumps revision.

    A no_changes delta returns the prompt unchanged (same revision). Deleted ids
    are never reused: fresh ids continue from the prompt's high-water mark.
    """
    if delta.kind is DeltaKind.NO_CHANGES:
        return prompt
    validate_delta(delta, prompt)
    bullets = [b for b in prompt.bullets if b.bullet_id not in set(delta.removes)]
    mods = dict(delta.modifies)
    bullets = [
        StrategyBullet(b.bullet_id, b.kind, mods[b.bullet_id]) if b.bullet_id in mods else b
        for b in bullets
    ]
    next_id = prompt.max_bullet_id
    for add in delta.adds:
        next_id += 1
        bullets.append(StrategyBullet(next_id, add.kind, add.text))
    return StrategyPrompt(bullets=bullets, revision=prompt.revision + 1, max_bullet_id=next_id)


def replay_history(history: list[RefinementRecord]) -> StrategyPrompt:
    """Re-apply every recorded delta from the empty prompt (audit oracle)."""
    prompt = StrategyPrompt()
    for record in history:
        prompt = apply_delta(prompt, record.delta)
    return prompt


def teach_scenario(scenario: Scenario, max_rounds: int, *,
                   teacher_backend: BackendConfig,
                   student_backend: BackendConfig,
                   base,
                   params: GenerationParams = AGENT_PARAMS,
                   created_iteration: int = 1,
                   entry_id: Optional[int] = None) -> LibraryEntry:
    """Refine a strategy prompt for one scenario until NO_CHANGES or the round cap.

    The teacher's reference response is computed once and reused across rounds.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    teacher_out = teacher_respond(scenario, backend=teacher_backend, base=base, params=params)
    prompt = StrategyPrompt()
    history: list[RefinementRecord] = []
    for round_no in range(1, max_rounds + 1):
        student_out = student_respond(scenario, prompt, backend=student_backend,
                                      base=base, params=params)
        delta, raw = critique(scenario, teacher_out, student_out, prompt,
                              backend=teacher_backend, params=params)
        history.append(RefinementRecord(round_no, student_out, teacher_out, raw, delta))
        if delta.kind is DeltaKind.NO_CHANGES:
            break
        prompt = apply_delta(prompt, delta)
    return LibraryEntry(
        scenario=scenario,
        strategy=prompt,
        history=history,
        status=EntryStatus.MACHINE_GENERATED,
        created_iteration=created_iteration,
        entry_id=entry_id,
    )
