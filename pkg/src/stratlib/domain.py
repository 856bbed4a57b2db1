"""Domain types: conversations, scenarios, strategy prompts, and the library."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class Speaker(str, Enum):
    AGENT = "agent"
    CUSTOMER = "customer"


class Generator(str, Enum):
    TEACHER = "teacher"
    STUDENT = "student"


class EndReason(str, Enum):
    CUSTOMER_HANGUP = "customer_hangup"
    MAX_TURNS = "max_turns"
    BACKEND_ERROR = "backend_error"


class SocialStyle(str, Enum):
    DRIVER = "Driver"
    ANALYTICAL = "Analytical"
    AMIABLE = "Amiable"
    EXPRESSIVE = "Expressive"


class Emotion(str, Enum):
    CALM = "calm"
    CONFUSED = "confused"
    CONCERNED = "concerned"
    FRUSTRATED = "frustrated"


class BulletKind(str, Enum):
    DO = "do"
    AVOID = "avoid"


class EntryStatus(str, Enum):
    MACHINE_GENERATED = "machine_generated"
    HUMAN_EDITED = "human_edited"
    HUMAN_APPROVED = "human_approved"
    RETIRED = "retired"


class DeltaKind(str, Enum):
    NO_CHANGES = "no_changes"
    UPDATE = "update"


@dataclass(frozen=True)
class Utterance:
    """One turn of dialogue. Agent turn k and customer turn k share turn_index k."""

    speaker: Speaker
    text: str
    turn_index: int

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("utterance text must be non-empty")
        if self.turn_index < 1:
            raise ValueError("turn_index must be >= 1")


@dataclass(frozen=True)
class CustomerProfile:
    """Customer persona parameters: social style, initial emotion, difficulty."""

    social_style: SocialStyle
    initial_emotion: Emotion
    demanding: bool


def all_profiles() -> list[CustomerProfile]:
    """The full 4 x 4 x 2 = 32 profile grid, in a stable order."""
    return [
        CustomerProfile(style, emotion, demanding)
        for style in SocialStyle
        for emotion in Emotion
        for demanding in (False, True)
    ]


@dataclass(frozen=True)
class BasePrompt:
    """Fixed agent instruction shared by teacher and student: role, goal, constraints."""

    role: str
    goal: str
    constraints: tuple[str, ...]

    def __post_init__(self):
        if not self.role.strip() or not self.goal.strip():
            raise ValueError("role and goal must be non-empty")
        if not self.constraints or any(not c.strip() for c in self.constraints):
            raise ValueError("constraints must be a non-empty list of non-empty items")


def validate_alternation(utterances: list[Utterance]) -> None:
    """Utterances must alternate starting with the agent, with paired turn indices."""
    for pos, utt in enumerate(utterances):
        expected_speaker = Speaker.AGENT if pos % 2 == 0 else Speaker.CUSTOMER
        if utt.speaker is not expected_speaker:
            raise ValueError(
                f"utterance {pos}: expected {expected_speaker.value}, got {utt.speaker.value}"
            )
        expected_index = pos // 2 + 1
        if utt.turn_index != expected_index:
            raise ValueError(
                f"utterance {pos}: expected turn_index {expected_index}, got {utt.turn_index}"
            )


@dataclass
class Conversation:
    """A full agent-customer transcript with generator provenance."""

    id: str
    iteration: int
    generator: Generator
    profile: CustomerProfile
    utterances: list[Utterance]
    end_reason: EndReason
    half_flag: bool = False  # set when the transcript is a judging fragment

    def __post_init__(self):
        if self.iteration < 1:
            raise ValueError("iteration must be >= 1")
        validate_alternation(self.utterances)

    def customer_turns(self) -> int:
        """Number of completed customer turns."""
        return sum(1 for u in self.utterances if u.speaker is Speaker.CUSTOMER)

    @property
    def usable(self) -> bool:
        return self.end_reason is not EndReason.BACKEND_ERROR


#: Tolerance on the unit-norm invariant for stored embeddings.
NORM_TOLERANCE = 1e-6


def _check_unit_norm(values: list[float]) -> None:
    norm = math.sqrt(math.fsum(v * v for v in values))
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ValueError(f"embedding norm {norm!r} is not 1 within {NORM_TOLERANCE}")


@dataclass
class Scenario:
    """A transcript prefix ending on a customer utterance, used as a retrieval key."""

    id: str
    source_conversation: str
    k: int
    utterances: list[Utterance]
    embedding: Optional[list[float]] = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.utterances or self.utterances[-1].speaker is not Speaker.CUSTOMER:
            raise ValueError("scenario must end on a customer utterance")
        validate_alternation(self.utterances)
        if self.embedding is not None:
            _check_unit_norm(self.embedding)


@dataclass(frozen=True)
class StrategyBullet:
    """One imperative do/avoid directive. bullet_id 0 marks a not-yet-assigned add."""

    bullet_id: int
    kind: BulletKind
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("bullet text must be non-empty")


@dataclass
class StrategyPrompt:
    """Ordered strategy bullets with a revision counter.

    max_bullet_id is a high-water mark so deleted bullet ids are never reused.
    """

    bullets: list[StrategyBullet] = field(default_factory=list)
    revision: int = 0
    max_bullet_id: int = 0

    def __post_init__(self):
        ids = [b.bullet_id for b in self.bullets]
        if len(ids) != len(set(ids)):
            raise ValueError("bullet_ids must be unique within a prompt")
        if self.revision < 0:
            raise ValueError("revision must be >= 0")
        if ids and self.max_bullet_id < max(ids):
            self.max_bullet_id = max(ids)

    def bullet_ids(self) -> set[int]:
        return {b.bullet_id for b in self.bullets}


@dataclass
class CritiqueDelta:
    """A parsed teacher critique: bullets to add, remove, or rewrite."""

    kind: DeltaKind
    adds: list[StrategyBullet] = field(default_factory=list)
    removes: list[int] = field(default_factory=list)
    modifies: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind is DeltaKind.NO_CHANGES and (self.adds or self.removes or self.modifies):
            raise ValueError("no_changes delta must carry no edits")
        if self.kind is DeltaKind.UPDATE and not (self.adds or self.removes or self.modifies):
            raise ValueError("update delta must carry at least one edit")


@dataclass
class RefinementRecord:
    """One round of the teaching loop: responses, raw critique, parsed delta."""

    round: int
    student_response: str
    teacher_response: str
    critique_raw: str
    delta: CritiqueDelta

    def __post_init__(self):
        if self.round < 1:
            raise ValueError("round must be >= 1")


@dataclass
class EditRecord:
    editor: str
    timestamp: str  # ISO 8601, UTC
    prior_revision: int


@dataclass
class LibraryEntry:
    """A scenario paired with its strategy prompt, refinement history, and audit state."""

    scenario: Scenario
    strategy: StrategyPrompt
    history: list[RefinementRecord] = field(default_factory=list)
    status: EntryStatus = EntryStatus.MACHINE_GENERATED
    created_iteration: int = 1
    edit_log: list[EditRecord] = field(default_factory=list)
    entry_id: Optional[int] = None  # assigned on append

    def __post_init__(self):
        rounds = [r.round for r in self.history]
        if rounds != list(range(1, len(rounds) + 1)):
            raise ValueError("refinement rounds must be consecutive from 1")


LIBRARY_SCHEMA_VERSION = 1


@dataclass
class Library:
    """The scenario-strategy library; n counts non-retired entries."""

    embedding_model_id: str
    context_tag: str
    entries: list[LibraryEntry] = field(default_factory=list)
    schema_version: int = LIBRARY_SCHEMA_VERSION

    def __post_init__(self):
        ids = [e.entry_id for e in self.entries if e.entry_id is not None]
        if len(ids) != len(set(ids)):
            raise ValueError("entry ids must be unique")
        dims = {len(e.scenario.embedding) for e in self.entries
                if e.scenario.embedding is not None}
        if len(dims) > 1:
            raise ValueError(f"entries mix embedding dimensions {sorted(dims)}")

    @property
    def n(self) -> int:
        return sum(1 for e in self.entries if e.status is not EntryStatus.RETIRED)

    def get(self, entry_id: int) -> LibraryEntry:
        for entry in self.entries:
            if entry.entry_id == entry_id:
                return entry
        raise KeyError(f"no entry with id {entry_id}")


def scenario_prefix(conv: Conversation, k: int) -> Scenario:
    """The first k agent+customer turn pairs of conv, as a Scenario (embedding unset)."""
    total = conv.customer_turns()
    if not 1 <= k <= total:
        raise ValueError(f"k={k} out of range: conversation has {total} completed customer turns")
    return Scenario(
        id=f"{conv.id}-k{k}",
        source_conversation=conv.id,
        k=k,
        utterances=list(conv.utterances[: 2 * k]),
    )
