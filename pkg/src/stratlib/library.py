"""Library persistence, append/edit operations, and the concurrent store."""

from __future__ import annotations

import json
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

from .domain import (
    LIBRARY_SCHEMA_VERSION,
    BulletKind,
    Conversation,
    CritiqueDelta,
    CustomerProfile,
    DeltaKind,
    EditRecord,
    Emotion,
    EndReason,
    EntryStatus,
    Generator,
    Library,
    LibraryEntry,
    RefinementRecord,
    Scenario,
    SocialStyle,
    Speaker,
    StrategyBullet,
    StrategyPrompt,
    Utterance,
)


class LibraryFormatError(ValueError):
    """Malformed library/transcript data; message carries the location."""


class SchemaVersionError(LibraryFormatError):
    """Stored schema_version does not match this code."""


def _require(data: dict, key: str, where: str):
    if key not in data:
        raise LibraryFormatError(f"{where}: missing field {key!r}")
    return data[key]


# ---------------------------------------------------------------------------
# dict <-> domain conversions
# ---------------------------------------------------------------------------

def utterance_to_dict(u: Utterance) -> dict:
    return {"speaker": u.speaker.value, "text": u.text, "turn_index": u.turn_index}


def utterance_from_dict(data: dict, where: str) -> Utterance:
    try:
        return Utterance(
            speaker=Speaker(_require(data, "speaker", where)),
            text=_require(data, "text", where),
            turn_index=_require(data, "turn_index", where),
        )
    except ValueError as exc:
        raise LibraryFormatError(f"{where}: {exc}") from exc


def bullet_to_dict(b: StrategyBullet) -> dict:
    return {"bullet_id": b.bullet_id, "kind": b.kind.value, "text": b.text}


def bullet_from_dict(data: dict, where: str) -> StrategyBullet:
    try:
        return StrategyBullet(
            bullet_id=_require(data, "bullet_id", where),
            kind=BulletKind(_require(data, "kind", where)),
            text=_require(data, "text", where),
        )
    except ValueError as exc:
        raise LibraryFormatError(f"{where}: {exc}") from exc


def delta_to_dict(d: CritiqueDelta) -> dict:
    return {
        "kind": d.kind.value,
        "adds": [bullet_to_dict(b) for b in d.adds],
        "removes": list(d.removes),
        "modifies": [[bid, text] for bid, text in d.modifies],
    }


def delta_from_dict(data: dict, where: str) -> CritiqueDelta:
    try:
        return CritiqueDelta(
            kind=DeltaKind(_require(data, "kind", where)),
            adds=[bullet_from_dict(b, f"{where}.adds[{i}]")
                  for i, b in enumerate(data.get("adds", []))],
            removes=list(data.get("removes", [])),
            modifies=[(pair[0], pair[1]) for pair in data.get("modifies", [])],
        )
    except (ValueError, IndexError, TypeError) as exc:
        raise LibraryFormatError(f"{where}: {exc}") from exc


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "id": s.id,
        "source_conversation": s.source_conversation,
        "k": s.k,
        "utterances": [utterance_to_dict(u) for u in s.utterances],
        "embedding": s.embedding,
    }


def scenario_from_dict(data: dict, where: str) -> Scenario:
    utts = [utterance_from_dict(u, f"{where}.utterances[{i}]")
            for i, u in enumerate(_require(data, "utterances", where))]
    try:
        return Scenario(
            id=_require(data, "id", where),
            source_conversation=_require(data, "source_conversation", where),
            k=_require(data, "k", where),
            utterances=utts,
            embedding=data.get("embedding"),
        )
    except ValueError as exc:
        raise LibraryFormatError(f"{where}: {exc}") from exc


def strategy_to_dict(p: StrategyPrompt) -> dict:
    return {
        "bullets": [bullet_to_dict(b) for b in p.bullets],
        "revision": p.revision,
        "max_bullet_id": p.max_bullet_id,
    }


def strategy_from_dict(data: dict, where: str) -> StrategyPrompt:
    bullets = [bullet_from_dict(b, f"{where}.bullets[{i}]")
               for i, b in enumerate(data.get("bullets", []))]
    try:
        return StrategyPrompt(
            bullets=bullets,
            revision=_require(data, "revision", where),
            max_bullet_id=data.get("max_bullet_id", 0),
        )
    except ValueError as exc:
        raise LibraryFormatError(f"{where}: {exc}") from exc


def record_to_dict(r: RefinementRecord) -> dict:
    return {
        "round": r.round,
        "student_response": r.student_response,
        "teacher_response": r.teacher_response,
        "critique_raw": r.critique_raw,
        "delta": delta_to_dict(r.delta),
    }


def record_from_dict(data: dict, where: str) -> RefinementRecord:
    try:
        return RefinementRecord(
            round=_require(data, "round", where),
            student_response=_require(data, "student_response", where),
            teacher_response=_require(data, "teacher_response", where),
            critique_raw=_require(data, "critique_raw", where),
            delta=delta_from_dict(_require(data, "delta", where), f"{where}.delta"),
        )
    except ValueError as exc:
        raise LibraryFormatError(f"{where}: {exc}") from exc


def entry_to_dict(e: LibraryEntry) -> dict:
    return {
        "entry_id": e.entry_id,
        "scenario": scenario_to_dict(e.scenario),
        "strategy": strategy_to_dict(e.strategy),
        "history": [record_to_dict(r) for r in e.history],
        "status": e.status.value,
        "created_iteration": e.created_iteration,
        "edit_log": [
            {"editor": r.editor, "timestamp": r.timestamp, "prior_revision": r.prior_revision}
            for r in e.edit_log
        ],
    }


def entry_from_dict(data: dict, where: str) -> LibraryEntry:
    try:
        return LibraryEntry(
            scenario=scenario_from_dict(_require(data, "scenario", where), f"{where}.scenario"),
            strategy=strategy_from_dict(_require(data, "strategy", where), f"{where}.strategy"),
            history=[record_from_dict(r, f"{where}.history[{i}]")
                     for i, r in enumerate(data.get("history", []))],
            status=EntryStatus(_require(data, "status", where)),
            created_iteration=data.get("created_iteration", 1),
            edit_log=[
                EditRecord(
                    editor=_require(r, "editor", f"{where}.edit_log[{i}]"),
                    timestamp=_require(r, "timestamp", f"{where}.edit_log[{i}]"),
                    prior_revision=_require(r, "prior_revision", f"{where}.edit_log[{i}]"),
                )
                for i, r in enumerate(data.get("edit_log", []))
            ],
            entry_id=data.get("entry_id"),
        )
    except ValueError as exc:
        raise LibraryFormatError(f"{where}: {exc}") from exc


def conversation_to_dict(c: Conversation) -> dict:
    return {
        "id": c.id,
        "iteration": c.iteration,
        "generator": c.generator.value,
        "profile": {
            "social_style": c.profile.social_style.value,
            "initial_emotion": c.profile.initial_emotion.value,
            "demanding": c.profile.demanding,
        },
        "utterances": [utterance_to_dict(u) for u in c.utterances],
        "end_reason": c.end_reason.value,
        "half_flag": c.half_flag,
    }


def conversation_from_dict(data: dict, where: str = "conversation") -> Conversation:
    prof = _require(data, "profile", where)
    try:
        profile = CustomerProfile(
            social_style=SocialStyle(_require(prof, "social_style", f"{where}.profile")),
            initial_emotion=Emotion(_require(prof, "initial_emotion", f"{where}.profile")),
            demanding=_require(prof, "demanding", f"{where}.profile"),
        )
        return Conversation(
            id=_require(data, "id", where),
            iteration=_require(data, "iteration", where),
            generator=Generator(_require(data, "generator", where)),
            profile=profile,
            utterances=[utterance_from_dict(u, f"{where}.utterances[{i}]")
                        for i, u in enumerate(_require(data, "utterances", where))],
            end_reason=EndReason(_require(data, "end_reason", where)),
            half_flag=data.get("half_flag", False),
        )
    except ValueError as exc:
        raise LibraryFormatError(f"{where}: {exc}") from exc


# ---------------------------------------------------------------------------
# Library operations
# ---------------------------------------------------------------------------

def library_dimension(lib: Library) -> Optional[int]:
    """Embedding dimension shared by the library's entries; None when empty/unembedded."""
    for entry in lib.entries:
        if entry.scenario.embedding is not None:
            return len(entry.scenario.embedding)
    return None


def append_entry(lib: Library, entry: LibraryEntry) -> int:
    """Add a machine-generated entry; assigns the next entry_id when unset."""
    if entry.status is not EntryStatus.MACHINE_GENERATED:
        raise ValueError("appended entries must have status machine_generated")
    if entry.scenario.embedding is None:
        raise ValueError("appended entries must carry a scenario embedding")
    dim = library_dimension(lib)
    if dim is not None and len(entry.scenario.embedding) != dim:
        raise ValueError(
            f"embedding dimension {len(entry.scenario.embedding)} != library dimension {dim}"
        )
    existing = {e.entry_id for e in lib.entries}
    if entry.entry_id is None:
        entry.entry_id = max((e for e in existing if e is not None), default=0) + 1
    elif entry.entry_id in existing:
        raise ValueError(f"duplicate entry id {entry.entry_id}")
    lib.entries.append(entry)
    return entry.entry_id


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def edit_entry(lib: Library, entry_id: int, new_bullets: list[StrategyBullet],
               editor: str) -> int:
    """Replace an entry's bullets (human edit); returns the new revision.

    The entry object is swapped, not mutated, so concurrent readers see either
    the old or the new version.
    """
    entry = lib.get(entry_id)
    if entry.status is EntryStatus.RETIRED:
        raise ValueError(f"entry {entry_id} is retired")
    hwm = entry.strategy.max_bullet_id
    assigned: list[StrategyBullet] = []
    for b in new_bullets:
        if b.bullet_id <= 0:
            hwm += 1
            assigned.append(StrategyBullet(hwm, b.kind, b.text))
        else:
            hwm = max(hwm, b.bullet_id)
            assigned.append(b)
    new_strategy = StrategyPrompt(
        bullets=assigned,
        revision=entry.strategy.revision + 1,
        max_bullet_id=hwm,
    )
    new_entry = LibraryEntry(
        scenario=entry.scenario,
        strategy=new_strategy,
        history=entry.history,
        status=EntryStatus.HUMAN_EDITED,
        created_iteration=entry.created_iteration,
        edit_log=entry.edit_log + [EditRecord(editor, _utc_now(), entry.strategy.revision)],
        entry_id=entry.entry_id,
    )
    idx = lib.entries.index(entry)
    lib.entries[idx] = new_entry
    return new_strategy.revision


def approve_entry(lib: Library, entry_id: int) -> None:
    """Mark an entry human_approved; status change only, revision untouched."""
    entry = lib.get(entry_id)
    if entry.status is EntryStatus.RETIRED:
        raise ValueError(f"entry {entry_id} is retired")
    entry.status = EntryStatus.HUMAN_APPROVED


def retire_entry(lib: Library, entry_id: int) -> None:
    """Take an entry out of retrieval without breaking id references."""
    lib.get(entry_id).status = EntryStatus.RETIRED


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_library(lib: Library) -> bytes:
    """Serialize to UTF-8 JSON; floats keep full round-trip precision."""
    doc = {
        "schema_version": lib.schema_version,
        "embedding_model_id": lib.embedding_model_id,
        "context_tag": lib.context_tag,
        "entries": [entry_to_dict(e) for e in lib.entries],
    }
    return (json.dumps(doc, ensure_ascii=False, indent=2) + "\n").encode("utf-8")


def load_library(data: Union[bytes, str]) -> Library:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise LibraryFormatError(
            f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise LibraryFormatError("top level is not an object")
    version = _require(doc, "schema_version", "library")
    if version != LIBRARY_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"schema_version {version} unsupported (expected {LIBRARY_SCHEMA_VERSION})"
        )
    entries = [entry_from_dict(e, f"entries[{i}]")
               for i, e in enumerate(_require(doc, "entries", "library"))]
    try:
        return Library(
            embedding_model_id=_require(doc, "embedding_model_id", "library"),
            context_tag=_require(doc, "context_tag", "library"),
            entries=entries,
            schema_version=version,
        )
    except ValueError as exc:
        raise LibraryFormatError(str(exc)) from exc


def save_library_file(lib: Library, path: Union[str, Path]) -> None:
    Path(path).write_bytes(save_library(lib))


def load_library_file(path: Union[str, Path]) -> Library:
    return load_library(Path(path).read_bytes())


def append_transcript(path: Union[str, Path], conv: Conversation) -> None:
    """Append one conversation to a newline-delimited transcript log."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(conversation_to_dict(conv), ensure_ascii=False) + "\n")


def read_transcripts(path: Union[str, Path]) -> list[Conversation]:
    convs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LibraryFormatError(f"line {lineno}: {exc.msg}") from exc
            convs.append(conversation_from_dict(data, f"line {lineno}"))
    return convs


class LibraryStore:
    """Many concurrent readers, one serialized writer.

    Mutations replace whole entry objects (or append), so a reader always sees
    a pre- or post-write library, never a torn entry.
    """

    def __init__(self, library: Library):
        self._library = library
        self._write_lock = threading.Lock()

    @property
    def library(self) -> Library:
        return self._library

    def append(self, entry: LibraryEntry) -> int:
        with self._write_lock:
            return append_entry(self._library, entry)

    def edit(self, entry_id: int, new_bullets: list[StrategyBullet], editor: str) -> int:
        with self._write_lock:
            return edit_entry(self._library, entry_id, new_bullets, editor)

    def approve(self, entry_id: int) -> None:
        with self._write_lock:
            approve_entry(self._library, entry_id)

    def retire(self, entry_id: int) -> None:
        with self._write_lock:
            retire_entry(self._library, entry_id)

    def replace(self, library: Library) -> None:
        with self._write_lock:
            self._library = library

    def save(self, path: Union[str, Path]) -> None:
        with self._write_lock:
            save_library_file(self._library, path)
