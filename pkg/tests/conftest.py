"""Shared builders: conversations, scripted backends, random libraries."""

from __future__ import annotations

import random

import pytest

from stratlib.domain import (
    BasePrompt,
    BulletKind,
    Conversation,
    CustomerProfile,
    Emotion,
    EndReason,
    EntryStatus,
    Generator,
    Library,
    LibraryEntry,
    Scenario,
    SocialStyle,
    Speaker,
    StrategyBullet,
    StrategyPrompt,
    Utterance,
)
from stratlib.gateway import BackendConfig, BackendKind, ScriptedBehavior, embed
from stratlib.prompts import default_base_prompt, render_transcript_text


def make_utterances(texts: list[str]) -> list[Utterance]:
    """Alternating transcript from plain texts, agent first."""
    utts = []
    for pos, text in enumerate(texts):
        speaker = Speaker.AGENT if pos % 2 == 0 else Speaker.CUSTOMER
        utts.append(Utterance(speaker, text, pos // 2 + 1))
    return utts


def make_conversation(n_customer_turns: int = 3, *, conv_id: str = "c1",
                      generator: Generator = Generator.TEACHER,
                      end_reason: EndReason = EndReason.CUSTOMER_HANGUP,
                      demanding: bool = True,
                      iteration: int = 1) -> Conversation:
    texts = []
    for k in range(1, n_customer_turns + 1):
        texts.append(f"agent line {k}")
        texts.append(f"customer line {k}")
    return Conversation(
        id=conv_id,
        iteration=iteration,
        generator=generator,
        profile=CustomerProfile(SocialStyle.DRIVER, Emotion.CALM, demanding),
        utterances=make_utterances(texts),
        end_reason=end_reason,
    )


def scripted_backend(script: ScriptedBehavior, model_id: str = "scripted",
                     role: str | None = None) -> BackendConfig:
    return BackendConfig(kind=BackendKind.SCRIPTED, model_id=model_id,
                         script=script, role=role)


def embedder_backend(dim: int = 64, seed: int = 0) -> BackendConfig:
    return scripted_backend(ScriptedBehavior(embed_dim=dim, embed_seed=seed),
                            model_id=f"scripted-embed-{dim}", role="embedder")


def embedded_scenario(texts: list[str], *, scenario_id: str = "s1",
                      source: str = "c1", embedder: BackendConfig | None = None,
                      dim: int = 64) -> Scenario:
    utts = make_utterances(texts)
    backend = embedder or embedder_backend(dim)
    vec = embed(backend, render_transcript_text(utts))
    return Scenario(
        id=scenario_id,
        source_conversation=source,
        k=len(utts) // 2,
        utterances=utts,
        embedding=list(vec.values),
    )


def make_entry(entry_id: int | None = None, *, bullets: list[tuple[str, str]] | None = None,
               texts: list[str] | None = None,
               status: EntryStatus = EntryStatus.MACHINE_GENERATED,
               embedder: BackendConfig | None = None) -> LibraryEntry:
    texts = texts or ["Hello, how may I help you?", f"I need help with entry {entry_id}"]
    bullets = bullets if bullets is not None else [("do", "Offer alternatives.")]
    strategy = StrategyPrompt(
        bullets=[StrategyBullet(i + 1, BulletKind(kind), text)
                 for i, (kind, text) in enumerate(bullets)],
        revision=len(bullets),
    )
    return LibraryEntry(
        scenario=embedded_scenario(texts, scenario_id=f"s{entry_id}", embedder=embedder),
        strategy=strategy,
        status=status,
        entry_id=entry_id,
    )


def random_library(rng: random.Random, *, max_entries: int = 12, dim: int = 8) -> Library:
    """Randomized but valid library for round-trip property tests."""
    from stratlib.domain import CritiqueDelta, DeltaKind, EditRecord, RefinementRecord

    emb = embedder_backend(dim, seed=rng.randrange(1000))
    lib = Library(embedding_model_id=f"scripted-embed-{dim}", context_tag="ticket-cancellation")
    n = rng.randrange(max_entries + 1)
    for i in range(1, n + 1):
        turns = rng.randrange(1, 4)
        texts = []
        for k in range(turns):
            texts.append(f"agent says {rng.randrange(1000)} éö中")
            texts.append(f"customer says {rng.randrange(1000)} ☃")
        n_bullets = rng.randrange(4)
        bullets = [(rng.choice(["do", "avoid"]), f"bullet {rng.randrange(100)} ü")
                   for _ in range(n_bullets)]
        entry = make_entry(i, bullets=bullets, texts=texts, embedder=emb)
        entry.status = rng.choice(list(EntryStatus))
        if rng.random() < 0.5:
            delta = CritiqueDelta(
                kind=DeltaKind.UPDATE,
                adds=[StrategyBullet(0, BulletKind.DO, f"added {rng.randrange(50)}")],
            )
            entry.history = [
                RefinementRecord(1, "student said à", "teacher said ß",
                                 "ADD DO something", delta),
            ]
        if rng.random() < 0.3:
            entry.edit_log = [
                EditRecord(f"editor{rng.randrange(5)}", "2025-11-03T12:00:00+00:00",
                           rng.randrange(3)),
            ]
        lib.entries.append(entry)
    return lib


@pytest.fixture
def base_prompt() -> BasePrompt:
    return default_base_prompt()
