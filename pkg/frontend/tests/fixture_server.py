"""Fixture service for the UI tests: scripted backends, a 10-entry library."""

import socket
import sys

import uvicorn

from stratlib.domain import (
    BulletKind,
    CritiqueDelta,
    DeltaKind,
    Library,
    RefinementRecord,
    Scenario,
    Speaker,
    StrategyBullet,
    StrategyPrompt,
    LibraryEntry,
    Utterance,
)
from stratlib.gateway import embed
from stratlib.library import append_entry
from stratlib.offline import offline_backends
from stratlib.prompts import DEFAULT_OPENING_LINE, render_transcript_text
from stratlib.service import DeployConfig, create_app


def build_library(backends) -> Library:
    lib = Library(embedding_model_id="scripted-embed-64",
                  context_tag="ticket-cancellation")
    for i in range(1, 11):
        utterances = [
            Utterance(Speaker.AGENT, DEFAULT_OPENING_LINE, 1),
            Utterance(Speaker.CUSTOMER, f"Stored audit scenario number {i}.", 1),
        ]
        vec = embed(backends.embedder, render_transcript_text(utterances))
        scenario = Scenario(
            id=f"fixture-{i}", source_conversation=f"conv-{i}", k=1,
            utterances=utterances, embedding=list(vec.values),
        )
        delta = CritiqueDelta(kind=DeltaKind.UPDATE, adds=[
            StrategyBullet(0, BulletKind.DO, f"Handle audit case {i} with care."),
        ])
        history = [
            RefinementRecord(1, f"blunt student answer {i}",
                             f"empathetic teacher answer {i}",
                             f"ADD DO Handle audit case {i} with care.", delta),
            RefinementRecord(2, f"improved student answer {i}",
                             f"empathetic teacher answer {i}",
                             "NO_CHANGES", CritiqueDelta(kind=DeltaKind.NO_CHANGES)),
        ]
        entry = LibraryEntry(
            scenario=scenario,
            strategy=StrategyPrompt(
                bullets=[StrategyBullet(1, BulletKind.DO,
                                        f"Handle audit case {i} with care.")],
                revision=1,
            ),
            history=history,
        )
        append_entry(lib, entry)
    return lib


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def main() -> None:
    backends = offline_backends()
    cfg = DeployConfig(backends=backends)
    app = create_app(cfg, build_library(backends))
    port = int(sys.argv[1]) if len(sys.argv) > 1 else free_port()
    print(f"PORT={port}", flush=True)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


if __name__ == "__main__":
    main()
