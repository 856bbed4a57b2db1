"""Library append/edit semantics and persistence round-trips."""

import random

import pytest

from stratlib.domain import BulletKind, EntryStatus, Library, StrategyBullet
from stratlib.library import (
    LibraryFormatError,
    LibraryStore,
    SchemaVersionError,
    append_entry,
    approve_entry,
    edit_entry,
    load_library,
    retire_entry,
    save_library,
)

from conftest import make_entry, random_library


def empty_library() -> Library:
    return Library(embedding_model_id="scripted-embed-64", context_tag="ticket-cancellation")


class TestAppend:
    def test_append_to_empty(self):
        lib = empty_library()
        entry_id = append_entry(lib, make_entry())
        assert entry_id == 1
        assert lib.n == 1

    def test_ids_unique_over_five_appends(self):
        lib = empty_library()
        ids = [append_entry(lib, make_entry()) for _ in range(5)]
        assert ids == [1, 2, 3, 4, 5]
        assert lib.n == 5

    def test_dimension_mismatch_rejected(self):
        lib = empty_library()
        append_entry(lib, make_entry())
        from conftest import embedder_backend
        bad = make_entry(embedder=embedder_backend(dim=32))
        with pytest.raises(ValueError, match="dimension"):
            append_entry(lib, bad)

    def test_duplicate_id_rejected(self):
        lib = empty_library()
        append_entry(lib, make_entry(entry_id=7))
        with pytest.raises(ValueError, match="duplicate"):
            append_entry(lib, make_entry(entry_id=7))

    def test_only_machine_generated_appendable(self):
        lib = empty_library()
        entry = make_entry()
        entry.status = EntryStatus.HUMAN_EDITED
        with pytest.raises(ValueError, match="machine_generated"):
            append_entry(lib, entry)

    def test_existing_entries_unmodified(self):
        lib = empty_library()
        append_entry(lib, make_entry())
        before = save_library(lib)
        append_entry(lib, make_entry())
        assert save_library(load_library(before)) == before


class TestEdit:
    def test_revision_bumps_and_log_grows(self):
        lib = empty_library()
        entry = make_entry(bullets=[("do", "a"), ("do", "b"), ("do", "c")])
        eid = append_entry(lib, entry)
        assert lib.get(eid).strategy.revision == 3
        rev = edit_entry(lib, eid, [StrategyBullet(0, BulletKind.DO, "x")], "alice")
        assert rev == 4
        edited = lib.get(eid)
        assert edited.status is EntryStatus.HUMAN_EDITED
        assert len(edited.edit_log) == 1
        assert edited.edit_log[0].prior_revision == 3
        assert edited.edit_log[0].editor == "alice"

    def test_two_sequential_edits_monotone(self):
        lib = empty_library()
        eid = append_entry(lib, make_entry(bullets=[("do", "a")] * 1))
        r1 = edit_entry(lib, eid, [StrategyBullet(0, BulletKind.DO, "x")], "alice")
        r2 = edit_entry(lib, eid, [StrategyBullet(0, BulletKind.AVOID, "y")], "bob")
        assert (r1, r2) == (2, 3)
        assert len(lib.get(eid).edit_log) == 2

    def test_edit_retired_rejected(self):
        lib = empty_library()
        eid = append_entry(lib, make_entry())
        retire_entry(lib, eid)
        with pytest.raises(ValueError, match="retired"):
            edit_entry(lib, eid, [StrategyBullet(0, BulletKind.DO, "x")], "alice")

    def test_unknown_id_rejected(self):
        lib = empty_library()
        with pytest.raises(KeyError):
            edit_entry(lib, 99, [], "alice")

    def test_scenario_and_embedding_unchanged(self):
        lib = empty_library()
        eid = append_entry(lib, make_entry())
        scenario_before = lib.get(eid).scenario
        edit_entry(lib, eid, [StrategyBullet(0, BulletKind.DO, "x")], "alice")
        assert lib.get(eid).scenario is scenario_before

    def test_approve_changes_status_only(self):
        lib = empty_library()
        eid = append_entry(lib, make_entry())
        rev_before = lib.get(eid).strategy.revision
        approve_entry(lib, eid)
        assert lib.get(eid).status is EntryStatus.HUMAN_APPROVED
        assert lib.get(eid).strategy.revision == rev_before
        assert lib.get(eid).edit_log == []


class TestPersistence:
    def test_round_trip_empty(self):
        lib = empty_library()
        assert load_library(save_library(lib)) == lib

    def test_round_trip_unicode_and_history(self):
        rng = random.Random(7)
        lib = random_library(rng, max_entries=12)
        loaded = load_library(save_library(lib))
        assert loaded == lib

    def test_round_trip_100_random_libraries(self):
        rng = random.Random(2024)
        for _ in range(100):
            lib = random_library(rng)
            assert load_library(save_library(lib)) == lib

    def test_truncated_stream_is_parse_error(self):
        data = save_library(random_library(random.Random(1), max_entries=6))
        with pytest.raises(LibraryFormatError, match="line"):
            load_library(data[: len(data) // 2])

    def test_schema_version_mismatch(self):
        data = save_library(empty_library()).decode().replace(
            '"schema_version": 1', '"schema_version": 99')
        with pytest.raises(SchemaVersionError):
            load_library(data)

    def test_missing_field_reports_location(self):
        data = b'{"schema_version": 1, "context_tag": "x", "entries": []}'
        with pytest.raises(LibraryFormatError, match="embedding_model_id"):
            load_library(data)

    def test_retired_excluded_from_n(self):
        lib = empty_library()
        ids = [append_entry(lib, make_entry()) for _ in range(3)]
        retire_entry(lib, ids[0])
        assert lib.n == 2

    def test_mixed_dimension_entries_rejected_on_load(self):
        from conftest import embedder_backend

        lib = empty_library()
        append_entry(lib, make_entry())
        data = save_library(lib).decode()
        # splice in an entry with a different embedding dimension
        short = make_entry(entry_id=2, embedder=embedder_backend(dim=32))
        import json as _json
        from stratlib.library import entry_to_dict
        doc = _json.loads(data)
        doc["entries"].append(entry_to_dict(short))
        with pytest.raises(LibraryFormatError, match="dimension"):
            load_library(_json.dumps(doc))


class TestStore:
    def test_concurrent_readers_see_whole_entries(self):
        import threading

        lib = empty_library()
        store = LibraryStore(lib)
        eid = store.append(make_entry(bullets=[("do", "start")]))
        stop = threading.Event()
        torn = []

        def reader():
            while not stop.is_set():
                entry = store.library.get(eid)
                revision = entry.strategy.revision
                log_len = len(entry.edit_log)
                # revision and edit-log length always move together
                if log_len != revision - 1 and not (log_len == 0 and revision == 1):
                    torn.append((revision, log_len))

        threads = [threading.Thread(target=reader) for _ in range(4)]
        for th in threads:
            th.start()
        for i in range(50):
            store.edit(eid, [StrategyBullet(0, BulletKind.DO, f"v{i}")], "alice")
        stop.set()
        for th in threads:
            th.join()
        assert torn == []
