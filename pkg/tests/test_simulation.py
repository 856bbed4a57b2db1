"""Schedules, generator selection, conversation loops, and scenario sampling."""

import random

import pytest

from stratlib.domain import (
    CustomerProfile,
    Emotion,
    EndReason,
    Generator,
    SocialStyle,
    Speaker,
    all_profiles,
)
from stratlib.gateway import ScriptRule, ScriptedBehavior
from stratlib.simulation import (
    ConversationLimits,
    GeneratorSchedule,
    ScheduleMode,
    TeacherRunner,
    generate_batch,
    run_conversation,
    sample_scenarios,
    schedule_p,
    select_generator,
)

from conftest import embedder_backend, make_conversation, scripted_backend


PROFILE = CustomerProfile(SocialStyle.DRIVER, Emotion.CALM, False)


def agent_backend(reply="How can I help?"):
    return scripted_backend(ScriptedBehavior(default_reply=reply), role="teacher")


def customer_hangs_up_after(n_turns: int):
    """Customer script that appends the hangup marker on its n-th utterance."""
    rules = (
        ScriptRule(min_assistant_turns=n_turns - 1,
                   replies=("Fine, goodbye. <HANGUP>",)),
        ScriptRule(replies=("I want to cancel my ticket.",)),
    )
    return scripted_backend(ScriptedBehavior(rules=rules), role="customer")


def customer_never_hangs_up():
    return scripted_backend(ScriptedBehavior(default_reply="And another thing!"),
                            role="customer")


class TestSchedule:
    def test_linear_t1_is_one(self):
        s = GeneratorSchedule(decay=0.3, p_min=0.1, mode=ScheduleMode.LINEAR)
        assert schedule_p(s, 1) == 1.0

    def test_linear_clips_to_floor(self):
        s = GeneratorSchedule(decay=0.3, p_min=0.1, mode=ScheduleMode.LINEAR)
        assert schedule_p(s, 4) == pytest.approx(0.1)

    def test_geometric_closed_form(self):
        s = GeneratorSchedule(decay=0.5, p_min=0.05, mode=ScheduleMode.GEOMETRIC)
        assert schedule_p(s, 3) == pytest.approx(0.25)

    def test_non_increasing_over_iterations(self):
        for mode in ScheduleMode:
            s = GeneratorSchedule(decay=0.3 if mode is ScheduleMode.LINEAR else 0.6,
                                  p_min=0.1, mode=mode)
            ps = [schedule_p(s, t) for t in range(1, 10)]
            assert ps[0] == 1.0
            assert all(a >= b for a, b in zip(ps, ps[1:]))
            assert all(p >= 0.1 for p in ps)


class TestSelectGenerator:
    def test_p_one_always_teacher(self):
        rng = random.Random(0)
        assert all(select_generator(1.0, rng) is Generator.TEACHER for _ in range(100))

    def test_p_zero_always_student(self):
        rng = random.Random(0)
        assert all(select_generator(0.0, rng) is Generator.STUDENT for _ in range(100))

    def test_frequency_at_half(self):
        rng = random.Random(1234)
        draws = sum(select_generator(0.5, rng) is Generator.TEACHER
                    for _ in range(10_000))
        assert 0.48 <= draws / 10_000 <= 0.52


class TestRunConversation:
    def test_hangup_after_second_customer_turn(self, base_prompt):
        conv = run_conversation(
            TeacherRunner(agent_backend(), base_prompt), PROFILE, ConversationLimits(),
            customer_backend=customer_hangs_up_after(2),
            context="ticket-cancellation",
        )
        assert len(conv.utterances) == 4
        assert conv.end_reason is EndReason.CUSTOMER_HANGUP
        assert "<HANGUP>" not in conv.utterances[-1].text

    def test_max_turns_cutoff(self, base_prompt):
        conv = run_conversation(
            TeacherRunner(agent_backend(), base_prompt), PROFILE,
            ConversationLimits(max_agent_turns=3),
            customer_backend=customer_never_hangs_up(),
            context="ticket-cancellation",
        )
        assert len(conv.utterances) == 6
        assert conv.end_reason is EndReason.MAX_TURNS
        agent_turns = sum(1 for u in conv.utterances if u.speaker is Speaker.AGENT)
        assert agent_turns == 3

    def test_alternation_always_holds(self, base_prompt):
        conv = run_conversation(
            TeacherRunner(agent_backend(), base_prompt), PROFILE,
            ConversationLimits(max_agent_turns=5),
            customer_backend=customer_hangs_up_after(3),
            context="ticket-cancellation",
        )
        speakers = [u.speaker for u in conv.utterances]
        assert speakers[0] is Speaker.AGENT
        assert all(a is not b for a, b in zip(speakers, speakers[1:]))

    def test_opening_line_is_first(self, base_prompt):
        conv = run_conversation(
            TeacherRunner(agent_backend(), base_prompt), PROFILE,
            ConversationLimits(opening_line="Hello, how may I help you?"),
            customer_backend=customer_hangs_up_after(1),
            context="ticket-cancellation",
        )
        assert conv.utterances[0].text == "Hello, how may I help you?"

    def test_backend_error_flagged(self, base_prompt):
        broken = scripted_backend(ScriptedBehavior(rules=()), role="customer")
        conv = run_conversation(
            TeacherRunner(agent_backend(), base_prompt), PROFILE,
            ConversationLimits(),
            customer_backend=broken, context="ticket-cancellation",
        )
        assert conv.end_reason is EndReason.BACKEND_ERROR
        assert not conv.usable


class TestGenerateBatch:
    def _runners(self, base_prompt):
        from stratlib.simulation import StudentRunner

        teacher = TeacherRunner(agent_backend(), base_prompt)
        student_backend = scripted_backend(
            ScriptedBehavior(default_reply="Student reply."), role="student")
        student = StudentRunner(student_backend, base_prompt)  # empty library: base only
        return teacher, student

    def test_t1_all_teacher(self, base_prompt):
        convs = generate_batch(
            1, self._runners(base_prompt), GeneratorSchedule(), all_profiles(), 1,
            random.Random(0),
            customer_backend=customer_hangs_up_after(2), context="ticket-cancellation",
        )
        assert len(convs) == 32
        assert all(c.generator is Generator.TEACHER for c in convs)

    def test_floor_fraction_over_1000(self, base_prompt):
        profiles = all_profiles()[:10]
        convs = generate_batch(
            99, self._runners(base_prompt), GeneratorSchedule(p_min=0.1), profiles, 100,
            random.Random(7),
            customer_backend=customer_hangs_up_after(1), context="ticket-cancellation",
        )
        assert len(convs) == 1000
        student_fraction = sum(c.generator is Generator.STUDENT for c in convs) / 1000
        assert 0.87 <= student_fraction <= 0.93

    def test_reps_duplicate_profiles(self, base_prompt):
        profiles = all_profiles()
        convs = generate_batch(
            1, self._runners(base_prompt), GeneratorSchedule(), profiles, 2,
            random.Random(0),
            customer_backend=customer_hangs_up_after(1), context="ticket-cancellation",
        )
        assert len(convs) == 64
        from collections import Counter
        counts = Counter(c.profile for c in convs)
        assert all(count == 2 for count in counts.values())

    def test_concurrency_matches_sequential(self, base_prompt):
        profiles = all_profiles()[:8]
        kw = dict(customer_backend=customer_hangs_up_after(2),
                  context="ticket-cancellation")
        seq = generate_batch(2, self._runners(base_prompt), GeneratorSchedule(),
                             profiles, 1, random.Random(5), concurrency=1, **kw)
        par = generate_batch(2, self._runners(base_prompt), GeneratorSchedule(),
                             profiles, 1, random.Random(5), concurrency=4, **kw)
        assert [(c.id, c.generator, [u.text for u in c.utterances]) for c in seq] == \
               [(c.id, c.generator, [u.text for u in c.utterances]) for c in par]

    def test_student_fraction_non_decreasing_over_six_iterations(self, base_prompt):
        total_student = 0
        total = 0
        fractions = []
        ps = []
        for t in range(1, 7):
            ps.append(schedule_p(GeneratorSchedule(), t))
            convs = generate_batch(
                t, self._runners(base_prompt), GeneratorSchedule(), all_profiles(), 1,
                random.Random(f"seed:{t}"),
                customer_backend=customer_hangs_up_after(1), context="ticket-cancellation",
            )
            total_student += sum(c.generator is Generator.STUDENT for c in convs)
            total += len(convs)
            fractions.append(total_student / total)
        assert ps[0] == 1.0
        assert all(a >= b for a, b in zip(ps, ps[1:]))
        assert all(a <= b + 1e-12 for a, b in zip(fractions, fractions[1:]))


class TestSampleScenarios:
    def test_clipping_when_m_exceeds_turns(self):
        conv = make_conversation(1)
        out = sample_scenarios(conv, 2, random.Random(0))
        assert len(out) == 1
        assert out[0].k == 1

    def test_distinct_k_and_customer_final(self):
        conv = make_conversation(5)
        out = sample_scenarios(conv, 2, random.Random(3))
        assert len(out) == 2
        assert out[0].k != out[1].k
        assert all(s.utterances[-1].speaker is Speaker.CUSTOMER for s in out)

    def test_exhaustive_when_m_equals_turns(self):
        conv = make_conversation(3)
        out = sample_scenarios(conv, 3, random.Random(0))
        assert sorted(s.k for s in out) == [1, 2, 3]

    def test_unusable_conversation_rejected(self):
        conv = make_conversation(2, end_reason=EndReason.BACKEND_ERROR)
        with pytest.raises(ValueError, match="backend_error"):
            sample_scenarios(conv, 1, random.Random(0))

    def test_embeddings_computed_when_embedder_given(self):
        conv = make_conversation(2)
        out = sample_scenarios(conv, 2, random.Random(0), embedder=embedder_backend())
        assert all(s.embedding is not None and len(s.embedding) == 64 for s in out)

    def test_prefix_property(self):
        conv = make_conversation(4)
        for s in sample_scenarios(conv, 4, random.Random(1)):
            assert s.utterances == conv.utterances[: len(s.utterances)]


class TestStudentRunnerStrategies:
    def test_empty_bullet_entries_skip_strategy_header(self, base_prompt):
        from stratlib.domain import Library, StrategyPrompt
        from stratlib.library import append_entry
        from stratlib.prompts import STRATEGY_HEADER
        from stratlib.retrieval import build_index
        from stratlib.simulation import StudentRunner

        from conftest import embedder_backend, make_entry

        lib = Library(embedding_model_id="scripted-embed-64", context_tag="t")
        entry = make_entry()
        entry.strategy = StrategyPrompt()  # converged to zero bullets
        append_entry(lib, entry)

        backend = scripted_backend(ScriptedBehavior(rules=(
            ScriptRule(contains=STRATEGY_HEADER, replies=("saw header",)),
        ), default_reply="no header"), role="student")
        runner = StudentRunner(backend, base_prompt, embedder=embedder_backend(),
                               index=build_index(lib), library=lib)
        text, trace = runner.respond_with_trace(make_conversation(1).utterances)
        assert text == "no header"
        assert trace is not None and len(trace.hits) == 1
