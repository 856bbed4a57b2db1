"""Built-in scripted backends for offline runs and end-to-end tests.

The scripts form a small but complete cast: a customer who pushes back then
hangs up, teacher/student agents, a critique script that converges after two
rounds of additions, and a judge that rewards conversations where alternatives
were offered.
"""

from __future__ import annotations

from .gateway import BackendConfig, BackendKind, Backends, ScriptRule, ScriptedBehavior
from .prompts import STRATEGY_HEADER


def offline_customer_script() -> ScriptedBehavior:
    return ScriptedBehavior(
        rules=(
            ScriptRule(assistant_turns=0, replies=(
                "Hello, I need to cancel my flight. I could not find the option online.",
                "Hi, I'm calling about my booking. I want to cancel it and get my money back.",
                "Hello. My plans changed and I have to cancel my ticket.",
            )),
            ScriptRule(assistant_turns=1, replies=(
                "That is disappointing. Are you sure there is nothing you can do?",
                "I really was not expecting this. What options do I actually have?",
            )),
            ScriptRule(min_assistant_turns=2, replies=(
                "Alright, I suppose that will have to do. Thank you. <HANGUP>",
                "Fine, I will take the credits then. Goodbye. <HANGUP>",
            )),
        ),
        default_reply="I see.",
        embed_seed=11,
    )


def offline_teacher_script() -> ScriptedBehavior:
    return ScriptedBehavior(
        rules=(
            # critique requests: converge after two rounds of additions
            ScriptRule(contains="CURRENT STRATEGY BULLETS:\n(none)", replies=(
                "ADD DO Acknowledge the customer's request and express willingness to assist.\n"
                "ADD DO Offer alternative solutions such as travel credits or rescheduling.",
            )),
            ScriptRule(contains="CURRENT STRATEGY BULLETS:\n1.", pattern=r"\n3\. \[",
                       replies=("NO_CHANGES",)),
            ScriptRule(contains="CURRENT STRATEGY BULLETS:\n1.", replies=(
                "ADD AVOID Avoid blunt statements without context or empathy.",
            )),
            # agent turns (teacher as reference responder / summarizer)
            ScriptRule(contains="Summarize these strategy directives", replies=(
                "1. [DO] Acknowledge the request and offer travel credits or rescheduling.",
            )),
        ),
        default_reply=(
            "I understand, and I'm sorry for the inconvenience. Your ticket is restricted, "
            "but I can offer travel credits or a one-time rescheduling, subject to fees. "
            "Would you like to hear more about these options?"
        ),
        embed_seed=12,
    )


def offline_student_script() -> ScriptedBehavior:
    return ScriptedBehavior(
        rules=(
            ScriptRule(contains=STRATEGY_HEADER, replies=(
                "I'm sorry about the inconvenience. While restricted tickets are "
                "non-refundable, I can offer travel credits or a one-time rescheduling. "
                "Would you like to explore these options?",
            )),
        ),
        default_reply=(
            "I'm sorry, restricted tickets are non-refundable and non-changeable."
        ),
        embed_seed=13,
    )


def offline_judge_script() -> ScriptedBehavior:
    return ScriptedBehavior(
        rules=(
            ScriptRule(contains="travel credits", replies=("Rating: 5",)),
        ),
        default_reply="Rating: 4",
        embed_seed=14,
    )


def offline_backends(embed_dim: int = 64, embed_seed: int = 0) -> Backends:
    """A full scripted role set; embeddings come from a seeded hash projection."""
    def scripted(model_id: str, script: ScriptedBehavior) -> BackendConfig:
        return BackendConfig(kind=BackendKind.SCRIPTED, model_id=model_id, script=script)

    embed_script = ScriptedBehavior(embed_dim=embed_dim, embed_seed=embed_seed)
    return Backends(
        teacher=scripted("scripted-teacher", offline_teacher_script()),
        student=scripted("scripted-student", offline_student_script()),
        customer=scripted("scripted-customer", offline_customer_script()),
        judge=scripted("scripted-judge", offline_judge_script()),
        embedder=scripted("scripted-embed-64", embed_script),
    )
