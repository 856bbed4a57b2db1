"""Prompt rendering: customer personas, agent message stacks, strategy text."""

from __future__ import annotations

from typing import Optional

from .domain import (
    BasePrompt,
    BulletKind,
    CustomerProfile,
    Speaker,
    StrategyPrompt,
    Utterance,
    validate_alternation,
)
from .gateway import ChatMessage

STRATEGY_HEADER = "STRATEGIES FOR THIS SITUATION:"
DEFAULT_HANGUP_MARKER = "<HANGUP>"
DEFAULT_OPENING_LINE = "Hello, how may I help you?"

#: Named customer-service task contexts. Values are the situation description
#: injected into the customer persona prompt.
CONTEXTS: dict[str, str] = {
    "ticket-cancellation": (
        "You bought a restricted ticket (non-changeable and non-refundable) from an "
        "airline and you are calling customer service to cancel it without paying a penalty."
    ),
    "lost-luggage": (
        "The airline lost your luggage on a recent flight and you are calling customer "
        "service to seek $10,000 in compensation for your loss."
    ),
}

_STYLE_DESCRIPTORS = {
    "Driver": "a Driver: results-driven, confident, and assertive",
    "Analytical": "an Analytical type: detail-oriented, systematic, and logical",
    "Amiable": "an Amiable type: cooperative, empathetic, and relationship-focused",
    "Expressive": "an Expressive type: enthusiastic, creative, and spontaneous",
}


def resolve_context(context: str) -> str:
    """Map a known context name to its description; pass raw text through."""
    return CONTEXTS.get(context, context)


def render_customer_prompt(profile: CustomerProfile, context: str,
                           hangup_marker: str = DEFAULT_HANGUP_MARKER) -> str:
    """System prompt for the simulated customer.

    Contains the social-style descriptor, the initial emotion, the task context,
    the hang-up protocol, and the word "demanding" iff the difficulty flag is set.
    """
    style = _STYLE_DESCRIPTORS[profile.social_style.value]
    difficulty = "You are a demanding customer: be persistent with your request. " \
        if profile.demanding else ""
    return (
        "Role-play as a customer calling an airline's customer service line. "
        f"{resolve_context(context)}\n"
        f"Your social style is {style}. "
        f"You are feeling {profile.initial_emotion.value} at the start of the call. "
        f"{difficulty}"
        "Speak only as the customer, one reply per turn. "
        f"When you would end the call, finish your message with {hangup_marker}."
    )


def render_strategy_text(prompt: StrategyPrompt) -> Optional[str]:
    """Numbered "n. [DO|AVOID] text" lines, keyed by bullet id; None when empty."""
    if not prompt.bullets:
        return None
    return "\n".join(
        f"{b.bullet_id}. [{'DO' if b.kind is BulletKind.DO else 'AVOID'}] {b.text}"
        for b in prompt.bullets
    )


def render_agent_messages(base: BasePrompt, strategy_text: Optional[str],
                          transcript: list[Utterance]) -> list[ChatMessage]:
    """Message stack for the agent: system prompt, then the transcript.

    Agent utterances map to the assistant role, customer utterances to the user
    role. Strategy text, when present, goes under a fixed header at the end of
    the system message so base behavior differs only past that point.
    """
    validate_alternation(transcript)
    constraints = "\n".join(f"- {c}" for c in base.constraints)
    system = (
        f"ROLE: {base.role}\n"
        f"GOAL: {base.goal}\n"
        f"CONSTRAINTS:\n{constraints}"
    )
    if strategy_text is not None:
        system += f"\n\n{STRATEGY_HEADER}\n{strategy_text}"
    messages = [ChatMessage("system", system)]
    for utt in transcript:
        role = "assistant" if utt.speaker is Speaker.AGENT else "user"
        messages.append(ChatMessage(role, utt.text))
    return messages


def render_customer_messages(profile: CustomerProfile, context: str,
                             transcript: list[Utterance],
                             hangup_marker: str = DEFAULT_HANGUP_MARKER) -> list[ChatMessage]:
    """Message stack from the customer's point of view (roles flipped)."""
    validate_alternation(transcript)
    messages = [ChatMessage("system", render_customer_prompt(profile, context, hangup_marker))]
    for utt in transcript:
        role = "user" if utt.speaker is Speaker.AGENT else "assistant"
        messages.append(ChatMessage(role, utt.text))
    return messages


#: Character budget for embedding input; recent turns dominate retrieval relevance.
TRANSCRIPT_EMBED_MAX_CHARS = 6000


def render_transcript_text(utterances: list[Utterance],
                           max_chars: int = TRANSCRIPT_EMBED_MAX_CHARS) -> str:
    """Transcript as "AGENT: ...\\nCUSTOMER: ..." lines, keeping the final max_chars."""
    text = "\n".join(
        f"{'AGENT' if u.speaker is Speaker.AGENT else 'CUSTOMER'}: {u.text}"
        for u in utterances
    )
    return text[-max_chars:] if max_chars and len(text) > max_chars else text


def default_base_prompt() -> BasePrompt:
    """The airline customer-service agent instruction used across runs."""
    return BasePrompt(
        role="Role-play as a customer service agent for an airline.",
        goal="Achieve high customer satisfaction while resolving the customer's request.",
        constraints=(
            "Restricted tickets are non-refundable and non-changeable per company policy.",
            "You may offer travel credits for the value of the ticket.",
            "You may offer a one-time rescheduling, subject to applicable fees.",
            "Never promise refunds or compensation outside these options.",
        ),
    )
