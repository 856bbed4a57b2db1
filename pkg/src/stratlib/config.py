"""JSON config files mirroring the trainer/deploy/backend field names."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

from .domain import BasePrompt, CustomerProfile, Emotion, SocialStyle
from .evaluation import ExemplarSet
from .gateway import Backends, backends_from_dict
from .prompts import default_base_prompt
from .simulation import ConversationLimits, GeneratorSchedule, ScheduleMode
from .trainer import TrainerConfig


def load_config_file(path: Union[str, Path]) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def schedule_from_dict(data: dict) -> GeneratorSchedule:
    return GeneratorSchedule(
        decay=float(data.get("decay", 0.3)),
        p_min=float(data.get("p_min", 0.1)),
        mode=ScheduleMode(data.get("mode", "linear")),
    )


def profiles_from_list(items: Optional[list]) -> Optional[list[CustomerProfile]]:
    if items is None:
        return None
    return [
        CustomerProfile(
            social_style=SocialStyle(p["social_style"]),
            initial_emotion=Emotion(p["initial_emotion"]),
            demanding=bool(p["demanding"]),
        )
        for p in items
    ]


def limits_from_dict(data: dict) -> ConversationLimits:
    return ConversationLimits(
        max_agent_turns=int(data.get("max_agent_turns", 10)),
        hangup_marker=data.get("hangup_marker", "<HANGUP>"),
        opening_line=data.get("opening_line", "Hello, how may I help you?"),
    )


def trainer_config_from_dict(data: dict) -> TrainerConfig:
    return TrainerConfig(
        schedule=schedule_from_dict(data.get("schedule", {})),
        profiles=profiles_from_list(data.get("profiles")),
        reps=int(data.get("reps", 1)),
        scenarios_per_conversation=int(data.get("scenarios_per_conversation", 2)),
        max_rounds=int(data.get("max_rounds", 5)),
        patience=int(data.get("patience", 2)),
        epsilon=float(data.get("epsilon", 0.05)),
        max_iterations=int(data.get("max_iterations", 10)),
        validation_size=int(data.get("validation_size", 32)),
        k_train=int(data.get("k_train", 1)),
        seed=int(data.get("seed", 0)),
        context=data.get("context", "ticket-cancellation"),
        token_budget=int(data.get("token_budget", 512)),
        exemplar_set=ExemplarSet(data.get("exemplar_set", "demanding")),
        exemplar_count=int(data.get("exemplar_count", 2)),
        limits=limits_from_dict(data.get("limits", {})),
        concurrency=int(data.get("concurrency", 1)),
    )


def base_prompt_from_dict(data: Optional[dict]) -> BasePrompt:
    if not data:
        return default_base_prompt()
    return BasePrompt(
        role=data["role"],
        goal=data["goal"],
        constraints=tuple(data["constraints"]),
    )


def backends_from_config(doc: dict) -> Backends:
    if "backends" not in doc:
        raise ValueError("config is missing the 'backends' section")
    return backends_from_dict(doc["backends"])
