"""Strategy-library distillation: teach a weaker dialogue agent with a stronger one.

A trainer builds a human-auditable library of (scenario -> strategy) pairs by
letting a teacher model critique a student model's responses; at deployment the
student retrieves the nearest stored scenario by embedding and follows its
strategies.
"""

__version__ = "0.1.0"

from .domain import (
    BasePrompt,
    Conversation,
    CritiqueDelta,
    CustomerProfile,
    Library,
    LibraryEntry,
    Scenario,
    StrategyBullet,
    StrategyPrompt,
    Utterance,
    all_profiles,
    scenario_prefix,
)
from .gateway import BackendConfig, Backends, ChatMessage, GenerationParams, chat, embed
from .library import (
    append_entry,
    edit_entry,
    load_library,
    load_library_file,
    save_library,
    save_library_file,
)
from .retrieval import aggregate_strategies, build_index, cosine_distance, nearest
from .simulation import (
    ConversationLimits,
    GeneratorSchedule,
    generate_batch,
    run_conversation,
    sample_scenarios,
    schedule_p,
    select_generator,
)
from .teaching import apply_delta, critique, teach_scenario
from .trainer import TrainerConfig, goal_evaluate, should_terminate, train
from .evaluation import (
    EvaluationReport,
    JudgeConfig,
    evaluate_set,
    first_half,
    half_conversation_delta,
    judge_conversation,
    keyword_strategy_share,
    shift_stats,
)

__all__ = [
    "BasePrompt", "Conversation", "CritiqueDelta", "CustomerProfile", "Library",
    "LibraryEntry", "Scenario", "StrategyBullet", "StrategyPrompt", "Utterance",
    "all_profiles", "scenario_prefix",
    "BackendConfig", "Backends", "ChatMessage", "GenerationParams", "chat", "embed",
    "append_entry", "edit_entry", "load_library", "load_library_file",
    "save_library", "save_library_file",
    "aggregate_strategies", "build_index", "cosine_distance", "nearest",
    "ConversationLimits", "GeneratorSchedule", "generate_batch", "run_conversation",
    "sample_scenarios", "schedule_p", "select_generator",
    "apply_delta", "critique", "teach_scenario",
    "TrainerConfig", "goal_evaluate", "should_terminate", "train",
    "EvaluationReport", "JudgeConfig", "evaluate_set", "first_half",
    "half_conversation_delta", "judge_conversation", "keyword_strategy_share",
    "shift_stats",
]
