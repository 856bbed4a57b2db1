"""The outer training loop: generate, sample, teach, append, evaluate, terminate."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

from .domain import (
    BasePrompt,
    Conversation,
    CustomerProfile,
    Generator,
    Library,
    all_profiles,
)
from .evaluation import (
    EvaluationError,
    ExemplarSet,
    JudgeConfig,
    evaluate_set,
)
from .gateway import AGENT_PARAMS, Backends, GatewayError, GenerationParams
from .library import (
    append_entry,
    append_transcript,
    conversation_from_dict,
    conversation_to_dict,
    load_library_file,
    save_library_file,
)
from .simulation import (
    ConversationLimits,
    GeneratorSchedule,
    StudentRunner,
    TeacherRunner,
    generate_batch,
    batch_manifest,
    run_conversation,
    sample_scenarios,
)
from .retrieval import build_index
from .teaching import teach_scenario

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    schedule: GeneratorSchedule = field(default_factory=GeneratorSchedule)
    profiles: Optional[list[CustomerProfile]] = None  # None = all 32
    reps: int = 1
    scenarios_per_conversation: int = 2
    max_rounds: int = 5
    patience: int = 2
    epsilon: float = 0.05
    max_iterations: int = 10
    validation_size: int = 32
    k_train: int = 1
    seed: int = 0
    context: str = "ticket-cancellation"
    token_budget: int = 512
    exemplar_set: ExemplarSet = ExemplarSet.DEMANDING
    exemplar_count: int = 2
    limits: ConversationLimits = field(default_factory=ConversationLimits)
    concurrency: int = 1

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    def resolved_profiles(self) -> list[CustomerProfile]:
        return list(self.profiles) if self.profiles else all_profiles()


@dataclass
class IterationReport:
    t: int
    new_entries: int
    library_size: int
    validation_score: float
    generator_counts: tuple[int, int]  # (teacher, student)


@dataclass
class TrainResult:
    library: Library
    reports: list[IterationReport]
    termination_reason: str  # no_improvement | max_iterations | backend_failure


def should_terminate(history: Sequence[float], patience: int, epsilon: float) -> bool:
    """True iff each of the last `patience` scores fails to beat its best prior by > epsilon."""
    if not history:
        raise ValueError("history must be non-empty")
    if len(history) <= patience:
        return False
    for i in range(len(history) - patience, len(history)):
        if history[i] - max(history[:i]) > epsilon:
            return False
    return True


def _pick_exemplars(convs: Sequence[Conversation], exemplar_set: ExemplarSet,
                    count: int) -> list[Conversation]:
    want = exemplar_set is ExemplarSet.DEMANDING
    chosen = [c for c in convs
              if c.generator is Generator.TEACHER and c.usable
              and c.profile.demanding == want][:count]
    if not chosen:
        raise EvaluationError(
            f"no usable teacher-generated {exemplar_set.value} conversations for judge "
            "exemplars; adjust profiles or exemplar_set"
        )
    return chosen


def _student_runner(library: Library, cfg: TrainerConfig, backends: Backends,
                    base: BasePrompt, params: GenerationParams) -> StudentRunner:
    index = build_index(library) if library.n > 0 else None
    return StudentRunner(
        backend=backends.student,
        base=base,
        params=params,
        embedder=backends.embedder,
        index=index,
        library=library,
        k=cfg.k_train,
        token_budget=cfg.token_budget,
        summarizer=backends.teacher,
    )


def _validation_conversations(library: Library, t: int, cfg: TrainerConfig,
                              backends: Backends, base: BasePrompt,
                              n: int, tag: str) -> list[Conversation]:
    runner = _student_runner(library, cfg, backends, base, AGENT_PARAMS)
    profiles = cfg.resolved_profiles()
    rng = random.Random(f"{cfg.seed}:{tag}:{t}")
    convs = []
    for i in range(n):
        params = GenerationParams(temperature=0.7, seed=rng.getrandbits(32))
        convs.append(run_conversation(
            runner, profiles[i % len(profiles)], cfg.limits,
            customer_backend=backends.customer, context=cfg.context,
            customer_params=params, iteration=t, conv_id=f"{tag}-t{t}-{i}",
        ))
    return [c for c in convs if c.usable]


def goal_evaluate(library: Library, t: int, cfg: TrainerConfig, backends: Backends,
                  base: BasePrompt, exemplars: list[Conversation]) -> float:
    """Mean judge rating over fresh student-only validation conversations.

    The validation set is held out: conversations are scored and discarded.
    A failed evaluation is retried once before propagating.
    """
    if library.n == 0:
        raise ValueError("library must be non-empty before evaluation")
    judge_cfg = JudgeConfig(backends.judge, cfg.exemplar_set, exemplars)
    last_error: Optional[Exception] = None
    for attempt in range(2):
        convs = _validation_conversations(library, t, cfg, backends, base,
                                          cfg.validation_size, f"val{attempt or ''}")
        try:
            if not convs:
                raise EvaluationError("every validation conversation failed; backend outage?")
            return evaluate_set(convs, judge_cfg).mean
        except EvaluationError as exc:
            log.warning("goal evaluation attempt %d failed: %s", attempt + 1, exc)
            last_error = exc
    raise last_error  # type: ignore[misc]


def _state_path(run_dir: Path) -> Path:
    return run_dir / "state.json"


def _library_path(run_dir: Path) -> Path:
    return run_dir / "library.json"


def _save_state(run_dir: Path, cfg: TrainerConfig, t: int, scores: list[float],
                reports: list[IterationReport], exemplars: list[Conversation],
                termination_reason: Optional[str]) -> None:
    state = {
        "t": t,
        "seed": cfg.seed,
        "score_history": scores,
        "reports": [
            {
                "t": r.t,
                "new_entries": r.new_entries,
                "library_size": r.library_size,
                "validation_score": r.validation_score,
                "generator_counts": list(r.generator_counts),
            }
            for r in reports
        ],
        "exemplars": [conversation_to_dict(c) for c in exemplars],
        "termination_reason": termination_reason,
    }
    _state_path(run_dir).write_text(json.dumps(state, indent=2), encoding="utf-8")


def _load_state(run_dir: Path) -> dict:
    return json.loads(_state_path(run_dir).read_text(encoding="utf-8"))


def train(cfg: TrainerConfig, backends: Backends, base: BasePrompt, *,
          run_dir: Optional[Union[str, Path]] = None,
          resume: bool = False) -> TrainResult:
    """Run the iterative loop; checkpoints after every iteration when run_dir is set.

    With resume=True, continues from run_dir's last persisted iteration and, with
    deterministic backends, reproduces the uninterrupted run exactly.
    """
    out = Path(run_dir) if run_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    reports: list[IterationReport] = []
    scores: list[float] = []
    exemplars: list[Conversation] = []
    start_t = 1
    if resume:
        if out is None:
            raise ValueError("resume requires run_dir")
        state = _load_state(out)
        if state["seed"] != cfg.seed:
            raise ValueError(f"checkpoint seed {state['seed']} != config seed {cfg.seed}")
        library = load_library_file(_library_path(out))
        scores = list(state["score_history"])
        reports = [
            IterationReport(r["t"], r["new_entries"], r["library_size"],
                            r["validation_score"], tuple(r["generator_counts"]))
            for r in state["reports"]
        ]
        exemplars = [conversation_from_dict(c, "checkpoint") for c in state["exemplars"]]
        start_t = state["t"] + 1
        log.info("resuming from iteration %d (library n=%d)", start_t, library.n)
    else:
        library = Library(
            embedding_model_id=backends.embedder.model_id,
            context_tag=cfg.context,
        )

    profiles = cfg.resolved_profiles()
    termination_reason = "max_iterations"
    for t in range(start_t, cfg.max_iterations + 1):
        teacher_runner = TeacherRunner(backends.teacher, base)
        student_runner = _student_runner(library, cfg, backends, base, AGENT_PARAMS)
        rng = random.Random(f"{cfg.seed}:batch:{t}")
        try:
            batch = generate_batch(
                t, (teacher_runner, student_runner), cfg.schedule, profiles,
                cfg.reps, rng,
                customer_backend=backends.customer, context=cfg.context,
                limits=cfg.limits, concurrency=cfg.concurrency,
            )
            if out is not None:
                transcripts = out / f"transcripts-t{t}.jsonl"
                transcripts.unlink(missing_ok=True)
                for conv in batch:
                    append_transcript(transcripts, conv)
                (out / f"manifest-t{t}.json").write_text(
                    json.dumps(batch_manifest(t, cfg.seed, cfg.schedule, batch), indent=2),
                    encoding="utf-8",
                )
            if t == 1 and not exemplars:
                exemplars = _pick_exemplars(batch, cfg.exemplar_set, cfg.exemplar_count)

            usable = [c for c in batch if c.usable and c.customer_turns() >= 1]
            scenarios = []
            for i, conv in enumerate(usable):
                srng = random.Random(f"{cfg.seed}:sample:{t}:{i}")
                scenarios.extend(sample_scenarios(
                    conv, cfg.scenarios_per_conversation, srng,
                    embedder=backends.embedder,
                ))

            new_entries = 0
            for scenario in scenarios:
                entry = _teach_with_requeue(scenario, cfg, backends, base, t)
                if entry is None:
                    continue
                append_entry(library, entry)
                new_entries += 1

            score = goal_evaluate(library, t, cfg, backends, base, exemplars)
        except (GatewayError, EvaluationError) as exc:
            log.error("backend outage at iteration %d: %s", t, exc)
            termination_reason = "backend_failure"
            if out is not None:
                # keep the interrupted iteration's work for forensics, then roll
                # back to the last committed checkpoint so resume stays exact
                save_library_file(library, out / f"library-partial-t{t}.json")
                if _library_path(out).exists():
                    library = load_library_file(_library_path(out))
                else:
                    library = Library(embedding_model_id=backends.embedder.model_id,
                                      context_tag=cfg.context)
                _save_state(out, cfg, t - 1, scores, reports, exemplars, termination_reason)
            break

        scores.append(score)
        counts = (
            sum(1 for c in batch if c.generator is Generator.TEACHER),
            sum(1 for c in batch if c.generator is Generator.STUDENT),
        )
        reports.append(IterationReport(t, new_entries, library.n, score, counts))
        if out is not None:
            save_library_file(library, _library_path(out))
            _save_state(out, cfg, t, scores, reports, exemplars, None)

        if should_terminate(scores, cfg.patience, cfg.epsilon):
            termination_reason = "no_improvement"
            break
    if out is not None:
        _save_state(out, cfg, reports[-1].t if reports else 0, scores, reports,
                    exemplars, termination_reason)
    return TrainResult(library=library, reports=reports,
                       termination_reason=termination_reason)


def _teach_with_requeue(scenario, cfg: TrainerConfig, backends: Backends,
                        base: BasePrompt, t: int):
    """One retry on gateway failure, then drop the scenario with a warning."""
    for attempt in range(2):
        try:
            return teach_scenario(
                scenario, cfg.max_rounds,
                teacher_backend=backends.teacher,
                student_backend=backends.student,
                base=base,
                created_iteration=t,
            )
        except GatewayError as exc:
            if attempt == 0:
                log.warning("teaching %s failed (%s); re-queueing once", scenario.id, exc)
            else:
                log.warning("teaching %s failed twice; dropping scenario", scenario.id)
    return None


@dataclass
class EvalRunConfig:
    """Knobs for a standalone evaluation/transfer run."""

    n_conversations: int = 8
    k: int = 1
    token_budget: int = 512
    exemplar_set: ExemplarSet = ExemplarSet.DEMANDING
    exemplar_count: int = 2
    seed: int = 0
    limits: ConversationLimits = field(default_factory=ConversationLimits)
    method_label: str = "strategy-imitation"


def transfer_run(lib: Library, new_context: str, cfg: EvalRunConfig,
                 backends: Backends, base: BasePrompt):
    """Evaluate the student under a (possibly foreign) library in a target context.

    The library is used unchanged; the report label records the library's
    context tag, the run context, and the student model id.
    """
    if backends.embedder.model_id != lib.embedding_model_id:
        raise ValueError(
            f"library embeddings come from {lib.embedding_model_id!r}, configured "
            f"embedder is {backends.embedder.model_id!r}; refusing mixed-model retrieval"
        )
    tcfg = TrainerConfig(
        seed=cfg.seed,
        context=new_context,
        k_train=cfg.k,
        token_budget=cfg.token_budget,
        exemplar_set=cfg.exemplar_set,
        exemplar_count=cfg.exemplar_count,
        limits=cfg.limits,
        validation_size=cfg.n_conversations,
    )
    convs = _validation_conversations(lib, 1, tcfg, backends, base,
                                      cfg.n_conversations, "transfer")
    exemplars = _transfer_exemplars(tcfg, backends, base, cfg)
    judge_cfg = JudgeConfig(backends.judge, cfg.exemplar_set, exemplars)
    label = f"{cfg.method_label} [library={lib.context_tag} context={new_context}]"
    return evaluate_set(convs, judge_cfg, method_label=label,
                        model_id=backends.student.model_id)


def _transfer_exemplars(tcfg: TrainerConfig, backends: Backends, base: BasePrompt,
                        cfg: EvalRunConfig) -> list[Conversation]:
    """Fresh teacher-generated exemplars in the run's context."""
    runner = TeacherRunner(backends.teacher, base)
    want = cfg.exemplar_set is ExemplarSet.DEMANDING
    profiles = [p for p in all_profiles() if p.demanding == want]
    rng = random.Random(f"{cfg.seed}:exemplar")
    convs = []
    for i in range(cfg.exemplar_count):
        params = GenerationParams(temperature=0.7, seed=rng.getrandbits(32))
        convs.append(run_conversation(
            runner, profiles[i % len(profiles)], cfg.limits,
            customer_backend=backends.customer, context=tcfg.context,
            customer_params=params, iteration=1, conv_id=f"exemplar-{i}",
        ))
    usable = [c for c in convs if c.usable]
    if not usable:
        raise EvaluationError("could not generate judge exemplars in the target context")
    return usable
