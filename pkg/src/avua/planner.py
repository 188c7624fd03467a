"""The ReAct planner and the multi-trial evaluate/refine episode loop."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any

from avua.errors import (
    EpisodeAbort,
    PolicyParseFailure,
    StepParseFailure,
    ToolFatal,
    UnknownTool,
)
from avua.gateway import DecodingParams, Gateway, PromptBundle, Transcript
from avua.memory import MemoryStore, ShortTermCache
from avua.policy import PolicyEngine
from avua.prompts import DEFAULT_CATALOG, PromptCatalog
from avua.reflection import Reflector
from avua.sampler import Sampler, parse_frame_spec, validate_indices
from avua.toolbox import FrameLedger, Toolbox
from avua.trace import TraceWriter
from avua.types import (
    ActionInput,
    DatasetKind,
    Evaluation,
    Policy,
    Question,
    Refinement,
    Step,
    Termination,
    Trajectory,
    VideoMeta,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 15
DEFAULT_MAX_TRIALS = 2

MCQ_SENTENCE = "You must choose one of the options among Option 0, Option 1, Option 2, Option 3, Option 4."
ANSWER_FORMATS = {
    DatasetKind.TEMPORAL_LOCALIZATION: "You must answer with the frame window [start_frame, end_frame] "
                                       "in which the answer can be found.",
    DatasetKind.OPEN_ENDED: "Answer the question with a short phrase.",
}
FORMAT_REMINDER = (
    "Your last reply did not follow the required format. Reply with either\n"
    "Thought: ...\nAction: <tool name>\nAction Input: <input>\nor\nFinal Answer: <answer>"
)
KIND_LABELS = {
    DatasetKind.MCQ: "multiple choice question",
    DatasetKind.TEMPORAL_LOCALIZATION: "temporal localization",
    DatasetKind.OPEN_ENDED: "open-ended question",
}


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class AblationConfig:
    use_memory: bool = True
    use_evaluator: bool = True
    use_sampler: bool = True
    use_refiner: bool = True
    react_only: bool = False

    def __post_init__(self) -> None:
        if self.react_only:
            for name in ("use_memory", "use_evaluator", "use_sampler", "use_refiner"):
                object.__setattr__(self, name, False)

    @classmethod
    def from_name(cls, name: str) -> "AblationConfig":
        key = re.sub(r"[\s_]+", "-", name.strip().lower())
        if key in ("ours", "full", "none", ""):
            return cls()
        if key in ("react", "react-only", "plain-react"):
            return cls(react_only=True)
        m = re.fullmatch(r"-?w/?o-?(memory|evaluator|sampler|refiner)", key)
        if m is None:
            raise ValueError(f"unknown ablation {name!r}")
        return cls(**{f"use_{m.group(1)}": False})

    @property
    def name(self) -> str:
        if self.react_only:
            return "react"
        off = [c for c in ("memory", "evaluator", "sampler", "refiner") if not getattr(self, f"use_{c}")]
        if not off:
            return "ours"
        return "+".join(f"w/o-{c}" for c in off)


ABLATION_ROWS = ("ours", "w/o-memory", "w/o-evaluator", "w/o-sampler", "w/o-refiner", "react")


@dataclass(frozen=True)
class AgentConfig:
    max_steps: int = DEFAULT_MAX_STEPS
    max_trials: int = DEFAULT_MAX_TRIALS
    sampler_cap: int = 16
    inherit_cache: bool = True
    retrieve_on_first_trial: bool = True
    memory_k: int = 3
    only_successful: bool = False
    eval_confidence_gate: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# Parsing

_LABEL = re.compile(
    r"^[ \t]*[*#]*[ \t]*(thought|action[ \t_-]*input|action|final[ \t_-]*answer)[ \t]*\**[ \t]*:",
    re.IGNORECASE | re.MULTILINE,
)
_OBSERVATION = re.compile(r"^[ \t]*observation[ \t]*:", re.IGNORECASE | re.MULTILINE)


@dataclass
class StepHeader:
    thought: str
    action: str
    action_input: str


@dataclass
class FinalAnswer:
    answer: str


def parse_step(text: str) -> StepHeader | FinalAnswer:
    """Recognise a Thought/Action/Action Input block or a Final Answer block."""
    obs = _OBSERVATION.search(text)
    if obs:
        # anything from a self-written observation on is hallucinated
        text = text[:obs.start()]
    labels = list(_LABEL.finditer(text))
    fields: dict[str, str] = {}
    for i, m in enumerate(labels):
        key = re.sub(r"[\s_-]+", " ", m.group(1).lower())
        if key in fields:
            continue
        if key == "final answer":
            fields[key] = text[m.end():].strip()
            continue
        end = labels[i + 1].start() if i + 1 < len(labels) else len(text)
        fields[key] = text[m.end():end].strip()

    if fields.get("final answer"):
        return FinalAnswer(fields["final answer"])
    action = _clean_action(fields.get("action", ""))
    if action and fields.get("action input"):
        return StepHeader(thought=fields.get("thought", ""), action=action, action_input=fields["action input"])
    raise StepParseFailure(f"no Action/Action Input or Final Answer in {text[:80]!r}")


def _clean_action(text: str) -> str:
    first = text.strip().splitlines()[0] if text.strip() else ""
    return first.strip().strip("`'\"[]<>*").removesuffix("()").strip().rstrip(".:;,")


_OPTION = re.compile(r"\boption\s*[:#]?\s*(\d+)\b", re.IGNORECASE)
_BARE_OPTION = re.compile(r"^\s*[(\[]?\s*(\d+)\s*[)\]]?\s*[.:]?\s*$")


def normalize_mcq(text: str | None) -> str | None:
    """Map ``option 3``, ``(3)``, ``Option 3: ...`` to ``Option 3``; None when no option is named."""
    if not text:
        return None
    m = _OPTION.search(text) or _BARE_OPTION.match(text) or re.search(r"\((\d+)\)", text)
    return f"Option {int(m.group(1))}" if m else None


_WINDOW = re.compile(r"[\[(]\s*(-?\d+(?:\.\d+)?)\s*[,;]\s*(-?\d+(?:\.\d+)?)\s*[\])]")


def parse_window(text: str | None) -> tuple[int, int] | None:
    """Parse ``[start,end]``; reversed bounds are swapped."""
    if not text:
        return None
    m = _WINDOW.search(text)
    if m is None:
        return None
    a, b = round(float(m.group(1))), round(float(m.group(2)))
    return (a, b) if a <= b else (b, a)


# ---------------------------------------------------------------------------
# Results


@dataclass
class TrialRecord:
    policy: Policy | None
    trajectory: Trajectory
    evaluation: Evaluation | None
    refinement: Refinement | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "policy": self.policy.to_dict() if self.policy else None,
            "trajectory": self.trajectory.to_dict(),
            "evaluation": self.evaluation.__dict__.copy() if self.evaluation else None,
            "refinement": self.refinement.__dict__.copy() if self.refinement else None,
        }


@dataclass
class EpisodeResult:
    trials: list[TrialRecord]
    answer: str
    frames_accessed: int
    distinct_frames_accessed: int
    ratio: float
    per_tool: dict[str, int] = field(default_factory=dict)
    transcript_ref: str | None = None
    transcript: Transcript | None = field(default=None, repr=False)
    trace: TraceWriter | None = field(default=None, repr=False)
    accessed_frames: list[int] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trials": [t.to_dict() for t in self.trials],
            "answer": self.answer,
            "frames_accessed": self.frames_accessed,
            "distinct_frames_accessed": self.distinct_frames_accessed,
            "ratio": self.ratio,
            "per_tool": dict(self.per_tool),
            "transcript_ref": self.transcript_ref,
        }


@dataclass
class _Episode:
    transcript: Transcript
    ledger: FrameLedger
    cache: ShortTermCache
    trace: TraceWriter


# ---------------------------------------------------------------------------
# Agent


class Agent:
    """Planner L plus its collaborators (policy engine, sampler, evaluator, refiner, memory)."""

    def __init__(self, gateway: Gateway, toolbox: Toolbox, memory: MemoryStore | None = None,
                 catalog: PromptCatalog = DEFAULT_CATALOG, config: AgentConfig = AgentConfig()) -> None:
        self.gateway = gateway
        self.toolbox = toolbox
        self.memory = memory
        self.catalog = catalog
        self.config = config
        self.policy_engine = PolicyEngine(gateway, catalog)
        self.sampler = Sampler(gateway, catalog, cap=config.sampler_cap)
        self.reflector = Reflector(gateway, catalog)

    # -- prompt ---------------------------------------------------------------

    def render_agent_prompt(self, q: Question, meta: VideoMeta, pi: Policy | None, tau: Trajectory,
                            cfg: AblationConfig, reminder: bool = False) -> PromptBundle:
        scenes = ", ".join(str(f) for f in meta.scene_change_frames) if meta.scene_change_frames else "not available"
        system = self.catalog.render(
            "agent",
            duration_min=f"{meta.duration_sec / 60:.1f}",
            duration_sec=f"{meta.duration_sec:g}",
            frame_rate=f"{meta.frame_rate:g}",
            total_frames=meta.total_frames,
            scene_list=scenes,
            tools=self.toolbox.describe(),
            tool_names=", ".join(self.toolbox.names),
        )
        if q.dataset_kind in ANSWER_FORMATS:
            system = system.replace(MCQ_SENTENCE, ANSWER_FORMATS[q.dataset_kind])
        parts = [q.render()]
        if pi is not None and not cfg.react_only:
            parts.append(f"Policy:\n{pi.raw_text}")
        scratch = tau.render(include_final=False)
        parts.append(scratch if scratch else "Begin.")
        if reminder:
            parts.append(FORMAT_REMINDER)
        return PromptBundle(user_text="\n\n".join(parts), system_text=system,
                            decoding=DecodingParams(stop_sequences=("\nObservation:",)), tag="agent")

    # -- one trial ------------------------------------------------------------

    def run_trial(self, q: Question, meta: VideoMeta, pi: Policy | None, cfg: AblationConfig,
                  budget: int | None = None, *, trial: int = 1, ledger: FrameLedger | None = None,
                  cache: ShortTermCache | None = None, transcript: Transcript | None = None,
                  trace: TraceWriter | None = None) -> Trajectory:
        budget = self.config.max_steps if budget is None else budget
        if budget < 1:
            raise ValueError("step budget must be >= 1")
        ep = _Episode(transcript if transcript is not None else Transcript(),
                      ledger if ledger is not None else FrameLedger(),
                      cache if cache is not None else ShortTermCache(),
                      trace if trace is not None else TraceWriter())
        return self._run_trial(q, meta, pi, cfg, budget, trial, ep)

    def _run_trial(self, q: Question, meta: VideoMeta, pi: Policy | None, cfg: AblationConfig,
                   budget: int, trial: int, ep: _Episode) -> Trajectory:
        tau = Trajectory()
        while len(tau.steps) < budget:
            parsed = self._next_step(q, meta, pi, tau, cfg, ep)
            if parsed is None:
                tau.terminated_by = Termination.PARSE_ABORT
                return tau
            if isinstance(parsed, FinalAnswer):
                tau.final_answer = parsed.answer
                tau.terminated_by = Termination.FINAL_ANSWER
                return tau

            step = Step(index=len(tau.steps) + 1, thought=parsed.thought, action=parsed.action,
                        action_input=parse_frame_spec(parsed.action_input))
            fatal = self._dispatch(step, q, meta, pi, tau, cfg, trial, ep)
            tau.steps.append(step)
            if fatal:
                tau.terminated_by = Termination.TOOL_FATAL
                return tau
        tau.terminated_by = Termination.STEP_BUDGET
        return tau

    def _next_step(self, q, meta, pi, tau, cfg, ep) -> StepHeader | FinalAnswer | None:
        for reminder in (False, True):
            bundle = self.render_agent_prompt(q, meta, pi, tau, cfg, reminder=reminder)
            text = self.gateway.complete(bundle, ep.transcript)
            try:
                return parse_step(text)
            except StepParseFailure:
                logger.info("unparseable agent step (reminder=%s)", reminder)
        return None

    def _dispatch(self, step: Step, q: Question, meta: VideoMeta, pi: Policy | None, tau: Trajectory,
                  cfg: AblationConfig, trial: int, ep: _Episode) -> bool:
        """Fill in the step's observation. Returns True if the tool failure is fatal."""
        ai = step.action_input
        warnings: list[str] = []
        if ai.frame_indices:
            indices, warnings = validate_indices(ai.frame_indices, meta.total_frames)
            ai = replace(ai, frame_indices=indices)
            if cfg.use_sampler:
                suggestion = self.sampler.suggest(pi, tau, meta, ai, ep.transcript)
                ep.trace.record("sampler", trial, {
                    "step": step.index,
                    "proposed": ai.frame_indices,
                    "suggested": suggestion.indices,
                    "mode": suggestion.mode,
                    "rationale": suggestion.rationale,
                })
                ai = replace(ai, frame_indices=suggestion.indices)
        step.action_input = ai

        fatal = False
        try:
            obs = self.toolbox.invoke(step.action, ai, ep.ledger, meta, ep.cache)
            text, charged, hit = obs.text, obs.frames_charged, obs.cache_hit
        except UnknownTool as exc:
            text, charged, hit = f"Error: {exc}", [], False
        except ToolFatal as exc:
            text, charged, hit, fatal = f"Fatal tool error: {exc}", [], False, True
        if warnings:
            text = "Warning: " + "; ".join(warnings) + "\n" + text
        step.observation, step.frames_charged, step.cache_hit = text, list(charged), hit
        ep.trace.record("step", trial, {
            "index": step.index,
            "thought": step.thought,
            "action": step.action,
            "action_input": ai.raw,
            "frame_indices": ai.frame_indices,
            "query": ai.query,
            "observation": step.observation,
            "cache_hit": hit,
        }, step.frames_charged)
        return fatal

    # -- episode --------------------------------------------------------------

    def _retrieve(self, q: Question, question_type: str) -> list:
        hits = self.memory.retrieve(question_type, q.text, k=self.config.memory_k,
                                    only_successful=self.config.only_successful)
        return [rec for rec, _ in hits]

    def _passed(self, ev: Evaluation | None) -> bool:
        if ev is None or not ev.verdict:
            return False
        gate = self.config.eval_confidence_gate
        return gate is None or ev.confidence >= gate

    def run_episode(self, q: Question, meta: VideoMeta, cfg: AblationConfig = AblationConfig(),
                    max_trials: int | None = None, *, header: dict[str, Any] | None = None) -> EpisodeResult:
        max_trials = self.config.max_trials if max_trials is None else max_trials
        if max_trials < 1:
            raise ValueError("max_trials must be >= 1")
        ep = _Episode(Transcript(), FrameLedger(), ShortTermCache(), TraceWriter())
        ep.trace.record("header", 0, {
            "question": q.to_dict(),
            "meta": meta.to_dict(),
            "ablation": cfg.name,
            "agent_config": self.config.to_dict(),
            **(header or {}),
        })

        trials: list[TrialRecord] = []
        refinement: Refinement | None = None
        question_type = KIND_LABELS[q.dataset_kind]
        for t in range(1, max_trials + 1):
            if t > 1 and not self.config.inherit_cache:
                ep.cache = ShortTermCache()
            pi = None
            if not cfg.react_only:
                experiences = []
                if cfg.use_memory and self.memory is not None and (t > 1 or self.config.retrieve_on_first_trial):
                    experiences = self._retrieve(q, question_type)
                try:
                    pi = self.policy_engine.generate(q, meta, experiences, refinement, ep.transcript)
                    question_type = pi.question_type
                    ep.trace.record("policy", t, {**pi.to_dict(), "experiences": [r.id for r in experiences]})
                except PolicyParseFailure as exc:
                    logger.warning("policy unparseable after reprompt: %s", exc)
                    ep.trace.record("policy", t, {"error": str(exc), "experiences": [r.id for r in experiences]})

            tau = self._run_trial(q, meta, pi, cfg, self.config.max_steps, t, ep)

            ev = None
            if cfg.use_evaluator:
                ev = self.reflector.evaluate(q, pi, tau, ep.transcript)
                ep.trace.record("evaluation", t, {"verdict": ev.verdict, "confidence": ev.confidence,
                                                  "raw_text": ev.raw_text})
            retry = cfg.use_evaluator and cfg.use_refiner and not self._passed(ev) and t < max_trials
            ref = None
            if cfg.use_refiner:
                # produced regardless of the verdict: fuels the retry or the memory record
                ref = self.reflector.refine(q, pi, tau, ev, ep.transcript)
                ep.trace.record("refinement", t, dict(ref.__dict__))
            trials.append(TrialRecord(pi, tau, ev, ref))
            if not retry:
                break
            refinement = ref

        last = trials[-1]
        answer = next((tr.trajectory.final_answer for tr in reversed(trials)
                       if tr.trajectory.final_answer is not None), None)

        if cfg.use_memory and self.memory is not None:
            ev = last.evaluation
            rec = self.memory.new_record(
                last.policy.question_type if last.policy else question_type, q.text,
                policy_raw=last.policy.raw_text if last.policy else "",
                trajectory=last.trajectory, refinement=last.refinement,
                verdict=bool(ev and ev.verdict), confidence=ev.confidence if ev else 0,
                final_answer=answer,
            )
            self.memory.put(rec)

        distinct = len(ep.ledger.distinct_frames)
        ratio = distinct / meta.total_frames
        ep.trace.record("final", len(trials), {
            "answer": answer if answer is not None else "",
            "trials": len(trials),
            "frames_accessed": ep.ledger.total_charges,
            "distinct_frames_accessed": distinct,
            "ratio": ratio,
            "per_tool": dict(sorted(ep.ledger.per_tool.items())),
            "terminations": [tr.trajectory.terminated_by.value for tr in trials],
        })
        result = EpisodeResult(
            trials=trials,
            answer=answer if answer is not None else "",
            frames_accessed=ep.ledger.total_charges,
            distinct_frames_accessed=distinct,
            ratio=ratio,
            per_tool=dict(sorted(ep.ledger.per_tool.items())),
            transcript=ep.transcript,
            trace=ep.trace,
            accessed_frames=sorted(ep.ledger.distinct_frames),
        )
        if all(tr.trajectory.terminated_by is Termination.PARSE_ABORT for tr in trials):
            err = EpisodeAbort("every trial ended without a parseable step or final answer")
            err.result = result
            raise err
        return result
