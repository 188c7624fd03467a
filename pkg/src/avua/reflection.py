"""Evaluator and refiner model calls."""

from __future__ import annotations

import re

from avua.errors import EvalParseFailure
from avua.gateway import DecodingParams, Gateway, PromptBundle, Transcript
from avua.prompts import DEFAULT_CATALOG, PromptCatalog
from avua.types import Evaluation, Policy, Question, Refinement, Termination, Trajectory

TRAJECTORY_CHAR_LIMIT = 8000
TRUNCATION_MARKER = "[... earlier steps truncated ...]\n"

_VERDICT = re.compile(r"evaluation\s*[:=]?\s*\**\s*(true|false)\b", re.IGNORECASE)
_CONFIDENCE = re.compile(r"confidence\s*[:=]?\s*\**\s*(-?\d+(?:\.\d+)?)", re.IGNORECASE)
_PLAN_HEADING = re.compile(r"^[ \t]*[#*\-]*[ \t]*(?:[A-Za-z]+[ \t]+){0,2}plan\b[^:\n]*:[ \t]*\**[ \t]*",
                           re.IGNORECASE | re.MULTILINE)
_DIAGNOSIS_LABEL = re.compile(r"^\s*[#*\-]*\s*diagnos[ie]s\s*\**\s*:\s*\**\s*", re.IGNORECASE)

EVAL_REMINDER = "Answer exactly in the form: Evaluation: True, Confidence: 90"


def parse_evaluation(text: str) -> Evaluation:
    """Parse ``Evaluation: True|False`` and ``Confidence: N``; confidence is clamped to [0, 100]."""
    v = _VERDICT.search(text)
    c = _CONFIDENCE.search(text)
    if v is None or c is None:
        raise EvalParseFailure(f"cannot parse evaluation from {text[:80]!r}")
    confidence = round(float(c.group(1)))
    return Evaluation(verdict=v.group(1).lower() == "true", confidence=confidence, raw_text=text)


def parse_refinement(text: str) -> Refinement:
    m = _PLAN_HEADING.search(text)
    if m is None:
        body = text.strip()
        return Refinement(diagnosis=body, refined_plan=body, raw_text=text)
    diagnosis = _DIAGNOSIS_LABEL.sub("", text[:m.start()].strip(), count=1).strip()
    plan = text[m.end():].strip()
    if not plan:
        plan = text.strip()
    return Refinement(diagnosis=diagnosis or text.strip(), refined_plan=plan, raw_text=text)


def truncated_trajectory(tau: Trajectory, limit: int = TRAJECTORY_CHAR_LIMIT) -> str:
    text = tau.render(include_final=False)
    if len(text) <= limit:
        return text
    return TRUNCATION_MARKER + text[-limit:]


class Reflector:
    def __init__(self, gateway: Gateway, catalog: PromptCatalog = DEFAULT_CATALOG,
                 trajectory_limit: int = TRAJECTORY_CHAR_LIMIT) -> None:
        self.gateway = gateway
        self.catalog = catalog
        self.trajectory_limit = trajectory_limit

    def render_evaluation(self, q: Question, pi: Policy | None, tau: Trajectory) -> PromptBundle:
        user = (
            f"{q.render()}\n\n"
            + (f"Policy:\n{pi.raw_text}\n\n" if pi is not None else "")
            + f"Reasoning trajectory:\n{truncated_trajectory(tau, self.trajectory_limit)}\n\n"
            f"Final Answer: {tau.final_answer}\n\nEvaluation:"
        )
        return PromptBundle(user_text=user, system_text=self.catalog.get("evaluator"),
                            decoding=DecodingParams(max_tokens=128), tag="evaluator")

    def evaluate(self, q: Question, pi: Policy | None, tau: Trajectory,
                 transcript: Transcript | None = None) -> Evaluation:
        if tau.final_answer is None or tau.terminated_by is not Termination.FINAL_ANSWER:
            return Evaluation(verdict=False, confidence=100, raw_text="(auto: no final answer)")
        bundle = self.render_evaluation(q, pi, tau)
        try:
            return parse_evaluation(self.gateway.complete(bundle, transcript))
        except EvalParseFailure:
            retry = PromptBundle(user_text=bundle.user_text + "\n\n" + EVAL_REMINDER,
                                 system_text=bundle.system_text, decoding=bundle.decoding, tag="evaluator")
            text = self.gateway.complete(retry, transcript)
            try:
                return parse_evaluation(text)
            except EvalParseFailure:
                return Evaluation(verdict=False, confidence=0, raw_text=text)

    def render_refinement(self, q: Question, pi: Policy | None, tau: Trajectory,
                          ev: Evaluation | None) -> PromptBundle:
        if ev is None:
            ev_text = "Evaluation: not available"
        else:
            ev_text = f"Evaluation: {ev.verdict}, Confidence: {ev.confidence}"
        answer = tau.final_answer if tau.final_answer is not None else f"(none; trial ended by {tau.terminated_by.value})"
        user = (
            f"{q.render()}\n\n"
            + (f"Policy:\n{pi.raw_text}\n\n" if pi is not None else "")
            + f"Previous trial:\n{truncated_trajectory(tau, self.trajectory_limit)}\n"
            f"Final Answer: {answer}\n\n{ev_text}\n\n"
            "Reply with 'Diagnosis:' followed by 'Refined plan:'."
        )
        return PromptBundle(user_text=user, system_text=self.catalog.get("refiner"),
                            decoding=DecodingParams(), tag="refiner")

    def refine(self, q: Question, pi: Policy | None, tau: Trajectory, ev: Evaluation | None,
               transcript: Transcript | None = None) -> Refinement:
        return parse_refinement(self.gateway.complete(self.render_refinement(q, pi, tau, ev), transcript))
