"""Policy generation and parsing.

A policy is the pre-trial plan: a free-text question type, an analysis of
the question and a frame sampling strategy. Model output is parsed
leniently by headings; one reprompt is allowed before giving up.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from avua.errors import PolicyParseFailure
from avua.gateway import DecodingParams, Gateway, PromptBundle, Transcript
from avua.memory import MemoryRecord
from avua.prompts import DEFAULT_CATALOG, PromptCatalog
from avua.types import Policy, Provenance, Question, Refinement, VideoMeta

MAX_EXPERIENCES = 3

REPROMPT_REMINDER = (
    "Your previous answer could not be parsed. Answer again using these headings, "
    "each at the start of a line:\nQuestion type: ...\nAnalysis: ...\nSampling strategy: ..."
)

_HEADING = re.compile(r"^[ \t]*[#*>\-]*[ \t]*([A-Za-z][A-Za-z /&()'-]{0,40}?)[ \t]*\**[ \t]*:[ \t]*\**[ \t]*", re.MULTILINE)


@dataclass
class _Section:
    heading: str
    start: int  # start of the heading line
    body_start: int
    end: int


def _sections(text: str) -> list[_Section]:
    found = list(_HEADING.finditer(text))
    out = []
    for i, m in enumerate(found):
        end = found[i + 1].start() if i + 1 < len(found) else len(text)
        out.append(_Section(m.group(1).strip().lower(), m.start(), m.end(), end))
    return out


def parse_policy(text: str, provenance: Provenance = Provenance.GENERATED) -> Policy:
    """Extract question type, analysis and sampling strategy by heading.

    Sections are slices of the input, so every extracted field is a verbatim
    substring of ``raw_text``.
    """
    secs = _sections(text)
    type_sec = next((s for s in secs if "type" in s.heading), None)
    if type_sec is None:
        raise PolicyParseFailure("no question-type heading found")
    body = text[type_sec.body_start:type_sec.end].strip()
    question_type = body.splitlines()[0].strip() if body else ""
    if not question_type:
        raise PolicyParseFailure("empty question type")

    samp_sec = next((s for s in secs if "sampl" in s.heading and s is not type_sec), None)
    sampling = text[samp_sec.body_start:samp_sec.end].strip() if samp_sec else ""

    analysis_sec = next((s for s in secs if "analy" in s.heading and s not in (type_sec, samp_sec)), None)
    if analysis_sec is not None:
        analysis = text[analysis_sec.body_start:analysis_sec.end].strip()
    else:
        # first contiguous stretch not claimed by the type/sampling sections
        nl = text.find("\n", type_sec.body_start)
        type_end = type_sec.end if nl < 0 else min(nl, type_sec.end)
        claimed = sorted([(type_sec.start, type_end)] + ([(samp_sec.start, samp_sec.end)] if samp_sec else []))
        cursor, analysis = 0, ""
        for lo, hi in claimed + [(len(text), len(text))]:
            if text[cursor:lo].strip():
                analysis = text[cursor:lo].strip()
                break
            cursor = max(cursor, hi)

    return Policy(question_type=question_type, analysis=analysis, sampling_strategy=sampling,
                  raw_text=text, provenance=provenance)


def video_details(meta: VideoMeta) -> str:
    scenes = ", ".join(str(f) for f in meta.scene_change_frames) if meta.scene_change_frames else "not available"
    return (
        "Video details:\n"
        f"- Duration: {meta.duration_sec / 60:.1f} minutes ({meta.duration_sec:g} seconds)\n"
        f"- Frame Rate: {meta.frame_rate:g} frame per second\n"
        f"- Total Frames: {meta.total_frames} frames.\n"
        f"- Frames with scene change: {scenes}"
    )


def format_experiences(experiences: Sequence[MemoryRecord]) -> str:
    blocks = []
    for n, rec in enumerate(experiences[:MAX_EXPERIENCES], 1):
        steps = "; ".join(f"{d['action']}({d['input']}) -> {d['observation']}" for d in rec.trajectory_digest)
        outcome = "correct" if rec.verdict else "incorrect"
        blocks.append(
            f"[{n}] Question type: {rec.question_type}\n"
            f"    Trajectory ({outcome}, confidence {rec.confidence}): {steps or '(no steps)'}\n"
            f"    Refinement: {rec.refinement.refined_plan or '(none)'}"
        )
    return "\n".join(blocks)


class PolicyEngine:
    def __init__(self, gateway: Gateway, catalog: PromptCatalog = DEFAULT_CATALOG) -> None:
        self.gateway = gateway
        self.catalog = catalog

    def render(self, q: Question, meta: VideoMeta, experiences: Sequence[MemoryRecord] = (),
               prior_refinement: Refinement | None = None) -> PromptBundle:
        details = video_details(meta)
        fragments = []
        extra = []
        if experiences:
            fragments.append("experiences")
            extra.append(self.catalog.render("experiences", experiences=format_experiences(experiences)))
        if prior_refinement is not None:
            fragments.append("refinement")
            extra.append(self.catalog.render("refinement", diagnosis=prior_refinement.diagnosis,
                                             refined_plan=prior_refinement.refined_plan))
        if extra:
            details = details + "\n\n" + "\n\n".join(extra)
        user = self.catalog.render("policy", **{"Question": q.render(), "Video details": details})
        user += "\n\nAnswer with the headings 'Question type:', 'Analysis:' and 'Sampling strategy:'."
        return PromptBundle(user_text=user, decoding=DecodingParams(), tag="policy", fragments=tuple(fragments))

    def generate(self, q: Question, meta: VideoMeta, experiences: Sequence[MemoryRecord] = (),
                 prior_refinement: Refinement | None = None,
                 transcript: Transcript | None = None) -> Policy:
        provenance = Provenance.REFINED if prior_refinement is not None else Provenance.GENERATED
        bundle = self.render(q, meta, experiences, prior_refinement)
        text = self.gateway.complete(bundle, transcript)
        try:
            return parse_policy(text, provenance)
        except PolicyParseFailure:
            retry = PromptBundle(user_text=bundle.user_text + "\n\n" + REPROMPT_REMINDER,
                                 decoding=bundle.decoding, tag="policy", fragments=bundle.fragments)
            return parse_policy(self.gateway.complete(retry, transcript), provenance)


def generate_policy(gateway: Gateway, q: Question, meta: VideoMeta, experiences: Sequence[MemoryRecord] = (),
                    prior_refinement: Refinement | None = None, transcript: Transcript | None = None) -> Policy:
    return PolicyEngine(gateway).generate(q, meta, experiences, prior_refinement, transcript)
