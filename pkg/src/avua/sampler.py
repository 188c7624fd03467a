"""Frame index arithmetic, action-input frame parsing and the advisory sampler."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from avua.errors import InvalidRange
from avua.gateway import DecodingParams, Gateway, PromptBundle, Transcript
from avua.prompts import DEFAULT_CATALOG, PromptCatalog
from avua.types import ActionInput, Policy, Trajectory, VideoMeta

logger = logging.getLogger(__name__)

SUGGESTION_CAP = 16
MODES = ("sparse", "dense", "switch")


@dataclass
class FrameSuggestion:
    indices: list[int]
    rationale: str
    mode: str = "sparse"


def expand_range(start: int, end: int, step: int, total: int) -> list[int]:
    """``start, start+step, ...`` up to ``min(end, total - 1)`` inclusive."""
    if step <= 0:
        raise InvalidRange(f"step must be positive, got {step}")
    if start < 0 or start > end:
        raise InvalidRange(f"invalid range [{start}, {end}]")
    return list(range(start, min(end, total - 1) + 1, step))


def validate_indices(indices: list[int], total: int) -> tuple[list[int], list[str]]:
    """Clamp into ``[0, total)``, sort and dedupe. Returns indices and warnings."""
    warnings = []
    out = set()
    for i in indices:
        if i < 0 or i >= total:
            clamped = min(max(i, 0), total - 1)
            warnings.append(f"frame {i} is out of range [0, {total - 1}]; clamped to {clamped}")
            i = clamped
        out.add(i)
    return sorted(out), warnings


# ---------------------------------------------------------------------------
# Frame spec parsing

_LEAD = re.compile(
    r"\s*[\[(]?\s*(?:(?:frames?|indices|index|idx)\b\s*(?:(?:index|indices|numbers?|no\.?)\b\s*)?)?[:#=]?\s*",
    re.IGNORECASE,
)
_RANGE = re.compile(
    r"(\d+)\s*(?:-|–|\.\.|to)\s*(\d+)(?:\s*,?\s*(?:with\s+)?(?:step|stride|every|timestep)\s*(?:of\s*|=\s*)?(\d+))?",
    re.IGNORECASE,
)
_INT = re.compile(r"(\d+)(?!\d)(?!\.\d)(?!\s*(?:%|seconds?\b|secs?\b|s\b|minutes?\b|mins?\b|fps\b))", re.IGNORECASE)
_SEP = re.compile(r"\s*(?:,|;|\band\b|&)?\s*(?:(?:frames?|index)\b\s*(?:index\b\s*)?)?", re.IGNORECASE)
_ANYWHERE = re.compile(r"\bframes?\s*(?:index\s*|#\s*|number\s*)?(\d+)", re.IGNORECASE)


def _scan_frames(text: str) -> tuple[list[int], int]:
    """Consume a leading run of frame numbers/ranges; return indices and end offset."""
    pos = _LEAD.match(text).end()
    frames: list[int] = []
    while True:
        m = _RANGE.match(text, pos)
        if m:
            a, b = int(m.group(1)), int(m.group(2))
            lo, hi = min(a, b), max(a, b)
            step = int(m.group(3)) if m.group(3) else 1
            frames.extend(range(lo, hi + 1, max(step, 1)))
            pos = m.end()
        else:
            m = _INT.match(text, pos)
            if not m:
                break
            frames.append(int(m.group(1)))
            pos = m.end()
        sep = _SEP.match(text, pos)
        if not sep or sep.end() == pos or not re.match(r"\s*\d", text[sep.end():]):
            break
        pos = sep.end()
    return frames, pos


def parse_frame_spec(raw: str) -> ActionInput:
    """Parse a free-text action input into frame indices and an optional query.

    Accepts ``frame 12``, ``frame index 0``, ``frames 10-20 step 5``, bare
    comma lists, ``Frame index 0, what is happening?`` and JSON objects with
    ``frames``/``frame_indices`` and ``query`` keys. Range validation against
    the video length is left to :func:`validate_indices`.
    """
    text = raw.strip()
    if text.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            frames = obj.get("frame_indices", obj.get("frames", obj.get("frame", [])))
            if isinstance(frames, int):
                frames = [frames]
            query = obj.get("query") or obj.get("question")
            return ActionInput(frame_indices=[int(f) for f in frames], raw=raw,
                               query=str(query) if query else None)

    frames, end = _scan_frames(text)
    if frames:
        rest = text[end:].lstrip(" \t,;:.-])\n")
        query = rest if re.search(r"[A-Za-z]", rest) else None
        return ActionInput(frame_indices=list(dict.fromkeys(frames)), raw=raw, query=query)

    found = [int(n) for n in _ANYWHERE.findall(text)]
    if found:
        return ActionInput(frame_indices=list(dict.fromkeys(found)), raw=raw, query=text)
    return ActionInput(frame_indices=[], raw=raw, query=text or None)


# ---------------------------------------------------------------------------
# Sampler model call

_SUGGEST = re.compile(r"suggest(?:ed)?\s*frames?\s*:\s*(.+)", re.IGNORECASE)
_RATIONALE = re.compile(r"rationale\s*:\s*(.+)", re.IGNORECASE)
_MODE = re.compile(r"\b(sparse|dense|switch)\b", re.IGNORECASE)


def parse_suggestion(text: str) -> tuple[list[int], str, str] | None:
    m = _SUGGEST.search(text)
    body = m.group(1) if m else text
    frames, _ = _scan_frames(body)
    if not frames:
        return None
    mode_m = _MODE.search(m.group(0) if m else text) or _MODE.search(text)
    mode = mode_m.group(1).lower() if mode_m else "sparse"
    r = _RATIONALE.search(text)
    rationale = r.group(1).strip() if r else (m.group(0).strip() if m else text.strip())
    return frames, mode, rationale


def _cap(indices: list[int], cap: int) -> list[int]:
    if len(indices) <= cap:
        return indices
    if cap == 1:
        return indices[:1]
    # keep coverage: evenly spaced picks over the sorted list
    n = len(indices)
    return sorted({indices[round(k * (n - 1) / (cap - 1))] for k in range(cap)})


class Sampler:
    """Separately prompted model that proposes which frames to access next.

    Advisory only: any failure falls back to the planner's own proposal.
    """

    def __init__(self, gateway: Gateway, catalog: PromptCatalog = DEFAULT_CATALOG,
                 cap: int = SUGGESTION_CAP, recent: int = 3) -> None:
        self.gateway = gateway
        self.catalog = catalog
        self.cap = cap
        self.recent = recent

    def render(self, pi: Policy | None, tau: Trajectory, meta: VideoMeta, proposed: ActionInput) -> PromptBundle:
        recent = tau.steps[-self.recent:]
        obs = "\n".join(f"[step {s.index}] {s.action}({s.action_input.raw}): {s.observation[:300]}" for s in recent)
        system = self.catalog.render(
            "sampler",
            total_frames=meta.total_frames,
            last_frame=meta.total_frames - 1,
            frame_rate=_fmt_num(meta.frame_rate),
            sampling_strategy=pi.sampling_strategy if pi else "(no policy available)",
            recent_observations=obs or "(none yet)",
            proposed_frames=", ".join(str(i) for i in proposed.frame_indices),
            cap=self.cap,
        )
        user = f"Proposed frames: {', '.join(str(i) for i in proposed.frame_indices)}\nSuggest frames:"
        return PromptBundle(user_text=user, system_text=system, decoding=DecodingParams(max_tokens=256),
                            tag="sampler")

    def suggest(self, pi: Policy | None, tau: Trajectory, meta: VideoMeta, proposed: ActionInput,
                transcript: Transcript | None = None) -> FrameSuggestion:
        bundle = self.render(pi, tau, meta, proposed)
        try:
            text = self.gateway.complete(bundle, transcript)
        except Exception as exc:  # sampler never blocks the planner
            logger.warning("sampler call failed (%s); using planner proposal", exc)
            text = ""
        parsed = parse_suggestion(text) if text else None
        if parsed is None:
            indices, warnings = validate_indices(proposed.frame_indices, meta.total_frames)
            rationale = "sampler output unparseable; using planner proposal"
            if warnings:
                rationale += "; " + "; ".join(warnings)
            return FrameSuggestion(indices=indices, rationale=rationale, mode="sparse")
        frames, mode, rationale = parsed
        indices, warnings = validate_indices(frames, meta.total_frames)
        if warnings:
            rationale = f"{rationale} (warning: {'; '.join(warnings)})"
        return FrameSuggestion(indices=_cap(indices, self.cap), rationale=rationale, mode=mode)


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:g}"
