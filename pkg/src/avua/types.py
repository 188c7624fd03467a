"""Plain data types passed between the agent components."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any


class DatasetKind(str, Enum):
    MCQ = "mcq"
    TEMPORAL_LOCALIZATION = "temporal_localization"
    OPEN_ENDED = "open_ended"


class Provenance(str, Enum):
    GENERATED = "generated"
    REFINED = "refined"
    RETRIEVED = "retrieved"


class Termination(str, Enum):
    FINAL_ANSWER = "final_answer"
    STEP_BUDGET = "step_budget"
    PARSE_ABORT = "parse_abort"
    TOOL_FATAL = "tool_fatal"


@dataclass(frozen=True)
class VideoMeta:
    """Metadata-only view of a video; the agent never sees pixels."""

    duration_sec: float
    frame_rate: float
    total_frames: int
    scene_change_frames: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.duration_sec < 0:
            raise ValueError("duration_sec must be non-negative")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.total_frames < 1:
            raise ValueError("total_frames must be positive")
        if abs(self.total_frames - self.duration_sec * self.frame_rate) > 1.0 + 1e-9:
            raise ValueError(
                f"total_frames {self.total_frames} inconsistent with "
                f"{self.duration_sec}s x {self.frame_rate}fps"
            )
        if self.scene_change_frames is not None:
            scenes = tuple(sorted(int(f) for f in self.scene_change_frames))
            if any(f < 0 or f >= self.total_frames for f in scenes):
                raise ValueError("scene change frame out of range")
            object.__setattr__(self, "scene_change_frames", scenes)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "VideoMeta":
        scenes = d.get("scene_change_frames")
        return cls(
            duration_sec=float(d["duration_sec"]),
            frame_rate=float(d["frame_rate"]),
            total_frames=int(d["total_frames"]),
            scene_change_frames=tuple(scenes) if scenes is not None else None,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "duration_sec": self.duration_sec,
            "frame_rate": self.frame_rate,
            "total_frames": self.total_frames,
            "scene_change_frames": list(self.scene_change_frames) if self.scene_change_frames is not None else None,
        }

    def clamp(self, frame: int) -> int:
        return min(max(frame, 0), self.total_frames - 1)


@dataclass(frozen=True)
class Question:
    text: str
    dataset_kind: DatasetKind = DatasetKind.OPEN_ENDED
    options: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "dataset_kind", DatasetKind(self.dataset_kind))
        if self.options is not None:
            object.__setattr__(self, "options", tuple(self.options))
        is_mcq = self.dataset_kind is DatasetKind.MCQ
        if is_mcq != (self.options is not None):
            raise ValueError("options must be present iff dataset_kind is mcq")
        if is_mcq and not 2 <= len(self.options) <= 5:
            raise ValueError("mcq questions take 2 to 5 options")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Question":
        opts = d.get("options")
        return cls(text=d["text"], dataset_kind=DatasetKind(d["dataset_kind"]),
                   options=tuple(opts) if opts is not None else None)

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "dataset_kind": self.dataset_kind.value,
                "options": list(self.options) if self.options is not None else None}

    def render(self) -> str:
        lines = [f"Question: {self.text}"]
        for i, opt in enumerate(self.options or ()):
            lines.append(f"Option {i}: {opt}")
        return "\n".join(lines)


@dataclass
class Policy:
    question_type: str
    analysis: str
    sampling_strategy: str
    raw_text: str
    provenance: Provenance = Provenance.GENERATED

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["provenance"] = Provenance(self.provenance).value
        return d


@dataclass
class ActionInput:
    frame_indices: list[int]
    raw: str
    query: str | None = None


@dataclass
class Observation:
    text: str
    tool: str
    frames_charged: list[int] = field(default_factory=list)
    cache_hit: bool = False


@dataclass
class Step:
    index: int
    thought: str
    action: str
    action_input: ActionInput
    observation: str = ""
    frames_charged: list[int] = field(default_factory=list)
    cache_hit: bool = False


@dataclass
class Trajectory:
    steps: list[Step] = field(default_factory=list)
    final_answer: str | None = None
    terminated_by: Termination | None = None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["terminated_by"] = Termination(self.terminated_by).value if self.terminated_by else None
        return d

    def render(self, include_final: bool = True) -> str:
        """Scratchpad text in the Thought/Action/Action Input/Observation format."""
        parts = []
        for s in self.steps:
            parts.append(f"Thought: {s.thought}\nAction: {s.action}\nAction Input: {s.action_input.raw}\n"
                         f"Observation: {s.observation}")
        if include_final and self.final_answer is not None:
            parts.append(f"Final Answer: {self.final_answer}")
        return "\n".join(parts)


@dataclass
class Evaluation:
    verdict: bool
    confidence: int
    raw_text: str = ""

    def __post_init__(self) -> None:
        self.confidence = min(100, max(0, int(self.confidence)))


@dataclass
class Refinement:
    diagnosis: str
    refined_plan: str
    raw_text: str = ""
