"""Tool registry, dispatch, frame-access ledger and tool adapters.

Two adapter families are provided: :class:`SyntheticAdapter` answers from an
annotated :class:`SyntheticVideoSpec` fixture, and :class:`RemoteToolAdapter`
forwards calls to an HTTP service (``POST /invoke``).
"""

from __future__ import annotations

import json
import logging
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import httpx

from avua.errors import AdapterFailure, DuplicateTool, ToolFatal, UnknownTool
from avua.memory import ShortTermCache
from avua.types import ActionInput, Observation, VideoMeta

logger = logging.getLogger(__name__)

DETECTION_THRESHOLD = 0.6
WINDOW_SIZE = 4
NO_TEXT_MARKER = "[no text]"

MODALITIES = ("video", "image", "audio", "meta")


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    modality: str
    frames_per_call: int
    accepts_query: bool
    description: str

    def __post_init__(self) -> None:
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.frames_per_call < 0:
            raise ValueError("frames_per_call must be >= 0")

    @property
    def needs_frames(self) -> bool:
        return self.modality != "audio"


STANDARD_TOOLS = (
    ToolDescriptor("get_frame_info", "meta", 1, False,
                   "General description of single frames. Input: frame indices."),
    ToolDescriptor("video_caption", "video", WINDOW_SIZE, False,
                   "Caption of the actions and objects in a short clip starting at each frame "
                   "(the frame plus 3 following frames). Input: frame indices."),
    ToolDescriptor("video_qa", "video", WINDOW_SIZE, True,
                   "Answer a question about a short clip starting at each frame "
                   "(the frame plus 3 following frames). Input: frame indices, then the question."),
    ToolDescriptor("image_qa", "image", 1, True,
                   "Answer a question about single frames. Input: frame indices, then the question."),
    ToolDescriptor("object_tracking", "video", 1, False,
                   f"Detect and track objects (confidence above {DETECTION_THRESHOLD}). Input: frame indices."),
    ToolDescriptor("text_caption", "image", 1, False,
                   "Read text visible in frames; reports nothing when no text is present. Input: frame indices."),
    ToolDescriptor("audio_transcription", "audio", 0, False,
                   "Transcribe speech around the given frames, or the whole video if no frames "
                   "are given. Input: frame indices (optional)."),
)


@dataclass
class FrameLedger:
    total_charges: int = 0
    distinct_frames: set[int] = field(default_factory=set)
    per_tool: dict[str, int] = field(default_factory=dict)

    def charge(self, tool: str, frames: list[int]) -> None:
        self.total_charges += len(frames)
        self.distinct_frames.update(frames)
        self.per_tool[tool] = self.per_tool.get(tool, 0) + len(frames)


def ledger_report(ledger: FrameLedger, meta: VideoMeta) -> dict[str, float]:
    frames = len(ledger.distinct_frames)
    return {"frames": frames, "ratio": frames / meta.total_frames}


def frame_window(start: int, size: int, total: int, stride: int = 1) -> list[int]:
    """``size`` frames from ``start`` at ``stride``, dropping any past the end."""
    return [start + k * stride for k in range(max(size, 1)) if start + k * stride < total]


@dataclass
class AdapterResult:
    text: str
    frames_consumed: list[int]
    metadata: dict[str, Any] = field(default_factory=dict)


class Adapter(Protocol):
    def run(self, tool: ToolDescriptor, frames: list[int], query: str | None,
            meta: VideoMeta) -> AdapterResult: ...


# ---------------------------------------------------------------------------
# Synthetic annotated video


@dataclass
class DetectedObject:
    label: str
    confidence: float


@dataclass
class FrameAnnotation:
    caption: str
    objects: list[DetectedObject] = field(default_factory=list)
    ocr_text: str = ""
    answer_window: tuple[int, int] | None = None


@dataclass
class AudioSegment:
    start_sec: float
    end_sec: float
    transcript: str


@dataclass
class SyntheticVideoSpec:
    """Annotated stand-in for a real video.

    An annotation keyed at frame ``k`` describes every frame from ``k`` up to
    the next annotated frame.
    """

    meta: VideoMeta
    frames: dict[int, FrameAnnotation]
    audio_segments: list[AudioSegment] = field(default_factory=list)
    video_id: str = ""

    def __post_init__(self) -> None:
        n = self.meta.total_frames
        for idx, ann in self.frames.items():
            if not 0 <= idx < n:
                raise ValueError(f"annotated frame {idx} outside [0, {n})")
            if ann.answer_window is not None:
                s, e = ann.answer_window
                if not 0 <= s <= e < n:
                    raise ValueError(f"answer_window {ann.answer_window} outside video")
        self._keys = sorted(self.frames)

    def annotation(self, frame: int) -> FrameAnnotation | None:
        pos = bisect_right(self._keys, frame)
        return self.frames[self._keys[pos - 1]] if pos else None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SyntheticVideoSpec":
        frames = {}
        for key, a in d.get("frames", {}).items():
            win = a.get("answer_window")
            frames[int(key)] = FrameAnnotation(
                caption=a.get("caption", ""),
                objects=[DetectedObject(o["label"], float(o["confidence"])) for o in a.get("objects", [])],
                ocr_text=a.get("ocr_text", ""),
                answer_window=(int(win[0]), int(win[1])) if win else None,
            )
        return cls(
            meta=VideoMeta.from_dict(d["meta"]),
            frames=frames,
            audio_segments=[AudioSegment(float(s["start_sec"]), float(s["end_sec"]), s["transcript"])
                            for s in d.get("audio_segments", [])],
            video_id=d.get("id", ""),
        )

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticVideoSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def planted_windows(self) -> list[tuple[int, int]]:
        return [self.frames[k].answer_window for k in self._keys if self.frames[k].answer_window]


class SyntheticAdapter:
    """Deterministic tool outputs read off a :class:`SyntheticVideoSpec`."""

    def __init__(self, spec: SyntheticVideoSpec, detection_threshold: float = DETECTION_THRESHOLD) -> None:
        self.spec = spec
        self.detection_threshold = detection_threshold

    def _caption(self, frame: int) -> str:
        ann = self.spec.annotation(frame)
        return ann.caption if ann and ann.caption else "nothing notable"

    def _objects(self, frame: int) -> list[DetectedObject]:
        ann = self.spec.annotation(frame)
        if ann is None:
            return []
        return [o for o in ann.objects if o.confidence > self.detection_threshold]

    def _span_captions(self, frames: list[int]) -> str:
        return "; ".join(dict.fromkeys(self._caption(f) for f in frames))

    def run(self, tool: ToolDescriptor, frames: list[int], query: str | None, meta: VideoMeta) -> AdapterResult:
        name = tool.name
        label = _frames_label(frames)
        if name == "get_frame_info":
            return AdapterResult(f"{label}: {self._caption(frames[0])}", frames)
        if name == "video_caption":
            return AdapterResult(f"{label}: {self._span_captions(frames)}", frames)
        if name in ("video_qa", "image_qa"):
            objs = list(dict.fromkeys(o.label for f in frames for o in self._objects(f)))
            answer = self._span_captions(frames)
            if objs:
                answer += f". Visible: {', '.join(objs)}"
            q = f" (Q: {query})" if query else ""
            return AdapterResult(f"{label}{q}: {answer}", frames)
        if name == "object_tracking":
            objs = self._objects(frames[0])
            found = ", ".join(f"{o.label} ({o.confidence:.2f})" for o in objs)
            return AdapterResult(f"{label}: {found or f'no objects above {self.detection_threshold}'}", frames)
        if name == "text_caption":
            ann = self.spec.annotation(frames[0])
            text = ann.ocr_text if ann else ""
            return AdapterResult(f"{label}: {repr(text) if text else NO_TEXT_MARKER}", frames)
        if name == "audio_transcription":
            if frames:
                lo = min(frames) / meta.frame_rate
                hi = (max(frames) + 1) / meta.frame_rate
                segs = [s for s in self.spec.audio_segments if s.end_sec > lo and s.start_sec < hi]
            else:
                segs = list(self.spec.audio_segments)
            lines = [f"Audio {s.start_sec:.1f}s-{s.end_sec:.1f}s: {s.transcript}" for s in segs]
            return AdapterResult("\n".join(lines) or "[no speech]", [])
        raise AdapterFailure(f"synthetic adapter has no implementation for {name!r}")


def _frames_label(frames: list[int]) -> str:
    if not frames:
        return "Frames"
    if len(frames) == 1:
        return f"Frame {frames[0]}"
    return f"Frames {frames[0]}-{frames[-1]}"


# ---------------------------------------------------------------------------
# Remote adapter


class RemoteToolAdapter:
    """``POST {base_url}/invoke`` with ``{tool, frame_indices, query}``."""

    def __init__(self, base_url: str, timeout: float = 60.0, client: httpx.Client | None = None) -> None:
        self.url = base_url.rstrip("/") + "/invoke"
        self._client = client or httpx.Client(timeout=timeout)

    def run(self, tool: ToolDescriptor, frames: list[int], query: str | None, meta: VideoMeta) -> AdapterResult:
        try:
            resp = self._client.post(self.url, json={"tool": tool.name, "frame_indices": frames, "query": query})
            resp.raise_for_status()
            body = resp.json()
            consumed = body.get("frames_consumed", frames)
            if isinstance(consumed, int):
                consumed = frames[:consumed]
            return AdapterResult(str(body["observation"]), [int(f) for f in consumed], body.get("metadata") or {})
        except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
            raise AdapterFailure(f"remote tool {tool.name} failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Registry + dispatch


class Toolbox:
    def __init__(self, window_stride: int = 1) -> None:
        self._tools: dict[str, tuple[ToolDescriptor, Adapter]] = {}
        self.window_stride = window_stride

    def register(self, descriptor: ToolDescriptor, adapter: Adapter) -> None:
        if descriptor.name in self._tools:
            raise DuplicateTool(f"tool {descriptor.name!r} already registered")
        self._tools[descriptor.name] = (descriptor, adapter)

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    @property
    def names(self) -> list[str]:
        return list(self._tools)

    def descriptor(self, name: str) -> ToolDescriptor:
        try:
            return self._tools[name][0]
        except KeyError:
            raise UnknownTool(f"unknown tool {name!r}; available: {', '.join(self._tools) or 'none'}") from None

    def describe(self) -> str:
        return "\n".join(f"- {d.name}: {d.description}" for d, _ in self._tools.values())

    def window(self, descriptor: ToolDescriptor, frame: int, total: int) -> list[int]:
        if descriptor.frames_per_call <= 1:
            return [frame]
        return frame_window(frame, descriptor.frames_per_call, total, self.window_stride)

    def invoke(self, tool: str, action_input: ActionInput, ledger: FrameLedger, meta: VideoMeta,
               cache: ShortTermCache | None = None) -> Observation:
        """Dispatch one action. Adapter errors come back as observation text."""
        descriptor = self.descriptor(tool)
        adapter = self._tools[tool][1]
        query = action_input.query if descriptor.accepts_query else None
        cache_key = f"{tool}|{query}" if query else tool
        frames = [f for f in action_input.frame_indices if 0 <= f < meta.total_frames]
        pieces: list[str] = []
        charged: list[int] = []
        hits = 0
        try:
            if not descriptor.needs_frames:
                result = adapter.run(descriptor, frames, query, meta)
                return Observation(result.text, tool, [], False)
            if not frames:
                return Observation(f"Error: {tool} needs frame indices in the Action Input.", tool, [], False)

            for frame in frames:
                cached = cache.get(frame, cache_key) if cache is not None else None
                if cached is not None:
                    pieces.append(cached.text)
                    hits += 1
                    continue
                result = adapter.run(descriptor, self.window(descriptor, frame, meta.total_frames), query, meta)
                consumed = [f for f in result.frames_consumed if 0 <= f < meta.total_frames]
                ledger.charge(tool, consumed)
                charged.extend(consumed)
                piece = Observation(result.text, tool, consumed, False)
                if cache is not None:
                    for f in consumed:
                        cache.put(f, cache_key, piece)
                pieces.append(result.text)
        except ToolFatal:
            raise
        except Exception as exc:
            logger.warning("tool %s failed: %s", tool, exc)
            # frames charged before the failure stay charged
            return Observation(f"Error: tool {tool} failed: {exc}", tool, charged, False)
        return Observation("\n".join(pieces), tool, charged, cache_hit=hits == len(frames))


def standard_toolbox(adapter: Adapter, window_stride: int = 1) -> Toolbox:
    box = Toolbox(window_stride=window_stride)
    for d in STANDARD_TOOLS:
        box.register(d, adapter)
    return box
