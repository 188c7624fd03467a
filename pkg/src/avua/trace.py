"""JSON-lines episode traces and their self-consistency check.

Each line is ``{kind, trial, payload, frames_charged}``. ``kind`` is one of
``header``, ``policy``, ``step``, ``sampler``, ``evaluation``,
``refinement`` or ``final``. The ``final`` record stores the ledger totals
that :func:`verify_trace` recomputes from the step records.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from avua.errors import TraceCorrupt

KINDS = ("header", "policy", "step", "sampler", "evaluation", "refinement", "final")


@dataclass
class TraceRecord:
    kind: str
    trial: int
    payload: dict[str, Any]
    frames_charged: list[int] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "trial": self.trial, "payload": self.payload,
                "frames_charged": list(self.frames_charged)}


class TraceWriter:
    def __init__(self) -> None:
        self.records: list[TraceRecord] = []

    def record(self, kind: str, trial: int, payload: dict[str, Any], frames_charged: list[int] | None = None) -> None:
        if kind not in KINDS:
            raise ValueError(f"unknown trace kind {kind!r}")
        self.records.append(TraceRecord(kind, trial, payload, list(frames_charged or [])))

    def kinds(self) -> list[str]:
        return [r.kind for r in self.records]

    def dumps(self) -> str:
        return "".join(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n" for r in self.records)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path


def read_trace(path: str | Path) -> list[TraceRecord]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise TraceCorrupt(f"cannot read trace {path}: {exc}") from exc
    records = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            rec = TraceRecord(d["kind"], int(d["trial"]), dict(d["payload"]), [int(f) for f in d["frames_charged"]])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise TraceCorrupt(f"{path}:{n}: malformed trace record ({exc})") from exc
        if rec.kind not in KINDS:
            raise TraceCorrupt(f"{path}:{n}: unknown record kind {rec.kind!r}")
        records.append(rec)
    if not records:
        raise TraceCorrupt(f"trace {path} is empty")
    return records


def verify_trace(path: str | Path) -> dict[str, Any]:
    """Recompute ledger totals from step records and compare with the stored summary."""
    records = read_trace(path)
    finals = [r for r in records if r.kind == "final"]
    if len(finals) != 1:
        raise TraceCorrupt(f"expected exactly one final record, found {len(finals)}")
    final = finals[0].payload
    header = next((r.payload for r in records if r.kind == "header"), {})

    total = 0
    distinct: set[int] = set()
    per_tool: dict[str, int] = {}
    for r in records:
        if r.kind != "step":
            continue
        total += len(r.frames_charged)
        distinct.update(r.frames_charged)
        tool = r.payload.get("action", "")
        per_tool[tool] = per_tool.get(tool, 0) + len(r.frames_charged)
    trials = {r.trial for r in records if r.kind in ("policy", "step", "evaluation", "refinement")}

    checks = {
        "frames_accessed": (total, final.get("frames_accessed")),
        "distinct_frames_accessed": (len(distinct), final.get("distinct_frames_accessed")),
    }
    total_frames = header.get("meta", {}).get("total_frames")
    if total_frames:
        checks["ratio"] = (len(distinct) / total_frames, final.get("ratio"))
    stored_tools = {k: v for k, v in (final.get("per_tool") or {}).items() if v}
    checks["per_tool"] = ({k: v for k, v in per_tool.items() if v}, stored_tools)
    if trials:
        checks["trials"] = (max(trials), final.get("trials"))

    for name, (recomputed, stored) in checks.items():
        if isinstance(recomputed, float) and isinstance(stored, (int, float)):
            ok = abs(recomputed - stored) <= 1e-12
        else:
            ok = recomputed == stored
        if not ok:
            raise TraceCorrupt(f"{name}: recomputed {recomputed!r} but trace stores {stored!r}")

    return {
        "answer": final.get("answer"),
        "trials": final.get("trials"),
        "frames_accessed": total,
        "distinct_frames_accessed": len(distinct),
        "ratio": final.get("ratio"),
        "per_tool": per_tool,
        "config_digest": header.get("config_digest"),
        "item_id": header.get("item_id"),
    }
