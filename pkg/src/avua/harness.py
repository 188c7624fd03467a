"""Benchmark items, metrics, the benchmark runner and the ablation matrix."""

from __future__ import annotations

import csv
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from avua.config import RunConfig, build_backend, build_toolbox
from avua.errors import AvuaError, ConfigError, EvalParseFailure, JudgeParseFailure
from avua.gateway import DecodingParams, Gateway, PromptBundle, Transcript
from avua.memory import LogicalClock, MemoryStore
from avua.planner import ABLATION_ROWS, Agent, KIND_LABELS, EpisodeResult, normalize_mcq, parse_window
from avua.prompts import DEFAULT_CATALOG, PromptCatalog
from avua.reflection import parse_evaluation
from avua.trace import TraceRecord
from avua.types import DatasetKind, Question, VideoMeta

logger = logging.getLogger(__name__)

JUDGE_THRESHOLD = 80
IOU_THRESHOLDS = (0.3, 0.5)
CUE_TAGS = ("start", "middle", "end", "none")
DEFAULT_CUE_KEYWORDS: dict[str, tuple[str, ...]] = {
    "start": ("beginning", "start", "first"),
    "middle": ("middle",),
    "end": ("end", "last"),
}
IOU_CONVENTION = "inclusive integer frame counts; windows in frame units"
HISTOGRAM_BINS = 10


# ---------------------------------------------------------------------------
# Metrics


def interval_iou(pred: Sequence[int] | np.ndarray, gold: Sequence[int] | np.ndarray) -> float | np.ndarray:
    """IoU of two inclusive integer windows ``[start, end]``.

    Integer arrays of shape ``(..., 2)`` are scored elementwise (with broadcasting) and
    give an array of IoUs.
    """
    if isinstance(pred, np.ndarray) or isinstance(gold, np.ndarray):
        p, g = np.asarray(pred, dtype=np.int64), np.asarray(gold, dtype=np.int64)
        inter = np.maximum(np.minimum(p[..., 1], g[..., 1]) - np.maximum(p[..., 0], g[..., 0]) + 1, 0)
        union = (p[..., 1] - p[..., 0] + 1) + (g[..., 1] - g[..., 0] + 1) - inter
        return inter / union
    ps, pe = int(pred[0]), int(pred[1])
    gs, ge = int(gold[0]), int(gold[1])
    inter = min(pe, ge) - max(ps, gs) + 1
    if inter <= 0:
        return 0.0
    union = (pe - ps + 1) + (ge - gs + 1) - inter
    return inter / union


def recall_at_1(pairs: Iterable[tuple[Sequence[int] | None, Sequence[int]]], threshold: float) -> float:
    """Fraction of ``(pred, gold)`` pairs with IoU at or above ``threshold``. A None prediction misses."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    pairs = list(pairs)
    if not pairs:
        logger.warning("recall_at_1 on an empty pair list; returning 0")
        return 0.0
    hits = sum(1 for pred, gold in pairs if pred is not None and interval_iou(pred, gold) >= threshold)
    return hits / len(pairs)


def score_mcq(final: str | None, gold_index: int) -> bool:
    return normalize_mcq(final) == f"Option {gold_index}"


@dataclass
class JudgeResult:
    verdict: bool
    confidence: int
    correct: bool
    raw_text: str = ""


def render_judge(pred: str, gold: str, q: Question, catalog: PromptCatalog = DEFAULT_CATALOG) -> PromptBundle:
    user = catalog.render("judge", question=q.text, gold=gold, prediction=pred) + "\n"
    return PromptBundle(user_text=user, decoding=DecodingParams(max_tokens=64), tag="judge")


def judge_open_ended(gateway: Gateway, pred: str, gold: str, q: Question, *,
                     transcript: Transcript | None = None, catalog: PromptCatalog = DEFAULT_CATALOG,
                     threshold: int = JUDGE_THRESHOLD) -> JudgeResult:
    """Model-judged match; correct iff the verdict is True and confidence >= ``threshold``."""
    text = gateway.complete(render_judge(pred, gold, q, catalog), transcript)
    try:
        ev = parse_judge(text)
    except JudgeParseFailure as exc:
        logger.warning("%s; counted incorrect", exc)
        return JudgeResult(False, 0, False, text)
    return JudgeResult(ev.verdict, ev.confidence, ev.verdict and ev.confidence >= threshold, text)


def parse_judge(text: str):
    try:
        return parse_evaluation(text)
    except EvalParseFailure as exc:
        raise JudgeParseFailure(f"judge reply unparseable: {text[:80]!r}") from exc


# ---------------------------------------------------------------------------
# Items


def detect_cue(text: str, keywords: Mapping[str, Sequence[str]] = DEFAULT_CUE_KEYWORDS) -> str:
    """Keyword cue tag; the earliest keyword in the question wins."""
    best, pos = "none", len(text) + 1
    low = text.lower()
    for tag, words in keywords.items():
        for w in words:
            m = re.search(rf"\b{re.escape(w)}\b", low)
            if m and m.start() < pos:
                best, pos = tag, m.start()
    return best


@dataclass
class BenchmarkItem:
    id: str
    question: Question
    meta: VideoMeta
    gold: Any
    video_ref: str | None = None
    cue_tag: str | None = None
    backend: dict[str, Any] | None = None
    base_dir: Path | None = None

    def __post_init__(self) -> None:
        kind = self.question.dataset_kind
        if kind is DatasetKind.MCQ:
            if isinstance(self.gold, bool) or not isinstance(self.gold, int):
                raise ValueError(f"{self.id}: mcq gold must be an option index")
            if not 0 <= self.gold < len(self.question.options):
                raise ValueError(f"{self.id}: gold option {self.gold} out of range")
        elif kind is DatasetKind.TEMPORAL_LOCALIZATION:
            if not (isinstance(self.gold, (list, tuple)) and len(self.gold) == 2):
                raise ValueError(f"{self.id}: localization gold must be [start, end]")
            s, e = int(self.gold[0]), int(self.gold[1])
            if s > e:
                raise ValueError(f"{self.id}: gold window start after end")
            self.gold = (s, e)
        elif not isinstance(self.gold, str):
            raise ValueError(f"{self.id}: open-ended gold must be text")
        if self.cue_tag is None:
            self.cue_tag = detect_cue(self.question.text)
        elif self.cue_tag not in CUE_TAGS:
            raise ValueError(f"{self.id}: cue_tag must be one of {CUE_TAGS}")

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> "BenchmarkItem":
        meta = d.get("meta")
        if meta is None:
            if not d.get("video_ref"):
                raise ValueError(f"{d.get('id')}: item needs meta or a video_ref")
            ref = Path(d["video_ref"])
            spec = json.loads(((base_dir / ref) if base_dir and not ref.is_absolute() else ref).read_text())
            meta = spec["meta"]
        return cls(id=str(d["id"]), question=Question.from_dict(d["question"]), meta=VideoMeta.from_dict(meta),
                   gold=d["gold"], video_ref=d.get("video_ref"), cue_tag=d.get("cue_tag"),
                   backend=d.get("backend"), base_dir=base_dir)


def load_manifest(path: str | Path) -> list[BenchmarkItem]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"manifest not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("items", [])
    if not isinstance(data, list) or not data:
        raise ConfigError(f"manifest {path} has no items")
    try:
        items = [BenchmarkItem.from_dict(d, path.parent.resolve()) for d in data]
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid manifest {path}: {exc}") from exc
    ids = [it.id for it in items]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"manifest {path} has duplicate item ids")
    return items


# -- public dataset formats (metadata comes from a sidecar mapping) ----------

def load_egoschema(questions_path: str | Path, answers_path: str | Path,
                   metas: Mapping[str, VideoMeta]) -> list[BenchmarkItem]:
    """EgoSchema-style ``questions.json`` plus ``{q_uid: answer index}`` answers."""
    questions = json.loads(Path(questions_path).read_text(encoding="utf-8"))
    answers = json.loads(Path(answers_path).read_text(encoding="utf-8"))
    items = []
    for q in questions:
        uid = q["q_uid"]
        if uid not in answers or uid not in metas:
            continue
        options = [q[f"option {i}"] for i in range(5)]
        items.append(BenchmarkItem(uid, Question(q["question"], DatasetKind.MCQ, tuple(options)),
                                   metas[uid], int(answers[uid]), video_ref=uid))
    return items


def load_nextqa(csv_path: str | Path, metas: Mapping[str, VideoMeta]) -> list[BenchmarkItem]:
    """NextQA-style CSV with columns video, qid, question, answer, a0..a4 (and type)."""
    items = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            vid = row["video"]
            if vid not in metas:
                continue
            options = tuple(row[f"a{i}"] for i in range(5))
            items.append(BenchmarkItem(f"{vid}_{row['qid']}", Question(row["question"], DatasetKind.MCQ, options),
                                       metas[vid], int(row["answer"]), video_ref=vid))
    return items


def load_ego4d_nlq(path: str | Path, metas: Mapping[str, VideoMeta]) -> list[BenchmarkItem]:
    """Ego4D-NLQ-style annotations; clip-relative seconds become frame windows."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    items = []
    for video in data.get("videos", []):
        for clip in video.get("clips", []):
            uid = clip["clip_uid"]
            if uid not in metas:
                continue
            meta = metas[uid]
            n = 0
            for ann in clip.get("annotations", []):
                for lq in ann.get("language_queries", []):
                    if not lq.get("query"):
                        continue
                    s = meta.clamp(int(float(lq["clip_start_sec"]) * meta.frame_rate))
                    e = meta.clamp(int(float(lq["clip_end_sec"]) * meta.frame_rate))
                    items.append(BenchmarkItem(f"{uid}_{n}", Question(lq["query"], DatasetKind.TEMPORAL_LOCALIZATION),
                                               meta, [s, e], video_ref=uid))
                    n += 1
    return items


def load_moviechat(path: str | Path, meta: VideoMeta, video_id: str | None = None) -> list[BenchmarkItem]:
    """MovieChat-style per-movie file with ``global`` question/answer pairs."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    vid = video_id or Path(path).stem
    return [BenchmarkItem(f"{vid}_g{i}", Question(qa["question"], DatasetKind.OPEN_ENDED), meta, str(qa["answer"]),
                          video_ref=vid)
            for i, qa in enumerate(data.get("global", []))]


# ---------------------------------------------------------------------------
# Running


@dataclass
class ItemOutcome:
    id: str
    kind: str
    question_type: str
    cue_tag: str
    answer: str | None
    correct: bool | None
    iou: float | None
    frames: int
    frames_charged: int
    ratio: float
    trials: int
    fps: float
    total_frames: int
    error: str | None = None
    trace: str | None = None
    transcript: str | None = None
    accessed_frames: tuple[int, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d.pop("accessed_frames")
        return d


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def aggregate(outcomes: Sequence[ItemOutcome]) -> dict[str, Any]:
    """Fold per-item outcomes (sorted by id) into the aggregate metrics."""
    outcomes = sorted(outcomes, key=lambda o: o.id)
    scored = [o for o in outcomes if o.kind != DatasetKind.TEMPORAL_LOCALIZATION.value]
    loc = [o for o in outcomes if o.kind == DatasetKind.TEMPORAL_LOCALIZATION.value]
    ran = [o for o in outcomes if o.error is None]

    def group(key: str) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in sorted({getattr(o, key) for o in outcomes}):
            members = [o for o in outcomes if getattr(o, key) == name]
            sc = [o for o in members if o.kind != DatasetKind.TEMPORAL_LOCALIZATION.value]
            lc = [o for o in members if o.kind == DatasetKind.TEMPORAL_LOCALIZATION.value]
            ok = [o for o in members if o.error is None]
            out[name] = {
                "n": len(members),
                "accuracy": _mean([1.0 if o.correct else 0.0 for o in sc]) if sc else None,
                "iou_recall": {str(t): _mean([1.0 if (o.iou or 0) >= t else 0.0 for o in lc]) for t in IOU_THRESHOLDS}
                if lc else None,
                "avg_frames": _mean([o.frames for o in ok]),
            }
        return out

    return {
        "n_items": len(outcomes),
        "n_failed": len(outcomes) - len(ran),
        "accuracy": _mean([1.0 if o.correct else 0.0 for o in scored]),
        "n_scored": len(scored),
        "iou_recall": {str(t): _mean([1.0 if (o.iou or 0.0) >= t else 0.0 for o in loc]) for t in IOU_THRESHOLDS},
        "n_localization": len(loc),
        "avg_frames": _mean([o.frames for o in ran]),
        "avg_frames_charged": _mean([o.frames_charged for o in ran]),
        "avg_ratio": _mean([o.ratio for o in ran]),
        "per_question_type": group("question_type"),
        "per_kind": group("kind"),
        "per_cue": group("cue_tag"),
    }


def cue_bucket_report(items: Sequence[BenchmarkItem],
                      episode_traces: Mapping[str, Sequence[TraceRecord] | Sequence[int]],
                      bins: int = HISTOGRAM_BINS) -> dict[str, Any]:
    """Per cue tag, a histogram of accessed-frame positions over ``bins`` equal slices of the video.

    ``episode_traces`` maps item id to either trace records or a list of accessed frame indices.
    """
    by_id = {it.id: it for it in items}
    counts: dict[str, list[int]] = {}
    frames_per_item: dict[str, list[int]] = {}
    for item_id in sorted(episode_traces):
        it = by_id.get(item_id)
        if it is None:
            continue
        frames = _distinct_frames(episode_traces[item_id])
        hist = counts.setdefault(it.cue_tag, [0] * bins)
        for f in frames:
            hist[min(bins - 1, int(f * bins / it.meta.total_frames))] += 1
        frames_per_item.setdefault(it.cue_tag, []).append(len(frames))

    histograms = {}
    for tag in sorted(counts):
        total = sum(counts[tag])
        histograms[tag] = {"counts": counts[tag],
                           "fractions": [c / total if total else 0.0 for c in counts[tag]]}
    cue = [n for tag, ns in frames_per_item.items() if tag != "none" for n in ns]
    no_cue = frames_per_item.get("none", [])
    return {
        "bins": bins,
        "histograms": histograms,
        "mean_frames": {"cue": _mean(cue) if cue else None, "no_cue": _mean(no_cue) if no_cue else None},
        "mean_frames_per_tag": {tag: _mean(ns) for tag, ns in sorted(frames_per_item.items())},
    }


def _distinct_frames(trace: Sequence[TraceRecord] | Sequence[int]) -> list[int]:
    frames: set[int] = set()
    for r in trace:
        if isinstance(r, TraceRecord):
            if r.kind == "step":
                frames.update(r.frames_charged)
        else:
            frames.add(int(r))
    return sorted(frames)


class BenchmarkRunner:
    """Run a list of items under one configuration and write report, traces and transcripts."""

    def __init__(self, config: RunConfig, *, default_base: Path | None = None, jobs: int = 1) -> None:
        self.config = config
        self.catalog = config.catalog()
        self.default_base = default_base
        self.jobs = max(1, jobs)

    def _memory(self, out_dir: Path) -> MemoryStore | None:
        if not self.config.ablation_config.use_memory:
            return None
        path = out_dir / "memory.jsonl"
        if path.exists():
            path.unlink()
        if self.config.deterministic:
            return MemoryStore(path, clock=LogicalClock())
        return MemoryStore(path)

    def run_item(self, item: BenchmarkItem, memory: MemoryStore | None, out_dir: Path) -> ItemOutcome:
        cfg = self.config.ablation_config
        base = item.base_dir or self.default_base
        kind = item.question.dataset_kind
        outcome = ItemOutcome(
            id=item.id, kind=kind.value, question_type=KIND_LABELS[kind], cue_tag=item.cue_tag or "none",
            answer=None, correct=False if kind is not DatasetKind.TEMPORAL_LOCALIZATION else None,
            iou=0.0 if kind is DatasetKind.TEMPORAL_LOCALIZATION else None,
            frames=0, frames_charged=0, ratio=0.0, trials=0, fps=item.meta.frame_rate,
            total_frames=item.meta.total_frames,
        )
        trace_rel = f"traces/{_safe(item.id)}.jsonl"
        transcript_rel = f"transcripts/{_safe(item.id)}.jsonl"
        result: EpisodeResult | None = None
        transcript = Transcript()
        try:
            backend_spec = item.backend or self.config.gateway
            gateway = Gateway(build_backend(backend_spec, base))
            toolbox = build_toolbox(self.config.toolbox, item.video_ref, base, self.config.window_stride)
            agent = Agent(gateway, toolbox, memory, self.catalog, self.config.agent_config())
            try:
                result = agent.run_episode(item.question, item.meta, cfg,
                                           header={"item_id": item.id, "config_digest": self.config.digest()})
            except AvuaError as exc:
                result = getattr(exc, "result", None)
                raise
            finally:
                if result is not None:
                    transcript = result.transcript
                    result.trace.write(out_dir / trace_rel)
                    outcome.trace = trace_rel
            self._score(item, result, outcome, gateway, transcript)
        except (AvuaError, ValueError, OSError) as exc:
            logger.warning("item %s failed: %s", item.id, exc)
            outcome.error = f"{type(exc).__name__}: {exc}"
        if result is not None:
            outcome.frames = result.distinct_frames_accessed
            outcome.frames_charged = result.frames_accessed
            outcome.ratio = result.ratio
            outcome.trials = len(result.trials)
            outcome.accessed_frames = tuple(result.accessed_frames)
        transcript.write(out_dir / transcript_rel)
        outcome.transcript = transcript_rel
        return outcome

    def _score(self, item: BenchmarkItem, result: EpisodeResult, outcome: ItemOutcome, gateway: Gateway,
               transcript: Transcript) -> None:
        answer = result.answer or None
        outcome.answer = answer
        last_policy = next((t.policy for t in reversed(result.trials) if t.policy is not None), None)
        if last_policy is not None:
            outcome.question_type = last_policy.question_type
        kind = item.question.dataset_kind
        if kind is DatasetKind.MCQ:
            outcome.correct = score_mcq(answer, item.gold)
        elif kind is DatasetKind.TEMPORAL_LOCALIZATION:
            window = parse_window(answer)
            outcome.iou = interval_iou(window, item.gold) if window else 0.0
        else:
            if answer is None:
                outcome.correct = False
            else:
                judged = judge_open_ended(gateway, answer, item.gold, item.question,
                                          transcript=transcript, catalog=self.catalog)
                outcome.correct = judged.correct

    def run(self, items: Sequence[BenchmarkItem], out_dir: str | Path) -> dict[str, Any]:
        if not items:
            raise ConfigError("no benchmark items to run")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        memory = self._memory(out_dir)
        ordered = sorted(items, key=lambda it: it.id)
        if self.jobs == 1:
            outcomes = [self.run_item(it, memory, out_dir) for it in ordered]
        else:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                outcomes = list(pool.map(lambda it: self.run_item(it, memory, out_dir), ordered))
        outcomes.sort(key=lambda o: o.id)

        report = {
            "ablation": self.config.ablation_config.name,
            "config_digest": self.config.digest(),
            "iou_convention": IOU_CONVENTION,
            "judge_threshold": JUDGE_THRESHOLD,
            **aggregate(outcomes),
            "cue_report": cue_bucket_report(items, {o.id: list(o.accessed_frames) for o in outcomes
                                                    if o.error is None}),
            "items": [o.to_dict() for o in outcomes],
        }
        (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out_dir / "report.txt").write_text(render_table([report]), encoding="utf-8")
        return report


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def run_benchmark(items: Sequence[BenchmarkItem], cfg: RunConfig, out: str | Path, *,
                  jobs: int = 1, default_base: Path | None = None) -> dict[str, Any]:
    """Run every item under ``cfg`` and write ``report.json``/``report.txt`` plus traces into ``out``."""
    return BenchmarkRunner(cfg, default_base=default_base, jobs=jobs).run(items, out)


def run_matrix(items: Sequence[BenchmarkItem], cfg: RunConfig, out: str | Path, *,
               rows: Sequence[str] = ABLATION_ROWS, jobs: int = 1,
               default_base: Path | None = None) -> dict[str, dict[str, Any]]:
    """Run every ablation row into ``out/<row>/`` and write a combined ``matrix.json``/``matrix.txt``."""
    out = Path(out)
    reports = {}
    for row in rows:
        row_cfg = replace(cfg, ablation=row)
        reports[row] = run_benchmark(items, row_cfg, out / _safe(row.replace("/", "")), jobs=jobs,
                                     default_base=default_base)
    summary = {row: {k: r[k] for k in ("accuracy", "iou_recall", "avg_frames", "avg_ratio", "n_items", "n_failed")}
               for row, r in reports.items()}
    out.mkdir(parents=True, exist_ok=True)
    (out / "matrix.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "matrix.txt").write_text(render_table(list(reports.values())), encoding="utf-8")
    return reports


def render_table(reports: Sequence[Mapping[str, Any]]) -> str:
    header = ["Model", "# Frames (ratio)", "Accuracy", "IoU=0.3 r@1", "IoU=0.5 r@1", "Items", "Failed"]
    rows = []
    for r in reports:
        rows.append([
            r["ablation"],
            f"{r['avg_frames']:.2f} ({r['avg_ratio']:.4f})",
            f"{100 * r['accuracy']:.1f}" if r["n_scored"] else "-",
            f"{100 * r['iou_recall']['0.3']:.1f}" if r["n_localization"] else "-",
            f"{100 * r['iou_recall']['0.5']:.1f}" if r["n_localization"] else "-",
            str(r["n_items"]),
            str(r["n_failed"]),
        ])
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    lines = [" | ".join(h.ljust(w) for h, w in zip(header, widths)),
             "-+-".join("-" * w for w in widths)]
    lines += [" | ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + f"\nIoU: {IOU_CONVENTION}\n"
