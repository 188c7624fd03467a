"""Rule-based stand-in for the reasoning model on temporal localization.

:class:`SimulatedBackend` answers every prompt template deterministically
and only from what the prompt shows it. As the agent it follows the policy's
sampling strategy: a sparse ``get_frame_info`` pass at the first timestep
until an observation matches the question, then a dense pass at the second
timestep around that frame, then answers with the span of matching frames.
Without a policy (plain ReAct) it takes one coarse uniform look and guesses
a fixed-width window.
"""

from __future__ import annotations

import re

from avua.gateway import PromptBundle, tokenize

BATCH = 16
COARSE_SAMPLES = 8
MIN_OVERLAP = 2

STOPWORDS = frozenset(
    "a an the i me my we you he she it they them this that these those of in on at to from for with by "
    "and or but is are was were be been do did does done when where what which who whom why how "
    "up down out into over after before during video frame frames time".split()
)

_TIMESTEP = re.compile(r"timestep\s+(\d+)", re.IGNORECASE)
_OBS_LINE = re.compile(r"^(?:Observation:\s*)?Frame (\d+): (.*)$", re.MULTILINE)
_TOTAL = re.compile(r"Total Frames:\s*(\d+)")
_FPS = re.compile(r"Frame Rate:\s*([\d.]+)")
_QUESTION = re.compile(r"^Question:\s*(.+)$", re.MULTILINE)
_PROPOSED = re.compile(r"Proposed frames:\s*([\d,\s]+)")


def _stem(tok: str) -> str:
    for suffix in ("ing", "ed", "s"):
        if len(tok) > len(suffix) + 2 and tok.endswith(suffix):
            return tok[: -len(suffix)]
    return tok


def keywords(text: str) -> set[str]:
    return {_stem(t) for t in tokenize(text) if t not in STOPWORDS and len(t) > 1}


def relevant(caption: str, question_keywords: set[str]) -> bool:
    return len(keywords(caption) & question_keywords) >= MIN_OVERLAP


class SimulatedBackend:
    def complete(self, bundle: PromptBundle) -> str:
        handler = getattr(self, f"_{bundle.tag}", None)
        if handler is None:
            return "Evaluation: False, Confidence: 0"
        return handler(bundle)

    # -- policy -----------------------------------------------------------------

    def _policy(self, bundle: PromptBundle) -> str:
        text = bundle.user_text
        fps = float(_FPS.search(text).group(1)) if _FPS.search(text) else 30.0
        sparse, dense = int(round(10 * fps)), int(round(fps))
        return (
            "Question type: temporal localization\n"
            "Analysis: The question asks for the moment an action happens, so the agent must find the "
            "frames that show it and report their span.\n"
            f"Sampling strategy: Uniform sampling with timestep {sparse}. If relevant frame is detected, "
            f"more uniform sample with timestep {dense} around it."
        )

    # -- agent ------------------------------------------------------------------

    def _agent(self, bundle: PromptBundle) -> str:
        user, system = bundle.user_text, bundle.system_text
        total = int(_TOTAL.search(system).group(1))
        q = _QUESTION.search(user)
        qk = keywords(q.group(1) if q else "")
        seen = {int(f): cap for f, cap in _OBS_LINE.findall(user)}
        hits = sorted(f for f, cap in seen.items() if relevant(cap, qk))

        policy_part = user.split("Policy:", 1)[1] if "Policy:" in user else ""
        steps = [int(s) for s in _TIMESTEP.findall(policy_part)]
        if len(steps) < 2:
            return self._coarse(total, seen, hits)
        sparse, dense = steps[0], steps[1]

        if not hits:
            todo = [f for f in range(0, total, sparse) if f not in seen][:BATCH]
            if not todo:
                return "Thought: Nothing relevant was found anywhere.\nFinal Answer: [0, %d]" % (total - 1)
            return ("Thought: Nothing relevant yet; continue the sparse pass.\nAction: get_frame_info\n"
                    f"Action Input: frames {', '.join(map(str, todo))}")

        # anchor on the sparse grid so the dense neighbourhood stays put
        anchor = next((f for f in hits if f % sparse == 0), hits[0])
        lo, hi = max(0, anchor - sparse), min(total - 1, anchor + sparse)
        todo = [f for f in range(lo, hi + 1, dense) if f not in seen][:BATCH]
        if todo:
            return (f"Thought: Frame {anchor} looks relevant; sample densely around it.\nAction: get_frame_info\n"
                    f"Action Input: frames {', '.join(map(str, todo))}")
        start = end = anchor
        dense_hits = {f for f in hits if lo <= f <= hi}
        while start - dense in dense_hits:
            start -= dense
        while end + dense in dense_hits:
            end += dense
        return f"Thought: The relevant frames span {start} to {end}.\nFinal Answer: [{start}, {end}]"

    def _coarse(self, total: int, seen: dict[int, str], hits: list[int]) -> str:
        if not seen:
            picks = sorted({min(total - 1, round((k + 0.5) * total / COARSE_SAMPLES)) for k in range(COARSE_SAMPLES)})
            return ("Thought: Look at a few frames across the video.\nAction: get_frame_info\n"
                    f"Action Input: frames {', '.join(map(str, picks))}")
        half = max(1, total // (4 * COARSE_SAMPLES))
        if hits:
            h = hits[0]
            return f"Thought: Frame {h} matches.\nFinal Answer: [{max(0, h - half)}, {min(total - 1, h + half)}]"
        return f"Thought: I could not find it.\nFinal Answer: [0, {half}]"

    # -- collaborators ----------------------------------------------------------

    def _sampler(self, bundle: PromptBundle) -> str:
        m = _PROPOSED.search(bundle.user_text)
        frames = [int(x) for x in re.findall(r"\d+", m.group(1))] if m else []
        if not frames:
            return "No suggestion."
        steps = [int(s) for s in _TIMESTEP.findall(bundle.system_text)]
        gaps = [b - a for a, b in zip(frames, frames[1:])]
        mode = "sparse" if steps and gaps and min(gaps) >= steps[0] else "dense"
        return (f"Suggest frames: {', '.join(map(str, frames))} ({mode} pass)\n"
                "Rationale: the proposal follows the policy timestep.")

    def _evaluator(self, bundle: PromptBundle) -> str:
        final = bundle.user_text.rsplit("Final Answer:", 1)[-1]
        if re.search(r"\[\s*\d+\s*,\s*\d+\s*\]", final):
            return "Evaluation: True, Confidence: 85"
        return "Evaluation: False, Confidence: 60"

    def _refiner(self, bundle: PromptBundle) -> str:
        return ("Diagnosis: The sparse pass located the action and the dense pass bounded it; "
                "no step was redundant.\n"
                "Refined plan: Keep the sparse timestep until a matching frame appears, then sample "
                "densely on both sides and stop as soon as both edges are found.")

    def _judge(self, bundle: PromptBundle) -> str:
        return "Evaluation: False, Confidence: 0"
