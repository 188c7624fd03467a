"""Regenerate the bundled fixture suite under src/avua/fixtures.

Run from the repository root:  python3 scripts/build_fixtures.py

Everything here is hand-authored data; the script only lays it out as JSON so
the suite stays reviewable in one place.
"""

from __future__ import annotations

import json
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1] / "src" / "avua" / "fixtures"


def dump(rel: str, data) -> None:
    path = ROOT / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def meta(duration: float, fps: float, scenes=None) -> dict:
    return {"duration_sec": duration, "frame_rate": fps, "total_frames": round(duration * fps),
            "scene_change_frames": scenes}


def frame(caption: str, objects=(), ocr: str = "", window=None) -> dict:
    d = {"caption": caption, "objects": [{"label": l, "confidence": c} for l, c in objects], "ocr_text": ocr}
    if window is not None:
        d["answer_window"] = list(window)
    return d


def seq(tag: str, responses: list[str]) -> list[dict]:
    """Entries that play back in order, one use each."""
    return [{"tag": tag, "matcher": "", "response": r, "max_uses": 1} for r in responses]


def echo_sampler(proposals: list[list[int]], mode: str = "sparse") -> list[dict]:
    out = []
    for frames in proposals:
        listed = ", ".join(map(str, frames))
        out.append({"tag": "sampler", "matcher": f"Proposed frames: {listed}\n",
                    "response": f"Suggest frames: {listed} ({mode} pass)\nRationale: the proposal already follows the policy.",
                    "max_uses": None})
    return out


def step(thought: str, action: str, action_input: str) -> str:
    return f"Thought: {thought}\nAction: {action}\nAction Input: {action_input}"


def final(thought: str, answer: str) -> str:
    return f"Thought: {thought}\nFinal Answer: {answer}"


def policy(qtype: str, analysis: str, strategy: str) -> str:
    return f"Question type: {qtype}\nAnalysis: {analysis}\nSampling strategy: {strategy}"


# ---------------------------------------------------------------------------
# Videos

VIDEOS = {
    "egoschema_demo": {
        "id": "egoschema_demo",
        "meta": meta(180, 30, [1350, 2700, 4050]),
        "frames": {
            "0": frame("C opens a cardboard box on the workbench", [("box", 0.93)], ocr="FRAGILE"),
            "1350": frame("C sorts screws and wooden boards on the workbench", [("screw", 0.81), ("board", 0.77)]),
            "2700": frame("C assembles a wooden shelf with a screwdriver", [("screwdriver", 0.92), ("shelf", 0.88)]),
            "4050": frame("C tightens the last screws of the shelf", [("screwdriver", 0.90), ("hammer", 0.40)]),
            "5000": frame("C stands the finished shelf against the wall", [("shelf", 0.95)]),
        },
        "audio_segments": [{"start_sec": 10.0, "end_sec": 14.0, "transcript": "okay, let's build this thing"}],
    },
    "nextqa_park": {
        "id": "nextqa_park",
        "meta": meta(44, 30, [440, 900, 1200]),
        "frames": {
            "0": frame("a boy runs across the grass towards a dog", [("boy", 0.97), ("dog", 0.95)]),
            "440": frame("the boy throws a red ball", [("boy", 0.96), ("ball", 0.83)]),
            "900": frame("the dog carries the ball back to the boy", [("dog", 0.94), ("ball", 0.71)]),
            "1200": frame("the boy hugs the dog and waves at the camera", [("boy", 0.95), ("dog", 0.93)]),
        },
        "audio_segments": [{"start_sec": 40.0, "end_sec": 43.0, "transcript": "good boy!"}],
    },
    "nlq_kitchen": {
        "id": "nlq_kitchen",
        "meta": meta(480, 30, None),
        "frames": {
            "0": frame("I walk around the kitchen"),
            "3000": frame("I open the fridge and take out the milk", [("milk", 0.9)]),
            "5100": frame("I wipe the counter with a cloth", [("cloth", 0.8)]),
            "7335": frame("I pick up the red mug from the counter", [("mug", 0.91)], window=(7335, 7650)),
            "7651": frame("I pour coffee at the stove", [("kettle", 0.7)]),
            "10500": frame("I walk around the kitchen"),
        },
    },
    "nlq_hallway": {
        "id": "nlq_hallway",
        "meta": meta(300, 30, None),
        "frames": {
            "0": frame("I walk down the hallway"),
            "2400": frame("I put on my shoes by the door", [("shoe", 0.88)]),
            "4125": frame("I pick up the keys from the hallway table", [("keys", 0.86)], window=(4125, 4410)),
            "4411": frame("I open the front door"),
            "6000": frame("I walk down the stairs outside"),
        },
    },
    "nlq_workshop": {
        "id": "nlq_workshop",
        "meta": meta(522, 30, None),
        "frames": {
            "0": frame("I measure a plank on the bench", [("plank", 0.9)]),
            "2215": frame("I cut the tape with the scissors", [("scissors", 0.87), ("tape", 0.8)], window=(2215, 2530)),
            "2531": frame("I wrap the parcel in paper", [("parcel", 0.8)]),
            "6000": frame("I sand the edge of the plank", [("sandpaper", 0.7)]),
            "11050": frame("I put the scissors back in the drawer", [("scissors", 0.85)], window=(11050, 11360)),
            "11361": frame("I sweep sawdust off the floor", [("broom", 0.9)]),
        },
    },
    "movie_city": {
        "id": "movie_city",
        "meta": meta(564, 24, [3384, 6768, 10152]),
        "frames": {
            "0": frame("a dark street lit by a single lamp at night", [("lamp", 0.8)]),
            "3384": frame("glass towers over a busy highway", [("car", 0.93), ("building", 0.9)]),
            "6768": frame("a man checks his smartphone on a subway platform", [("phone", 0.88)],
                          ocr="Line 4 - Downtown"),
            "10152": frame("drones deliver parcels between skyscrapers", [("drone", 0.8)]),
        },
        "audio_segments": [{"start_sec": 300.0, "end_sec": 305.0, "transcript": "the train is late again"}],
    },
}

EGO_OPTIONS = ["Repairing a chair", "Packing a box for shipping", "Painting a wall",
               "Assembling a shelf", "Cleaning the workshop"]


# ---------------------------------------------------------------------------
# Scripts

def common_tail(eval_responses: list[str], refine_responses: list[str]) -> list[dict]:
    return seq("evaluator", eval_responses) + seq("refiner", refine_responses)


SCRIPTS: dict[str, list[dict]] = {}

# 14 distinct frames, 17 charges: 4 single frames, three 4-frame windows, one single frame
SCRIPTS["ego_demo"] = (
    seq("policy", [policy(
        "purpose/goal identification",
        "The question asks for the overall goal, so the agent should look at each scene and summarise.",
        "Uniform sampling with timestep 1350. If relevant frame is detected, more uniform sample with timestep 30.",
    )])
    + seq("agent", [
        step("I will first look at one frame per scene.", "get_frame_info", "frames 0, 1350, 2700, 4050"),
        step("Frame 2700 shows assembly; caption the surrounding window.", "video_caption", "2700"),
        step("Check what is being built near the end.", "video_qa", "frame 4050, What is C building?"),
        step("Confirm the earlier preparation scene.", "video_caption", "1350"),
        step("Check the final object on screen.", "object_tracking", "5000"),
        final("Every scene shows C building a shelf.", "Option 3"),
    ])
    + echo_sampler([[0, 1350, 2700, 4050], [2700], [4050], [1350], [5000]])
    + common_tail(["Evaluation: True, Confidence: 90"],
                  ["Diagnosis: The scene sampling covered the whole video and the answer is supported.\n"
                   "Refined plan: Sample one frame per scene, then caption the scene with the main action."])
)

RETRY_PLAN = "Track the object in C's hand at the assembly scenes before answering"
SCRIPTS["ego_retry"] = (
    [{"tag": "policy", "matcher": RETRY_PLAN, "max_uses": 1,
      "response": policy("tools and materials usage",
                         "The earlier trial guessed from captions; this time the tool in hand must be tracked.",
                         f"{RETRY_PLAN}. Uniform sampling with timestep 1350, then timestep 30 around the assembly.")}]
    + seq("policy", [policy(
        "tools and materials usage",
        "The question asks which tool is used most.",
        "Uniform sampling with timestep 2700. If relevant frame is detected, more uniform sample with timestep 30.",
    )])
    + seq("agent", [
        step("Look at the start and the middle.", "get_frame_info", "frames 0, 2700"),
        final("A workbench usually means a hammer.", "Option 0"),
        step("Track objects during assembly.", "object_tracking", "2700"),
        step("Ask what C holds while tightening.", "video_qa", "4050, Which tool is in C's hand?"),
        final("The screwdriver is in C's hand in both assembly scenes.", "Option 1"),
    ])
    + echo_sampler([[0, 2700], [2700], [4050]])
    + common_tail(
        ["Evaluation: False, Confidence: 40", "Evaluation: True, Confidence: 88"],
        [f"Diagnosis: The answer was guessed from a caption without checking the tool.\nRefined plan: {RETRY_PLAN}.",
         "Diagnosis: Tracking the tool in hand settled the question.\n"
         "Refined plan: For tool questions, track objects in the assembly scenes first."],
    )
)

SCRIPTS["ego_wrong"] = (
    seq("policy", [policy("key action/moment detection", "The question is about the end of the video.",
                          "Look at the last scene only.")])
    + seq("agent", [
        step("Check the last seconds.", "get_frame_info", "5300"),
        final("The shelf seems to be lying down.", "Option 4"),
    ])
    + echo_sampler([[5300]])
    + common_tail(["Evaluation: True, Confidence: 70"],
                  ["Diagnosis: The caption mentions a wall but the answer ignored it.\n"
                   "Refined plan: Read the final caption carefully before answering."])
)

SCRIPTS["nextqa_end"] = (
    seq("policy", [policy("action sequence analysis", "The question has a textual cue for the end of the video.",
                          "Sample only the last scene densely.")])
    + seq("agent", [
        step("The cue says the end; look at the last frames.", "get_frame_info", "frames 1200, 1300"),
        step("Caption the very end; the window is clipped by the video end.", "video_caption", "1318"),
        final("The boy hugs the dog and waves.", "Option 1"),
    ])
    + echo_sampler([[1200, 1300], [1318]], mode="dense")
    + common_tail(["Evaluation: True, Confidence: 92"],
                  ["Diagnosis: The end cue let the agent skip most of the video.\n"
                   "Refined plan: Use positional cues to start sampling at the matching part of the video."])
)

SCRIPTS["nextqa_start"] = (
    seq("policy", [policy("action sequence analysis", "The question has a textual cue for the beginning.",
                          "Sample the first seconds only.")])
    + seq("agent", [
        step("Look at the beginning.", "get_frame_info", "frames 0, 100"),
        final("The boy runs towards the dog.", "Option 0"),
    ])
    + echo_sampler([[0, 100]], mode="dense")
    + common_tail(["Evaluation: True, Confidence: 91"],
                  ["Diagnosis: The beginning cue was enough.\n"
                   "Refined plan: Start with the first scene for beginning questions."])
)

SCRIPTS["nextqa_nocue"] = (
    seq("policy", [policy("causal reasoning", "No positional cue, so the whole video must be scanned.",
                          "Uniform sampling with timestep 330. If relevant frame is detected, more uniform "
                          "sample with timestep 10.")])
    + seq("agent", [
        step("Scan the whole video.", "get_frame_info", "frames 0, 330, 660, 990, 1319"),
        step("Ask about the dog near frame 900.", "video_qa", "900, What does the dog carry?"),
        step("Check the objects close by.", "image_qa", "910, Is the ball visible?"),
        final("The dog brings the ball back.", "Option 1"),
    ])
    + echo_sampler([[0, 330, 660, 990, 1319], [900], [910]])
    + common_tail(["Evaluation: True, Confidence: 86"],
                  ["Diagnosis: Without a cue the uniform scan was needed.\n"
                   "Refined plan: Scan uniformly, then ask a question at the matching scene."])
)

SCRIPTS["mc_era"] = (
    seq("policy", [policy("setting identification", "Look for technology that dates the city.",
                          "One frame per scene, then read any visible text.")])
    + seq("agent", [
        step("One frame per scene.", "get_frame_info", "frames 0, 3384, 6768, 10152"),
        step("Read the sign on the platform.", "text_caption", "6768"),
        final("Smartphones, drones and glass towers place it in the present day.", "modern age"),
    ])
    + echo_sampler([[0, 3384, 6768, 10152], [6768]])
    + common_tail(["Evaluation: True, Confidence: 90"],
                  ["Diagnosis: The technology on screen dates the setting.\n"
                   "Refined plan: Look for dated objects in every scene."])
    + seq("judge", ["Evaluation: True, Confidence: 95"])
)

SCRIPTS["mc_daytime"] = (
    seq("policy", [policy("setting identification", "The cue points to the start of the movie.",
                          "Look at the first scene.")])
    + seq("agent", [
        step("Look at the first frame.", "get_frame_info", "0"),
        final("A lamp is lit, so it is probably evening.", "evening"),
    ])
    + echo_sampler([[0]])
    + common_tail(["Evaluation: True, Confidence: 80"],
                  ["Diagnosis: One frame was enough to see it was dark.\n"
                   "Refined plan: Check the sky in the first scene."])
    + seq("judge", ["Evaluation: True, Confidence: 75"])
)


# ---------------------------------------------------------------------------
# Suite manifest

def mcq(text: str, options: list[str]) -> dict:
    return {"text": text, "dataset_kind": "mcq", "options": options}


def item(item_id: str, question: dict, video: str, gold, backend: dict) -> dict:
    return {"id": item_id, "question": question, "meta": VIDEOS[video]["meta"], "gold": gold,
            "video_ref": f"videos/{video}.json", "backend": backend}


def scripted(name: str) -> dict:
    return {"kind": "scripted", "script": f"scripts/{name}.json"}


SIMULATED = {"kind": "simulated"}

SUITE = [
    item("ego_demo", mcq("What is the overall goal of C's actions in the video?", EGO_OPTIONS),
         "egoschema_demo", 3, scripted("ego_demo")),
    item("ego_retry", mcq("Which tool does C use most while building?",
                          ["Hammer", "Screwdriver", "Saw", "Drill", "Wrench"]),
         "egoschema_demo", 1, scripted("ego_retry")),
    item("ego_wrong", mcq("Where does C put the shelf at the end of the video?",
                          ["On the table", "Back in the box", "Against the wall", "Outside", "On the floor"]),
         "egoschema_demo", 2, scripted("ego_wrong")),
    item("nextqa_end", mcq("What does the boy do at the end of the video?",
                           ["Throws a ball", "Hugs the dog and waves", "Runs away", "Sits down", "Cries"]),
         "nextqa_park", 1, scripted("nextqa_end")),
    item("nextqa_start", mcq("What does the boy do at the beginning of the video?",
                             ["Runs towards a dog", "Eats lunch", "Rides a bike", "Waves goodbye", "Sleeps"]),
         "nextqa_park", 0, scripted("nextqa_start")),
    item("nextqa_nocue", mcq("Why does the dog run back to the boy?",
                             ["To get food", "To bring back the ball", "It is scared", "To sleep",
                              "To bark at a stranger"]),
         "nextqa_park", 1, scripted("nextqa_nocue")),
    item("nlq_kitchen_mug", {"text": "When did I pick up the red mug?", "dataset_kind": "temporal_localization",
                             "options": None}, "nlq_kitchen", [7335, 7650], SIMULATED),
    item("nlq_hallway_keys", {"text": "When did I pick up my keys?", "dataset_kind": "temporal_localization",
                              "options": None}, "nlq_hallway", [4125, 4410], SIMULATED),
    item("nlq_workshop_cut", {"text": "When did I cut the tape with the scissors?",
                              "dataset_kind": "temporal_localization", "options": None},
         "nlq_workshop", [2215, 2530], SIMULATED),
    item("nlq_workshop_drawer", {"text": "When did I put the scissors in the drawer?",
                                 "dataset_kind": "temporal_localization", "options": None},
         "nlq_workshop", [11050, 11360], SIMULATED),
    item("mc_era", {"text": "What era is the city in the movie from?", "dataset_kind": "open_ended",
                    "options": None}, "movie_city", "modern age", scripted("mc_era")),
    item("mc_daytime", {"text": "What time of day is it at the start of the movie?", "dataset_kind": "open_ended",
                        "options": None}, "movie_city", "night", scripted("mc_daytime")),
]


# ---------------------------------------------------------------------------
# Judge fixture: 10 items spanning confidences {50, 75, 80, 81, 95} x verdict

def judge_fixture() -> tuple[list[dict], list[dict]]:
    items, script = [], []
    for conf in (50, 75, 80, 81, 95):
        for verdict in (True, False):
            pid = f"prediction-{conf}-{str(verdict).lower()}"
            items.append({"id": f"judge_{conf}_{str(verdict).lower()}", "question": "What era is the city from?",
                          "gold": "modern age", "prediction": pid, "verdict": verdict, "confidence": conf,
                          "expected_correct": verdict and conf >= 80})
            script.append({"tag": "judge", "matcher": f"Prediction: {pid}\n", "max_uses": None,
                           "response": f"Evaluation: {verdict}, Confidence: {conf}"})
    return items, script


# ---------------------------------------------------------------------------
# Step-parser format variants

STEP_POSITIVE = [
    {"text": "Thought: look first\nAction: get_frame_info\nAction Input: 0, 10", "expect": "action"},
    {"text": "thought: lower case labels\naction: video_caption\naction input: 2700", "expect": "action"},
    {"text": "THOUGHT: shouting\nACTION: image_qa\nACTION INPUT: 5, what colour?", "expect": "action"},
    {"text": "  Thought:   indented with spaces\n  Action:  get_frame_info  \n  Action Input:   12  ",
     "expect": "action"},
    {"text": "Action: object_tracking\nAction Input: 40\nThought: reasoning written last", "expect": "action"},
    {"text": "Action Input: 7\nAction: text_caption", "expect": "action"},
    {"text": "**Thought:** markdown bold\n**Action:** video_qa\n**Action Input:** 300, who is there?",
     "expect": "action"},
    {"text": "Thought: tabs\tbetween\nAction:\tget_frame_info\nAction_Input:\t[1, 2, 3]", "expect": "action"},
    {"text": "Thought: done\nFinal Answer: Option 3", "expect": "final"},
    {"text": "final answer: option 2", "expect": "final"},
    {"text": "Thought: window found\nFINAL ANSWER:   [3410, 4000]", "expect": "final"},
    {"text": "Thought: keep going\nAction: `get_frame_info`\nAction Input: frames 0-30 step 10\n"
             "Observation: the model should not write this", "expect": "action"},
]

STEP_NEGATIVE = [
    {"text": ""},
    {"text": "I think the answer is probably the third option."},
    {"text": "Thought: I need to look\nAction: get_frame_info"},
    {"text": "Thought: only an input\nAction Input: 0, 10"},
    {"text": "Thought: empty action\nAction:\nAction Input: 5"},
    {"text": "Thought: nothing after\nFinal Answer:"},
]


# ---------------------------------------------------------------------------


def main() -> None:
    for name, video in VIDEOS.items():
        dump(f"videos/{name}.json", video)
    for name, script in SCRIPTS.items():
        dump(f"scripts/{name}.json", script)
    dump("suite.json", SUITE)
    items, script = judge_fixture()
    dump("judge/items.json", items)
    dump("judge/script.json", script)
    dump("parser/step_positive.json", STEP_POSITIVE)
    dump("parser/step_negative.json", STEP_NEGATIVE)
    print(f"wrote fixtures to {ROOT}")


if __name__ == "__main__":
    main()
