import pytest

from avua.errors import AdapterFailure, DuplicateTool, ToolFatal, UnknownTool
from avua.memory import ShortTermCache
from avua.sampler import parse_frame_spec
from avua.toolbox import (
    NO_TEXT_MARKER,
    STANDARD_TOOLS,
    AdapterResult,
    FrameLedger,
    RemoteToolAdapter,
    SyntheticAdapter,
    SyntheticVideoSpec,
    ToolDescriptor,
    Toolbox,
    frame_window,
    ledger_report,
    standard_toolbox,
)
from avua.types import VideoMeta


def call(box, tool, raw, meta, ledger=None, cache=None):
    ledger = ledger if ledger is not None else FrameLedger()
    return box.invoke(tool, parse_frame_spec(raw), ledger, meta, cache), ledger


class TestCharging:
    def test_window_tools_charge_four(self, ego_toolbox, ego_spec):
        obs, ledger = call(ego_toolbox, "video_caption", "2700", ego_spec.meta)
        assert obs.frames_charged == [2700, 2701, 2702, 2703]
        assert obs.text.startswith("Frames 2700-2703: C assembles a wooden shelf")
        assert ledger.total_charges == 4

    def test_window_clipped_at_video_end(self, ego_toolbox, ego_spec):
        obs, _ = call(ego_toolbox, "video_qa", "5398, what happens?", ego_spec.meta)
        assert obs.frames_charged == [5398, 5399]

    @pytest.mark.parametrize("tool", ["get_frame_info", "image_qa", "object_tracking", "text_caption"])
    def test_single_frame_tools(self, ego_toolbox, ego_spec, tool):
        obs, _ = call(ego_toolbox, tool, "10, 20", ego_spec.meta)
        assert obs.frames_charged == [10, 20]

    def test_audio_charges_nothing(self, ego_toolbox, ego_spec):
        obs, ledger = call(ego_toolbox, "audio_transcription", "300", ego_spec.meta)
        assert obs.frames_charged == [] and ledger.total_charges == 0
        assert "let's build" in obs.text
        obs, _ = call(ego_toolbox, "audio_transcription", "whole video please", ego_spec.meta)
        assert "let's build" in obs.text

    def test_distinct_versus_total(self, ego_toolbox, ego_spec):
        ledger = FrameLedger()
        call(ego_toolbox, "video_caption", "100", ego_spec.meta, ledger)
        call(ego_toolbox, "object_tracking", "101", ego_spec.meta, ledger)
        assert ledger.total_charges == 5 and len(ledger.distinct_frames) == 4
        assert ledger.per_tool == {"video_caption": 4, "object_tracking": 1}
        assert ledger_report(ledger, ego_spec.meta) == {"frames": 4, "ratio": 4 / 5400}

    def test_ratio_for_fourteen_frames(self):
        ledger = FrameLedger()
        ledger.charge("get_frame_info", list(range(14)))
        assert ledger_report(ledger, VideoMeta(180, 30, 5400))["ratio"] == pytest.approx(0.0025926, abs=1e-7)


class TestCache:
    def test_repeat_access_is_free(self, ego_toolbox, ego_spec):
        ledger, cache = FrameLedger(), ShortTermCache()
        first, _ = call(ego_toolbox, "get_frame_info", "0, 1350", ego_spec.meta, ledger, cache)
        again, _ = call(ego_toolbox, "get_frame_info", "1350, 0", ego_spec.meta, ledger, cache)
        assert again.cache_hit and again.frames_charged == [] and ledger.total_charges == 2
        assert set(again.text.splitlines()) == set(first.text.splitlines())

    def test_query_is_part_of_the_key(self, ego_toolbox, ego_spec):
        ledger, cache = FrameLedger(), ShortTermCache()
        call(ego_toolbox, "image_qa", "5, what is it?", ego_spec.meta, ledger, cache)
        obs, _ = call(ego_toolbox, "image_qa", "5, who is there?", ego_spec.meta, ledger, cache)
        assert not obs.cache_hit and ledger.total_charges == 2

    def test_window_cached_under_every_frame(self, ego_toolbox, ego_spec):
        ledger, cache = FrameLedger(), ShortTermCache()
        call(ego_toolbox, "video_caption", "2700", ego_spec.meta, ledger, cache)
        obs, _ = call(ego_toolbox, "video_caption", "2702", ego_spec.meta, ledger, cache)
        assert obs.cache_hit and ledger.total_charges == 4


class TestSyntheticOutputs:
    def test_detection_threshold_is_strict(self, ego_spec):
        spec = SyntheticVideoSpec.from_dict({
            "meta": {"duration_sec": 1, "frame_rate": 10, "total_frames": 10},
            "frames": {"0": {"caption": "c", "objects": [{"label": "edge", "confidence": 0.6},
                                                         {"label": "cat", "confidence": 0.61}]}},
        })
        box = standard_toolbox(SyntheticAdapter(spec))
        obs, _ = call(box, "object_tracking", "0", spec.meta)
        assert obs.text == "Frame 0: cat (0.61)"

    def test_ocr(self, ego_toolbox, ego_spec):
        assert call(ego_toolbox, "text_caption", "0", ego_spec.meta)[0].text == "Frame 0: 'FRAGILE'"
        assert call(ego_toolbox, "text_caption", "3000", ego_spec.meta)[0].text == f"Frame 3000: {NO_TEXT_MARKER}"

    def test_qa_lists_visible_objects(self, ego_toolbox, ego_spec):
        obs, _ = call(ego_toolbox, "video_qa", "4050, What is C building?", ego_spec.meta)
        assert "(Q: What is C building?)" in obs.text and "Visible: screwdriver" in obs.text
        assert "hammer" not in obs.text

    def test_planted_windows(self):
        from tests.conftest import FIXTURES
        spec = SyntheticVideoSpec.load(FIXTURES / "videos" / "nlq_workshop.json")
        assert spec.planted_windows() == [(2215, 2530), (11050, 11360)]

    def test_annotation_outside_video_rejected(self):
        with pytest.raises(ValueError):
            SyntheticVideoSpec.from_dict({"meta": {"duration_sec": 1, "frame_rate": 10, "total_frames": 10},
                                          "frames": {"10": {"caption": "x"}}})


class TestRegistry:
    def test_standard_tools(self, ego_toolbox):
        assert ego_toolbox.names == [d.name for d in STANDARD_TOOLS]
        assert "get_frame_info" in ego_toolbox.describe()

    def test_duplicate(self, ego_toolbox):
        with pytest.raises(DuplicateTool):
            ego_toolbox.register(STANDARD_TOOLS[0], None)

    def test_unknown(self, ego_toolbox, ego_spec):
        with pytest.raises(UnknownTool, match="available"):
            call(ego_toolbox, "teleport", "1", ego_spec.meta)

    def test_missing_frames(self, ego_toolbox, ego_spec):
        obs, _ = call(ego_toolbox, "video_caption", "what happens?", ego_spec.meta)
        assert obs.text.startswith("Error:") and obs.frames_charged == []

    def test_adapter_error_becomes_observation(self, ego_spec):
        class Flaky:
            def __init__(self):
                self.n = 0

            def run(self, tool, frames, query, meta):
                self.n += 1
                if self.n == 2:
                    raise AdapterFailure("model server down")
                return AdapterResult("ok", frames)

        box = Toolbox()
        box.register(ToolDescriptor("look", "image", 1, False, "d"), Flaky())
        obs, ledger = call(box, "look", "1, 2, 3", ego_spec.meta)
        assert obs.text == "Error: tool look failed: model server down"
        assert obs.frames_charged == [1] and ledger.total_charges == 1

    def test_fatal_propagates(self, ego_spec):
        class Dead:
            def run(self, *a):
                raise ToolFatal("gone")

        box = Toolbox()
        box.register(ToolDescriptor("look", "image", 1, False, "d"), Dead())
        with pytest.raises(ToolFatal):
            call(box, "look", "1", ego_spec.meta)

    def test_descriptor_validation(self):
        with pytest.raises(ValueError):
            ToolDescriptor("x", "smell", 1, False, "d")

    @pytest.mark.parametrize("start,size,total,stride,expected", [
        (0, 4, 100, 1, [0, 1, 2, 3]), (98, 4, 100, 1, [98, 99]), (0, 4, 100, 5, [0, 5, 10, 15]),
        (7, 0, 100, 1, [7]),
    ])
    def test_frame_window(self, start, size, total, stride, expected):
        assert frame_window(start, size, total, stride) == expected


class TestRemoteAdapter:
    def test_round_trip(self, json_server, ego_spec):
        url, calls, set_reply = json_server
        set_reply(lambda path, body: (200, {"observation": f"saw {body['frame_indices']}",
                                            "frames_consumed": body["frame_indices"], "metadata": {"m": 1}}))
        box = standard_toolbox(RemoteToolAdapter(url))
        obs, ledger = call(box, "video_qa", "10, who?", ego_spec.meta)
        assert obs.text == "saw [10, 11, 12, 13]" and ledger.total_charges == 4
        path, body = calls[0]
        assert path == "/invoke" and body == {"tool": "video_qa", "frame_indices": [10, 11, 12, 13], "query": "who?"}

    def test_integer_frames_consumed(self, json_server, ego_spec):
        url, _, set_reply = json_server
        set_reply(lambda path, body: (200, {"observation": "x", "frames_consumed": 2}))
        obs, _ = call(standard_toolbox(RemoteToolAdapter(url)), "video_caption", "10", ego_spec.meta)
        assert obs.frames_charged == [10, 11]

    def test_server_error_is_an_observation(self, json_server, ego_spec):
        url, _, set_reply = json_server
        set_reply(lambda path, body: (503, {}))
        obs, _ = call(standard_toolbox(RemoteToolAdapter(url)), "get_frame_info", "1", ego_spec.meta)
        assert obs.text.startswith("Error: tool get_frame_info failed")
