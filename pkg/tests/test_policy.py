import pytest
from hypothesis import given, strategies as st

from avua.errors import PolicyParseFailure
from avua.gateway import Transcript
from avua.memory import LogicalClock, MemoryStore
from avua.policy import PolicyEngine, format_experiences, parse_policy, video_details
from avua.types import DatasetKind, Provenance, Question, Refinement, VideoMeta

from tests.conftest import scripted_gateway, seq

META = VideoMeta(180, 30, 5400, (1350, 2700, 4050))
Q = Question("What is C doing?", DatasetKind.MCQ, ("a", "b", "c"))
GOOD = ("Question type: purpose/goal identification\nAnalysis: Summarise each scene.\n"
        "Sampling strategy: Uniform sampling with timestep 1350.")


class TestParse:
    def test_plain_headings(self):
        p = parse_policy(GOOD)
        assert p.question_type == "purpose/goal identification"
        assert p.analysis == "Summarise each scene."
        assert p.sampling_strategy == "Uniform sampling with timestep 1350."
        assert p.provenance is Provenance.GENERATED

    def test_markdown_headings_and_no_analysis_heading(self):
        text = ("**Question Type:** key action/moment detection\nThe action is short, so look closely.\n\n"
                "## How should the frames be sampled: sparse first, then dense around hits.")
        p = parse_policy(text)
        assert p.question_type == "key action/moment detection"
        assert p.analysis == "The action is short, so look closely."
        assert p.sampling_strategy == "sparse first, then dense around hits."

    def test_fields_are_substrings(self):
        p = parse_policy(GOOD)
        for field in (p.question_type, p.analysis, p.sampling_strategy):
            assert field in p.raw_text

    @pytest.mark.parametrize("text", ["", "I have no plan.", "Question type:\nAnalysis: x"])
    def test_failures(self, text):
        with pytest.raises(PolicyParseFailure):
            parse_policy(text)

    @given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=200))
    def test_never_crashes_and_fields_are_verbatim(self, text):
        try:
            p = parse_policy(text)
        except PolicyParseFailure:
            return
        assert p.question_type and p.question_type in text
        assert p.analysis in text and p.sampling_strategy in text


class TestEngine:
    def test_generate_renders_details(self):
        gw = scripted_gateway(seq("policy", GOOD))
        t = Transcript()
        p = PolicyEngine(gw).generate(Q, META, transcript=t)
        assert p.question_type == "purpose/goal identification"
        (entry,) = t.entries
        assert entry.tag == "policy" and entry.fragments == []
        assert "Option 2: c" in entry.user and "Frames with scene change: 1350, 2700, 4050" in entry.user

    def test_one_reprompt(self):
        gw = scripted_gateway(seq("policy", "no idea", GOOD))
        t = Transcript()
        assert PolicyEngine(gw).generate(Q, META, transcript=t).question_type
        assert len(t) == 2 and "could not be parsed" in t.entries[1].user

    def test_gives_up_after_reprompt(self):
        gw = scripted_gateway(seq("policy", "no idea", "still none"))
        with pytest.raises(PolicyParseFailure):
            PolicyEngine(gw).generate(Q, META)

    def test_refinement_fragment_and_provenance(self):
        gw = scripted_gateway(seq("policy", GOOD))
        t = Transcript()
        p = PolicyEngine(gw).generate(Q, META, prior_refinement=Refinement("missed it", "look at 2700"),
                                      transcript=t)
        assert p.provenance is Provenance.REFINED
        assert t.entries[0].fragments == ["refinement"]
        assert "Refined plan: look at 2700" in t.entries[0].user

    def test_experiences_fragment(self):
        store = MemoryStore(clock=LogicalClock())
        for i in range(4):
            store.put(store.new_record("goal", f"q{i}", refinement=Refinement("d", f"plan {i}"), verdict=True,
                                       confidence=90))
        text = format_experiences(store.records())
        assert text.count("Question type: goal") == 3 and "plan 3" not in text
        gw = scripted_gateway(seq("policy", GOOD))
        t = Transcript()
        PolicyEngine(gw).generate(Q, META, experiences=store.records(), transcript=t)
        assert t.entries[0].fragments == ["experiences"]
        assert "Past experiences with similar questions" in t.entries[0].user


def test_video_details():
    d = video_details(VideoMeta(44, 30, 1320))
    assert "- Duration: 0.7 minutes (44 seconds)" in d
    assert "- Total Frames: 1320 frames." in d and "scene change: not available" in d
