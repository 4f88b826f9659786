import pytest
from hypothesis import given
from hypothesis import strategies as st

from phenoloop.ontology import (
    LexiconError,
    Matcher,
    Ontology,
    OntologyError,
    build_matcher,
    default_matcher,
    parse_obo,
)

HYPERTENSION_STANZA = """\
[Term]
id: HP:0000822
name: Hypertension
synonym: "High blood pressure" EXACT []
is_a: HP:0000118 ! Phenotypic abnormality
"""

WITH_PARENT = (
    "[Term]\nid: HP:0000118\nname: Phenotypic abnormality\n" + HYPERTENSION_STANZA
)


class TestParseObo:
    def test_single_stanza(self):
        ont = parse_obo(WITH_PARENT.splitlines())
        term = ont["HP:0000822"]
        assert term.name == "Hypertension"
        assert term.synonyms == ("High blood pressure",)
        assert term.parents == ("HP:0000118",)

    def test_empty_stream(self):
        assert len(parse_obo([])) == 0

    def test_missing_name_is_error(self):
        with pytest.raises(OntologyError, match="missing id or name"):
            parse_obo(["[Term]", "id: HP:0000001"])

    def test_self_parent_is_cycle_error(self):
        with pytest.raises(OntologyError, match="cycle"):
            parse_obo(["[Term]", "id: HP:0000001", "name: Selfish", "is_a: HP:0000001"])

    def test_two_node_cycle(self):
        lines = [
            "[Term]", "id: HP:0000001", "name: A", "is_a: HP:0000002",
            "[Term]", "id: HP:0000002", "name: B", "is_a: HP:0000001",
        ]
        with pytest.raises(OntologyError, match="cycle"):
            parse_obo(lines)

    def test_unknown_lines_ignored(self):
        lines = HYPERTENSION_STANZA.splitlines() + ["def: whatever", "xref: UMLS:C12"]
        assert len(parse_obo(lines)) == 1

    def test_bad_id_pattern(self):
        with pytest.raises(OntologyError, match="invalid HPO id"):
            parse_obo(["[Term]", "id: HP:12", "name: Short"])


class TestMatcher:
    def test_longest_match_wins(self):
        m = Matcher({"lung carcinoma": "HP:0000001", "small cell lung carcinoma": "HP:0000002"})
        result = m.extract("small cell lung carcinoma")
        assert [x.hpo_id for x in result.mentions] == ["HP:0000002"]

    def test_conflicting_phrase_errors(self):
        with pytest.raises(LexiconError, match="both"):
            Matcher({"rash": "HP:0000001", "Rash": "HP:0000002"})

    def test_build_matcher_ontology_only(self):
        ont = parse_obo(HYPERTENSION_STANZA.splitlines())
        m = build_matcher(ont)
        assert m.extract("high blood pressure").present_ids == {"HP:0000822"}

    def test_build_matcher_conflict_across_sources(self):
        ont = parse_obo(HYPERTENSION_STANZA.splitlines())
        with pytest.raises(LexiconError):
            build_matcher(ont, {"hypertension": "HP:9999999"})

    def test_unresolved_parents_dropped(self):
        ont = parse_obo(HYPERTENSION_STANZA.splitlines())
        # HP:0000118 is not in this one-stanza subset, so the reference goes
        assert ont["HP:0000822"].parents == ()

    def test_ancestor_propagation_is_opt_in(self):
        stanzas = [
            "[Term]", "id: HP:0000001", "name: Root",
            "[Term]", "id: HP:0000002", "name: Symptom", "is_a: HP:0000001",
            "[Term]", "id: HP:0000003", "name: Night cough", "is_a: HP:0000002",
        ]
        ont = parse_obo(stanzas)
        plain = build_matcher(ont)
        assert plain.extract("night cough").present_ids == {"HP:0000003"}
        rollup = build_matcher(ont, propagate_ancestors=True)
        assert rollup.extract("night cough").present_ids == {
            "HP:0000003",
            "HP:0000002",
            "HP:0000001",
        }
        assert {"HP:0000001", "HP:0000002"} <= rollup.target_ids


@pytest.fixture(scope="module")
def matcher():
    return default_matcher()


class TestExtraction:
    def test_name_match(self, matcher):
        assert matcher.extract("patient has hypertension").present_ids == {"HP:0000822"}

    def test_abbreviation(self, matcher):
        assert matcher.extract("HTN noted").present_ids == {"HP:0000822"}

    def test_negated_mention_excluded(self, matcher):
        result = matcher.extract("no evidence of weight loss")
        assert result.present_ids == frozenset()
        (mention,) = result.mentions
        assert mention.hpo_id == "HP:0001824" and mention.negated

    def test_contextual_synonym(self, matcher):
        assert matcher.extract("rise in blood pressure").present_ids == {"HP:0000822"}

    def test_negation_is_sentence_scoped(self, matcher):
        result = matcher.extract("No fever. Hypertension persists.")
        assert result.present_ids == {"HP:0000822"}
        assert {m.hpo_id: m.negated for m in result.mentions} == {
            "HP:0001945": True,
            "HP:0000822": False,
        }

    def test_negation_window_limits_scope(self, matcher):
        # Cue sits 7 tokens before the mention: outside the 5-token window.
        text = "no acute events overnight and the patient reports ascites"
        result = matcher.extract(text)
        assert result.present_ids == {"HP:0001541"}

    def test_spans_slice_note_exactly(self, matcher):
        note = "  Findings consistent with pleural effusion today.  "
        result = matcher.extract(note)
        for m in result.mentions:
            assert note[m.start : m.end] == m.matched_text

    def test_whitespace_insensitive_ids(self, matcher):
        a = matcher.extract("patient has hypertension")
        b = matcher.extract("   patient has hypertension \n")
        assert a.present_ids == b.present_ids

    def test_no_nested_mentions(self, matcher):
        result = matcher.extract("small cell lung carcinoma with lung cancer history")
        spans = [(m.start, m.end) for m in result.mentions]
        for i, (s1, e1) in enumerate(spans):
            for j, (s2, e2) in enumerate(spans):
                if i != j:
                    assert not (s2 <= s1 and e1 <= e2)

    @given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=200))
    def test_arbitrary_text_never_crashes(self, matcher, text):
        result = matcher.extract(text)
        for m in result.mentions:
            assert text[m.start : m.end] == m.matched_text
            assert 0 <= m.start < m.end <= len(text)
