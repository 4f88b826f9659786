"""
Phenotype extraction from note text
===================================

Builds the token-trie matcher from the shipped ontology subset plus the
abbreviation/contextual-synonym lexicon, then extracts concept mentions with
sentence-scoped negation.
"""

from phenoloop.ontology import build_matcher, default_matcher, parse_obo

matcher = default_matcher()
print(f"default matcher covers {len(matcher.target_ids)} concepts")

note = (
    "Discharge summary. Patient reports HTN and a rise in blood pressure. "
    "No evidence of weight loss; denies poor appetite. "
    "Findings consistent with small cell lung carcinoma."
)
result = matcher.extract(note)
for m in result.mentions:
    flag = "NEGATED" if m.negated else "present"
    print(f"  {m.hpo_id}  [{m.start}:{m.end}]  {m.matched_text!r}  ({flag})")
print("non-negated ids:", sorted(result.present_ids))

# Longest match wins: "small cell lung carcinoma" is one mention, not a
# nested "lung cancer" plus modifiers.

# The matcher is built from plain data, so a custom ontology drops in:
stanzas = """\
[Term]
id: HP:0000822
name: Hypertension
synonym: "High blood pressure" EXACT []
"""
custom = build_matcher(parse_obo(stanzas.splitlines()), {"HTN": "HP:0000822"})
print(custom.extract("HTN noted today").present_ids)
