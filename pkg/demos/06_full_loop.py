"""
The clinician-in-the-loop protocol, end to end
==============================================

Generates a miscoded synthetic corpus, trains the initial ICD-label
classifier, quadrant-samples 100 training and 100 testing admissions for
gold labeling by the simulated oracle, iterates AutoML + feature review
until the score stabilizes, and closes with the gold-subset report and the
entire-testing-set yield estimate.

Equivalent CLI:
    phenoloop synth --profile "Cancer Cachexia" --n 2000 --prevalence 0.03 \
        --seed 20260810 --out corpus_dir
    phenoloop loop --corpus corpus_dir --disease "Cancer Cachexia" --oracle --seed 7
"""

from phenoloop.automl import SearchSpace
from phenoloop.loop import LoopConfig, run_simulated_loop
from phenoloop.synth import builtin_profile, generate_corpus

profile = builtin_profile("Cancer Cachexia")
print(f"profile: fn={profile.miscode_fn_rate}, fp={profile.miscode_fp_rate}")
corpus, truth = generate_corpus(profile, n_admissions=2000, prevalence=0.03, seed=20260810)

config = LoopConfig(
    disease="Cancer Cachexia",
    seed=7,
    search=SearchSpace(budget_seconds=60.0, seed=7),
)
outcome = run_simulated_loop(
    corpus, truth, profile, config, progress=print, include_structured_baseline=True
)

print()
print(outcome["report"].to_text())
estimate = outcome["estimate"]
print(
    f"\nentire-set estimate: N_pred={estimate.n_pred}, P_est={estimate.p_est:.3f}, "
    f"found ~{estimate.estimate} true positives"
)
state = outcome["state"]
print(f"status: {state.status} after {len(state.iterations)} iterations")
print(f"features removed by review: {sorted(state.removed_features)}")
