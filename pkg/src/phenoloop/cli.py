"""Batch entry points for every pipeline stage plus the fully-automated
simulation mode. Exit codes: 0 success, 1 validation error, 2 internal error.
Outputs are written atomically (temp file + rename)."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["main"]


class CliError(Exception):
    """Validation failure: bad flags, unreadable files, impossible budgets."""


def _atomic_write(path: Path, writer) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {path}")
    return p


def _load_profile_arg(profile: str):
    from .synth import BUILTIN_PROFILE_FILES, builtin_profile, load_profile

    if profile in BUILTIN_PROFILE_FILES:
        return builtin_profile(profile)
    return load_profile(_require_file(profile, "profile"))


def _say(args):
    return (lambda msg: None) if args.json else print


def cmd_synth(args) -> dict:
    from .synth import generate_corpus

    profile = _load_profile_arg(args.profile)
    if args.n < 1:
        raise CliError("--n must be >= 1")
    if not 0.0 < args.prevalence < 1.0:
        raise CliError("--prevalence must be in (0, 1)")
    from .synth import SynthConfigError

    try:
        corpus, gt = generate_corpus(profile, args.n, args.prevalence, args.seed)
    except SynthConfigError as exc:
        raise CliError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "corpus.jsonl", lambda fh: [
        fh.write(json.dumps(a.to_record(), sort_keys=True) + "\n") for a in corpus
    ])
    _atomic_write(out / "ground_truth.json", lambda fh: json.dump(gt.to_dict(), fh, sort_keys=True))
    _atomic_write(out / "profile.json", lambda fh: json.dump(profile.to_dict(), fh, sort_keys=True))
    n_pos = sum(gt.true_label(a.admission_id) for a in corpus)
    _say(args)(
        f"wrote {len(corpus)} admissions ({n_pos} positive) to {out}/"
        " (corpus.jsonl, ground_truth.json, profile.json)"
    )
    return {
        "out": str(out),
        "admissions": len(corpus),
        "positives": n_pos,
        "files": ["corpus.jsonl", "ground_truth.json", "profile.json"],
    }


def cmd_extract(args) -> dict:
    from .corpus import StructuredFeatureCatalog, load_corpus_file
    from .features import build_matrix
    from .ontology import build_matcher, load_lexicon_file, load_obo_file, default_matcher

    corpus = load_corpus_file(_require_file(args.corpus, "corpus"))
    if args.ontology:
        ontology = load_obo_file(_require_file(args.ontology, "ontology"))
        extra = load_lexicon_file(_require_file(args.lexicon, "lexicon")) if args.lexicon else {}
        matcher = build_matcher(ontology, extra)
    else:
        matcher = default_matcher()
    catalog = (
        StructuredFeatureCatalog.from_file(_require_file(args.catalog, "catalog"))
        if args.catalog
        else StructuredFeatureCatalog.default()
    )
    matrix = build_matrix(corpus, matcher, catalog)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    matrix.to_csv(tmp)
    os.replace(tmp, out)
    _say(args)(f"wrote {matrix.n_rows} x {len(matrix.column_names)} matrix to {out}")
    return {"out": str(out), "rows": matrix.n_rows, "columns": len(matrix.column_names)}


def _load_labels(path: Path) -> dict[str, int]:
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header[:2]] != ["admission_id", "label"]:
            raise CliError(f"labels file must have header admission_id,label: {path}")
        for rec in reader:
            labels[rec[0]] = int(rec[1])
    return labels


def _aligned_labels(matrix, labels: dict[str, int]) -> np.ndarray:
    missing = [a for a in matrix.admission_ids if a not in labels]
    if missing:
        raise CliError(f"labels missing for {len(missing)} admissions (first: {missing[0]})")
    return np.array([labels[a] for a in matrix.admission_ids], dtype=int)


def cmd_train(args) -> dict:
    from .automl import BudgetError, SearchSpace, run_search, save_model
    from .features import FeatureMatrix

    matrix = FeatureMatrix.from_csv(_require_file(args.matrix, "matrix"))
    labels = _aligned_labels(matrix, _load_labels(_require_file(args.labels, "labels")))
    space = SearchSpace(budget_seconds=args.budget, seed=args.seed)
    try:
        result = run_search(space, matrix, labels)
    except BudgetError as exc:
        raise CliError(f"budget error: {exc} ({len(exc.history)} partial trials)") from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    save_model(tmp, result.model)
    os.replace(tmp, out)
    _atomic_write(out.with_suffix(".report.txt"), lambda fh: fh.write(result.report_text() + "\n"))
    say = _say(args)
    say(result.report_text())
    say(f"model written to {out}")
    return {
        "out": str(out),
        "best_score": result.best_score,
        "best_config": result.best_config.to_dict(),
        "trials": len(result.history),
        "bracket_sizes": result.bracket_sizes,
    }


def cmd_evaluate(args) -> dict:
    from .automl import load_model
    from .features import FeatureMatrix
    from .metrics import gold_report

    model = load_model(_require_file(args.model, "model"))
    matrix = FeatureMatrix.from_csv(_require_file(args.matrix, "matrix"))
    labels = _aligned_labels(matrix, _load_labels(_require_file(args.labels, "labels")))
    scores = model.predict_matrix(matrix)
    icd = None
    if args.icd:
        icd = _aligned_labels(matrix, _load_labels(_require_file(args.icd, "icd labels")))
    if icd is None:
        from .metrics import EvaluationReport, full_metrics

        report = EvaluationReport(args.disease or "disease")
        report.add("Workflow", full_metrics(labels, scores))
    else:
        report = gold_report(args.disease or "disease", labels, scores, icd)
    _say(args)(report.to_text())
    return {"report": report.to_dict(), "text": report.to_text()}


def cmd_explain(args) -> dict:
    from .automl import load_model
    from .features import FeatureMatrix
    from .shapley import (
        global_importance,
        kernel_shap,
        export_beeswarm,
        write_beeswarm_csv,
        write_waterfall_csv,
    )

    model = load_model(_require_file(args.model, "model"))
    matrix = FeatureMatrix.from_csv(_require_file(args.matrix, "matrix"))
    known = set(matrix.admission_ids)
    rows = args.rows.split(",") if args.rows else matrix.admission_ids[:10]
    unknown = [r for r in rows if r not in known]
    if unknown:
        raise CliError(f"rows not in matrix: {unknown}")
    prepared = model.prepared_submatrix(matrix)
    background_ids = matrix.admission_ids[: args.background]
    background = prepared.restrict_rows(background_ids).values
    names = tuple(prepared.column_names)
    explanations = []
    for admission_id in rows:
        explanations.append(
            kernel_shap(
                model.model.predict_proba,
                prepared.row_for(admission_id),
                background,
                seed=args.seed,
                feature_names=names,
                admission_id=admission_id,
            )
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_beeswarm_csv(out / "beeswarm.csv", export_beeswarm(explanations, matrix))
    for explanation in explanations:
        write_waterfall_csv(out / f"waterfall-{explanation.admission_id}.csv", explanation)
    ranking = global_importance(explanations)
    _atomic_write(
        out / "importance.json", lambda fh: json.dump(ranking.to_dict(), fh, indent=2)
    )
    say = _say(args)
    say(f"explained {len(rows)} row(s); top features: {', '.join(ranking.top(5))}")
    say(f"exports written to {out}/")
    return {"out": str(out), "rows": rows, "top": ranking.top(10)}


def cmd_loop(args) -> dict:
    from .automl import SearchSpace
    from .corpus import load_corpus_file
    from .loop import LoopConfig, run_simulated_loop
    from .synth import GroundTruth, load_profile

    corpus_dir = Path(args.corpus)
    corpus = load_corpus_file(_require_file(corpus_dir / "corpus.jsonl", "corpus"))
    if not args.oracle:
        raise CliError(
            "only --oracle mode is batch-runnable; interactive labeling lives in the review UI"
        )
    gt_path = _require_file(corpus_dir / "ground_truth.json", "ground truth")
    with open(gt_path, encoding="utf-8") as fh:
        gt = GroundTruth.from_dict(json.load(fh))
    profile = load_profile(_require_file(corpus_dir / "profile.json", "profile"))
    disease = args.disease or profile.criteria_key
    config = LoopConfig(
        disease=disease,
        seed=args.seed,
        feature_scope=args.feature_scope,
        search=SearchSpace(budget_seconds=args.budget, seed=args.seed),
    )
    out_dir = Path(args.out) if args.out else None
    say = (lambda msg: None) if args.json else print
    outcome = run_simulated_loop(
        corpus,
        gt,
        profile,
        config,
        log_path=out_dir / "events.jsonl" if out_dir else None,
        model_dir=out_dir / "models" if out_dir else None,
        progress=say,
        include_structured_baseline=not args.no_structured_baseline,
    )
    state = outcome["state"]
    estimate = outcome["estimate"]
    say("")
    say(outcome["report"].to_text())
    say("")
    say(
        f"entire-set estimate: N_pred={estimate.n_pred}  P_est={estimate.p_est:.3f}  "
        f"N_pred x P_est = {estimate.estimate}"
    )
    say(f"final status: {state.status} after {len(state.iterations)} iteration(s)")
    return {
        "status": state.status,
        "iterations": [
            {"iteration": r.iteration, "score": r.score, "config": r.config}
            for r in state.iterations
        ],
        "report": outcome["report"].to_dict(),
        "estimate": estimate.to_dict(),
        "removed_features": sorted(state.removed_features),
    }


def cmd_serve(args) -> dict:
    from .service import serve

    if not args.data:
        raise CliError("--data (or PHENOLOOP_DATA) is required")
    data_dir = Path(args.data)
    data_dir.mkdir(parents=True, exist_ok=True)
    serve(args.addr, str(data_dir), static_dir=args.static)
    return {}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise CliError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phenoloop", description=__doc__)
    shared = _Parser(add_help=False)
    shared.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[shared], **kwargs)

    p = add_parser("synth", help="generate a synthetic corpus with ground truth")
    p.add_argument("--profile", required=True, help="built-in disease name or profile file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--prevalence", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = add_parser("extract", help="export the feature matrix as CSV")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ontology", default=None)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--catalog", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_extract)

    p = add_parser("train", help="budgeted AutoML search on a matrix + labels")
    p.add_argument("--matrix", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--budget", type=float, default=120.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = add_parser("evaluate", help="metrics report for a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--icd", default=None, help="optional ICD verdict labels for the baseline row")
    p.add_argument("--disease", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = add_parser("explain", help="beeswarm/waterfall attribution exports")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--rows", default=None, help="comma-separated admission ids")
    p.add_argument("--background", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_explain)

    p = add_parser("loop", help="run the clinician-in-the-loop protocol end to end")
    p.add_argument("--corpus", required=True, help="directory produced by `synth`")
    p.add_argument("--disease", default=None)
    p.add_argument("--oracle", action="store_true", help="use the simulated clinician oracle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=float, default=60.0, help="per-iteration search budget")
    p.add_argument(
        "--feature-scope",
        choices=("full", "structured_only"),
        default="full",
    )
    p.add_argument(
        "--no-structured-baseline",
        action="store_true",
        help="skip the Structured-Data-Only baseline row in the final report",
    )
    p.add_argument("--out", default=None, help="directory for the event log and models")
    p.set_defaults(fn=cmd_loop)

    p = add_parser("serve", help="start the labeling/review service")
    p.add_argument("--addr", default=os.environ.get("PHENOLOOP_ADDR", "127.0.0.1:8830"))
    p.add_argument("--data", default=os.environ.get("PHENOLOOP_DATA"))
    p.add_argument(
        "--static",
        default=os.environ.get("PHENOLOOP_STATIC"),
        help="directory of review-UI assets to serve",
    )
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        result = args.fn(args)
        if args.json:
            print(json.dumps(result, indent=2, sort_keys=True))
        return 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # internal error
        print(f"internal error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
