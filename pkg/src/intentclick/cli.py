"""Command-line pipelines: ingest, simulate, classify, fit, eval, compare.

Every run writes a manifest (flags, inputs, outputs, seed, version,
duration) beside its primary output so deterministic subcommands can be
reproduced byte-for-byte. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import timedelta
from pathlib import Path

from . import __version__
from .errors import DataError, NumericError
from .evaluate import (
    DEFAULT_K_LIST,
    compare_models,
    evaluate_model,
    format_comparison_table,
    format_report,
    load_report,
    save_report,
)
from .inference import EmConfig, alternating_fit, em_fit
from .intent import (
    DEFAULT_NCS_N,
    DEFAULT_NRS_N,
    ClassifierConfig,
    classify,
    clicked_url_counts,
    extract_features,
    load_lexicon,
    n_clicks_satisfied,
    n_results_satisfied,
    rule_label_transactional,
    save_classifier,
    train_classifier,
)
from .models import MODEL_KINDS, load_params, save_params
from .sessions import (
    DEFAULT_MAX_POSITIONS,
    Intent,
    attach_intents,
    group_by_query,
    read_aol_log,
    read_intent_labels,
    read_judgments,
    read_sessions,
    sessionize,
    write_intent_labels,
    write_judgments,
    write_sessions,
)
from .simulate import SimConfig, click_behavior_preset, generate_ground_truth, simulate_sessions

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# Rule-mode classification thresholds: high nCS and nRS suggest a
# navigational goal when no trained model is available.
RULE_NCS_THRESHOLD = 0.7
RULE_NRS_THRESHOLD = 0.7


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunManifest:
    """Record of one CLI run, written beside the primary output."""

    subcommand: str
    config: dict
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    seed: int | None = None
    version: str = __version__
    duration_seconds: float = 0.0

    def write(self, primary_output: Path) -> None:
        path = Path(str(primary_output) + ".manifest.json")
        doc = {
            "subcommand": self.subcommand,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "version": self.version,
            "duration_seconds": self.duration_seconds,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")


def _intent_mix(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("intent mix needs three comma-separated values")
    try:
        mix = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad intent mix {text!r}") from None
    if any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError(
            f"intent mix must be non-negative and sum to 1, got {text!r}"
        )
    return mix


def _k_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}") from None


def build_parser() -> _Parser:
    parser = _Parser(prog="intentclick", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="per-iteration diagnostics")
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("ingest", help="parse an AOL-style TSV log into sessions")
    p.add_argument("--aol", required=True, help="raw five-field TSV log")
    p.add_argument("--out", required=True, help="canonical sessions output (jsonl)")
    p.add_argument("--gap-minutes", type=float, default=30.0)
    p.add_argument("--max-positions", type=int, default=DEFAULT_MAX_POSITIONS)

    p = sub.add_parser("simulate", help="generate a synthetic click log")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="pbm")
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--sessions-per-query", type=int, default=None,
                   help="default 200; also overrides the preset's 50000")
    p.add_argument("--positions", type=int, default=DEFAULT_MAX_POSITIONS)
    p.add_argument("--intent-mix", type=_intent_mix, default=(1 / 3, 1 / 3, 1 / 3))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--intent-aware", action="store_true",
                   help="intent-dependent ground-truth tables")
    p.add_argument("--intents-per-query", action="store_true",
                   help="pin one intent per query instead of sampling per session")
    p.add_argument("--shuffle-serps", action="store_true",
                   help="randomize the served doc order per session")
    p.add_argument("--behavior-preset", action="store_true",
                   help="use the calibrated click-behavior preset (ignores size flags)")

    p = sub.add_parser("classify", help="label query intents")
    p.add_argument("--sessions", required=True)
    p.add_argument("--out", required=True, help="query intent labels (tsv)")
    p.add_argument("--train-labels", help="seed labels (tsv) to train a classifier")
    p.add_argument("--model-out", help="where to persist the trained classifier")
    p.add_argument("--lexicon", help="transactional cue-word lexicon file")
    p.add_argument("--ncs-n", type=int, default=DEFAULT_NCS_N)
    p.add_argument("--nrs-n", type=int, default=DEFAULT_NRS_N)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fit", help="estimate click-model parameters by EM")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--sessions", required=True)
    p.add_argument("--out", required=True, help="parameter document (json)")
    p.add_argument("--intent-aware", action="store_true")
    p.add_argument("--alternating", action="store_true",
                   help="two-phase alternating fit (implies --intent-aware)")
    p.add_argument("--intents", help="intent labels (tsv) to attach before fitting")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-positions", type=int, default=None)

    p = sub.add_parser("eval", help="perplexity (and NDCG) of a fitted model")
    p.add_argument("--params", required=True)
    p.add_argument("--sessions", required=True)
    p.add_argument("--out", required=True, help="evaluation report (json)")
    p.add_argument("--judgments", help="editorial judgments (tsv) for NDCG")
    p.add_argument("--k-list", type=_k_list, default=DEFAULT_K_LIST)
    p.add_argument("--label", default="")

    p = sub.add_parser("compare", help="improvement table of one report over another")
    p.add_argument("--base", required=True)
    p.add_argument("--treat", required=True)
    p.add_argument("--out", default="comparison.txt")
    return parser


def _cmd_ingest(args) -> tuple[Path, RunManifest]:
    events = sorted(
        read_aol_log(args.aol, on_error="skip"),
        key=lambda e: (e.user_id, e.query_time),
    )
    result = sessionize(
        events,
        gap_timeout=timedelta(minutes=args.gap_minutes),
        max_positions=args.max_positions,
    )
    out = Path(args.out)
    write_sessions(out, result.sessions)
    print(
        f"ingested {len(result.sessions)} sessions "
        f"({result.retained_clicks} clicks kept, {result.dropped_clicks} dropped)"
    )
    manifest = RunManifest(
        subcommand="ingest",
        config={
            "gap_minutes": args.gap_minutes,
            "max_positions": args.max_positions,
        },
        inputs=[args.aol],
        outputs=[str(out)],
    )
    return out, manifest


def _cmd_simulate(args) -> tuple[Path, RunManifest]:
    if args.behavior_preset:
        truth, config = click_behavior_preset()
        if args.sessions_per_query is not None:
            config = replace(config, sessions_per_query=args.sessions_per_query)
    else:
        config = SimConfig(
            model_kind=args.model,
            num_queries=args.queries,
            sessions_per_query=args.sessions_per_query or 200,
            positions=args.positions,
            intent_mix=args.intent_mix,
            seed=args.seed,
            intent_aware=args.intent_aware,
            intents_per_query=args.intents_per_query,
            shuffle_serps=args.shuffle_serps,
        )
        truth = generate_ground_truth(config)
    sessions = simulate_sessions(truth, config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sessions_path = out_dir / "sessions.jsonl"
    write_sessions(sessions_path, sessions)
    save_params(out_dir / "truth_params.json", truth.params)
    write_judgments(out_dir / "judgments.tsv", truth.judgments)
    if truth.query_intents is not None:
        write_intent_labels(out_dir / "intents.tsv", truth.query_intents)
    print(f"simulated {len(sessions)} sessions into {out_dir}")
    manifest = RunManifest(
        subcommand="simulate",
        config={
            "model": config.model_kind,
            "queries": config.num_queries,
            "sessions_per_query": config.sessions_per_query,
            "positions": config.positions,
            "intent_mix": list(config.intent_mix),
            "intent_aware": config.intent_aware,
            "intents_per_query": config.intents_per_query,
            "shuffle_serps": config.shuffle_serps,
            "behavior_preset": bool(args.behavior_preset),
        },
        outputs=[str(sessions_path)],
        seed=config.seed,
    )
    return sessions_path, manifest


def _cmd_classify(args) -> tuple[Path, RunManifest]:
    sessions = read_sessions(args.sessions)
    by_query = group_by_query(sessions)
    lexicon = load_lexicon(args.lexicon) if args.lexicon else None
    features = {
        q: extract_features(
            q, members, clicked_url_counts(members), ncs_n=args.ncs_n, nrs_n=args.nrs_n
        )
        for q, members in by_query.items()
    }
    labels: dict[str, Intent] = {}
    model_path = None
    if args.train_labels:
        seed_labels = read_intent_labels(args.train_labels)
        train_queries = [q for q in features if q in seed_labels]
        if not train_queries:
            raise DataError("no training labels match any query in the sessions")
        model = train_classifier(
            [features[q] for q in train_queries],
            [seed_labels[q] for q in train_queries],
            ClassifierConfig(seed=args.seed),
        )
        for q, fv in features.items():
            labels[q], _ = classify(model, fv)
        if args.model_out:
            model_path = Path(args.model_out)
            save_classifier(model_path, model)
    else:
        for q, members in by_query.items():
            if rule_label_transactional(q, lexicon):
                labels[q] = Intent.TRANSACTIONAL
            elif (
                n_clicks_satisfied(members, args.ncs_n) >= RULE_NCS_THRESHOLD
                and n_results_satisfied(members, args.nrs_n) >= RULE_NRS_THRESHOLD
            ):
                labels[q] = Intent.NAVIGATIONAL
            else:
                labels[q] = Intent.INFORMATIONAL
    out = Path(args.out)
    write_intent_labels(out, labels)
    print(f"labeled {len(labels)} queries")
    manifest = RunManifest(
        subcommand="classify",
        config={
            "trained": bool(args.train_labels),
            "ncs_n": args.ncs_n,
            "nrs_n": args.nrs_n,
            "lexicon": args.lexicon,
        },
        inputs=[args.sessions] + ([args.train_labels] if args.train_labels else []),
        outputs=[str(out)] + ([str(model_path)] if model_path else []),
        seed=args.seed,
    )
    return out, manifest


def _cmd_fit(args) -> tuple[Path, RunManifest]:
    sessions = read_sessions(args.sessions)
    if not sessions:
        raise DataError(f"no sessions in {args.sessions}")
    if args.intents:
        sessions = attach_intents(sessions, read_intent_labels(args.intents))
    intent_aware = args.intent_aware or args.alternating
    config = EmConfig(
        tol=args.tol, max_iters=args.max_iters, seed=args.seed, verbose=args.verbose
    )
    if args.alternating:
        params, report = alternating_fit(
            args.model, sessions, config, max_positions=args.max_positions
        )
    else:
        params, report = em_fit(
            args.model,
            sessions,
            config,
            intent_aware=intent_aware,
            max_positions=args.max_positions,
        )
    out = Path(args.out)
    save_params(out, params)
    report_path = Path(str(out) + ".report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    status = "converged" if report.converged else "stopped at max iterations"
    print(
        f"fit {args.model} on {len(sessions)} sessions: {status} after "
        f"{report.iterations} iterations (max delta {report.final_delta:.2e})"
    )
    manifest = RunManifest(
        subcommand="fit",
        config={
            "model": args.model,
            "intent_aware": intent_aware,
            "alternating": args.alternating,
            "tol": args.tol,
            "max_iters": args.max_iters,
            "max_positions": args.max_positions,
            "intents": args.intents,
        },
        inputs=[args.sessions] + ([args.intents] if args.intents else []),
        outputs=[str(out), str(report_path)],
        seed=args.seed,
    )
    return out, manifest


def _cmd_eval(args) -> tuple[Path, RunManifest]:
    params = load_params(args.params)
    sessions = read_sessions(args.sessions)
    if not sessions:
        raise DataError(f"no sessions in {args.sessions}")
    judgments = read_judgments(args.judgments) if args.judgments else None
    report = evaluate_model(
        params, sessions, judgments=judgments, k_list=args.k_list, label=args.label
    )
    out = Path(args.out)
    save_report(out, report)
    print(format_report(report))
    print(
        f"evaluated {report.n_sessions} sessions over {report.n_queries} queries: "
        f"overall perplexity {report.overall:.4f}"
    )
    manifest = RunManifest(
        subcommand="eval",
        config={"k_list": list(args.k_list), "label": args.label,
                "judgments": args.judgments},
        inputs=[args.params, args.sessions]
        + ([args.judgments] if args.judgments else []),
        outputs=[str(out)],
    )
    return out, manifest


def _cmd_compare(args) -> tuple[Path, RunManifest]:
    base = load_report(args.base)
    treat = load_report(args.treat)
    comparison = compare_models(base, treat)
    table = format_comparison_table(comparison)
    print(table)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    json_path = Path(str(out) + ".json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(comparison.to_json(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    manifest = RunManifest(
        subcommand="compare",
        config={},
        inputs=[args.base, args.treat],
        outputs=[str(out), str(json_path)],
    )
    return out, manifest


_COMMANDS = {
    "ingest": _cmd_ingest,
    "simulate": _cmd_simulate,
    "classify": _cmd_classify,
    "fit": _cmd_fit,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.subcommand is None:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    started = time.monotonic()
    try:
        primary_output, manifest = _COMMANDS[args.subcommand](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest.duration_seconds = round(time.monotonic() - started, 6)
    manifest.write(primary_output)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
