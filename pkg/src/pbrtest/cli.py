"""Command-line front end.

Subcommands: simulate, analyze, membership, visibility, batch.  Exit codes:
0 on success, 1 on analysis/solver failure, 2 on input or validation errors.
A ``--config`` file with ``key=value`` lines (keys mirroring the long flags)
supplies defaults; explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .engine import AnalysisConfig, analyze_counts_pair, analyze_sequence
from .errors import PbrError, SolverFailure, ValidationError
from .scenario import Behavior, CountsTable, InputDistribution, TrialSequence
from .sets import SetKind, hypothesis_set, membership, visibility
from .simulate import (
    MODE_IID,
    MODE_TRIALWISE,
    SourceSpec,
    canonical_noise_weights,
    run_batch,
    sample_trials,
    source_behavior,
)


def _emit(obj, stream=None) -> None:
    print(json.dumps(obj, indent=2), file=stream or sys.stdout)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}")


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc}")


def _load_behavior(path: str) -> Behavior:
    try:
        return Behavior.from_json_dict(json.loads(_read_text(path)))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"bad behavior file {path}: {exc}")


def _noise_weights(arg: str) -> np.ndarray:
    if arg == "canonical":
        return canonical_noise_weights()
    try:
        weights = np.asarray(json.loads(_read_text(arg)), dtype=float)
    except (json.JSONDecodeError, ValueError) as exc:
        raise ValidationError(f"bad noise-weights file {arg}: {exc}")
    return weights


def _hypotheses(arg: str) -> list[SetKind]:
    return [SetKind.parse(name.strip()) for name in arg.split(",") if name.strip()]


def _source_spec(args) -> SourceSpec:
    return SourceSpec(
        mode=args.mode,
        v=args.v,
        epsilon=args.epsilon,
        noise_weights=_noise_weights(args.noise),
        seed=args.seed,
    )


def _analysis_config(args, kind: SetKind) -> AnalysisConfig:
    kwargs = dict(hypothesis=kind)
    if getattr(args, "n_est", None) is not None:
        kwargs["n_est"] = args.n_est
    if getattr(args, "train_fraction", None) is not None:
        kwargs["train_fraction"] = args.train_fraction
    if getattr(args, "eta", None) is not None:
        kwargs["eta"] = args.eta
    if getattr(args, "adaptive_block", None) is not None:
        kwargs["adaptive_block"] = args.adaptive_block
    return AnalysisConfig(**kwargs)


def cmd_simulate(args) -> int:
    if args.trials < 1:
        raise ValidationError("--trials must be >= 1")
    spec = _source_spec(args)
    seq = sample_trials(spec, InputDistribution.uniform(), args.trials)
    _write_text(args.out, seq.to_jsonl())
    _emit({
        "trials_written": len(seq),
        "out": args.out,
        "mode": spec.mode,
        "v": spec.v,
        "epsilon": spec.epsilon,
        "seed": spec.seed,
        "source_behavior": source_behavior(spec).to_json_dict(),
    })
    return 0


def cmd_analyze(args) -> int:
    kinds = _hypotheses(args.hypothesis)
    if not kinds:
        raise ValidationError("--hypothesis must name at least one set")
    counts_mode = args.counts_train is not None or args.counts_test is not None
    if counts_mode and (args.counts_train is None or args.counts_test is None):
        raise ValidationError("--counts-train and --counts-test go together")
    if counts_mode == (args.trials is not None):
        raise ValidationError("provide either --trials or a counts pair")
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    reports = {}
    for kind in kinds:
        cfg = _analysis_config(args, kind)
        if counts_mode:
            train = CountsTable.from_tsv(_read_text(args.counts_train))
            test = CountsTable.from_tsv(_read_text(args.counts_test))
            report = analyze_counts_pair(train, test, cfg)
        else:
            seq = TrialSequence.from_jsonl(_read_text(args.trials))
            report = analyze_sequence(seq, cfg)
        reports[kind.value] = report.to_json_dict()
        if out_dir:
            _write_text(
                str(out_dir / f"report-{kind.value}.json"),
                json.dumps(report.to_json_dict(), indent=2) + "\n",
            )
    _emit(reports)
    return 0


def cmd_membership(args) -> int:
    b = _load_behavior(args.behavior)
    result = membership(b, hypothesis_set(args.set), tol=args.tol)
    _emit({
        "set": args.set,
        "inside": bool(result.inside),
        "margin": result.margin,
    })
    return 0


def cmd_visibility(args) -> int:
    b = _load_behavior(args.behavior)
    nu = visibility(b, hypothesis_set(args.set))
    _emit({"set": args.set, "visibility": nu})
    return 0


def cmd_batch(args) -> int:
    if args.trials < 2:
        raise ValidationError("--trials must be >= 2")
    kinds = _hypotheses(args.hypothesis)
    if not kinds:
        raise ValidationError("--hypothesis must name at least one set")
    spec = _source_spec(args)
    cfgs = [_analysis_config(args, kind) for kind in kinds]
    summary = run_batch(
        spec,
        InputDistribution.uniform(),
        args.experiments,
        args.trials,
        cfgs,
        n_jobs=args.jobs,
    )
    if args.out:
        _write_text(args.out, json.dumps(summary.to_json_dict(), indent=2) + "\n")
    if args.records:
        lines = [json.dumps(rec) for rec in summary.records]
        _write_text(args.records, "\n".join(lines) + "\n")
    print(summary.render_table())
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbrtest",
        description="Bound the plausibility of physical theories from Bell-test data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_source_flags(p):
        p.add_argument("--mode", choices=[MODE_IID, MODE_TRIALWISE], default=MODE_IID)
        p.add_argument("--v", type=float, default=0.72)
        p.add_argument("--epsilon", type=float, default=0.01)
        p.add_argument("--noise", default="canonical",
                       help="'canonical' or a JSON file with 24 weights")
        p.add_argument("--seed", type=int, default=0)

    def add_analysis_flags(p):
        p.add_argument("--n-est", type=int, default=None)
        p.add_argument("--train-fraction", type=float, default=None)
        p.add_argument("--eta", type=float, default=None)
        p.add_argument("--adaptive-block", type=int, default=None)

    p_sim = sub.add_parser("simulate", help="Sample a trial sequence to JSONL")
    add_source_flags(p_sim)
    p_sim.add_argument("--trials", type=int, required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_an = sub.add_parser("analyze", help="Run the hypothesis-testing pipeline")
    p_an.add_argument("--trials", default=None, help="JSONL trial file")
    p_an.add_argument("--counts-train", default=None, help="TSV counts file")
    p_an.add_argument("--counts-test", default=None, help="TSV counts file")
    p_an.add_argument("--hypothesis", default="local",
                      help="comma list from {local,ns,q1,aq}")
    add_analysis_flags(p_an)
    p_an.add_argument("--out-dir", default=None)
    p_an.set_defaults(func=cmd_analyze)

    p_mem = sub.add_parser("membership", help="Test membership of a behavior")
    p_mem.add_argument("--behavior", required=True)
    p_mem.add_argument("--set", required=True, choices=[k.value for k in SetKind])
    p_mem.add_argument("--tol", type=float, default=1e-7)
    p_mem.set_defaults(func=cmd_membership)

    p_vis = sub.add_parser("visibility", help="White-noise visibility of a behavior")
    p_vis.add_argument("--behavior", required=True)
    p_vis.add_argument("--set", required=True, choices=[k.value for k in SetKind])
    p_vis.set_defaults(func=cmd_visibility)

    p_batch = sub.add_parser("batch", help="Simulate and analyze many Bell tests")
    add_source_flags(p_batch)
    p_batch.add_argument("--experiments", type=int, required=True)
    p_batch.add_argument("--trials", type=int, required=True)
    p_batch.add_argument("--hypothesis", default="ns,aq")
    add_analysis_flags(p_batch)
    p_batch.add_argument("--jobs", type=int, default=1)
    p_batch.add_argument("--out", default=None, help="summary JSON file")
    p_batch.add_argument("--records", default=None, help="per-experiment JSONL file")
    p_batch.set_defaults(func=cmd_batch)

    return parser


def _apply_config(argv: list[str]) -> list[str]:
    """Expand --config FILE into key=value defaults placed before user flags."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        raise ValidationError("--config requires a file argument")
    path = argv[i + 1]
    rest = argv[:i] + argv[i + 2:]
    tokens: list[str] = []
    for lineno, line in enumerate(_read_text(path).splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"bad config line {lineno}: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        tokens += [f"--{key.replace('_', '-')}", value]
    if not rest:
        return tokens
    # defaults go right after the subcommand so explicit flags override them
    return rest[:1] + tokens + rest[1:]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config(argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    except PbrError as exc:
        print(f"analysis failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
