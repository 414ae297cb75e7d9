"""Command-line interface.

Subcommands: train, infer, eval, sweep, simulate-kgt, synth-fixtures.
Exit code is 0 on success; failures exit with the error category's code
(see errors.py for the table).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import fixtures, pipeline
from .errors import InvalidArgumentError, KeygraspError, exit_code_for


def _add_common(parser, *flags):
    if "manifest" in flags:
        parser.add_argument("--manifest", required=True, help="dataset manifest JSON")
    if "config" in flags:
        parser.add_argument("--config", help="run configuration JSON (defaults used when omitted)")
    if "checkpoint" in flags:
        parser.add_argument("--checkpoint", required=True, help="trained checkpoint file")
    if "seed" in flags:
        parser.add_argument("--seed", type=int, default=None, help="random seed")
    if "out" in flags:
        parser.add_argument("--out", required=True, help="output directory or file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="keygrasp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train selection weights on a manifest")
    _add_common(p, "manifest", "config", "seed", "out")

    p = sub.add_parser("infer", help="predict three keypoints per image")
    _add_common(p, "manifest", "checkpoint", "seed", "out")
    p.add_argument("--affordance", required=True, help="affordance class name")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p, "manifest", "config", "out")
    p.add_argument("--predictions", required=True, help="predictions JSON from `infer`")

    p = sub.add_parser("sweep", help="grid-search region and cluster counts")
    _add_common(p, "manifest", "config", "seed", "out")
    p.add_argument("--s-values", required=True, help="comma-separated region counts, e.g. 2,3,4")
    p.add_argument("--j-values", required=True, help="comma-separated cluster counts, e.g. 2,3,4,5")

    p = sub.add_parser("simulate-kgt", help="randomized pose-solver round-trip check")
    _add_common(p, "seed", "out")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--hand-model", help="hand model JSON (sample in configs/)")

    p = sub.add_parser("synth-fixtures", help="generate a synthetic fixture dataset")
    _add_common(p, "config", "seed", "out")
    return parser


def _load_config(path) -> pipeline.RunConfig:
    if path is None:
        return pipeline.RunConfig()
    return pipeline.load_run_config(path)


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InvalidArgumentError(f"{flag} must be a comma-separated integer list, got {text!r}")
    if not values:
        raise InvalidArgumentError(f"{flag} must not be empty")
    return values


def _fixture_spec(path) -> fixtures.FixtureSpec:
    if path is None:
        return fixtures.FixtureSpec()
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"fixture spec {path} unreadable: {exc}") from exc
    known = set(fixtures.FixtureSpec.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise InvalidArgumentError(f"fixture spec {path}: unknown keys {sorted(unknown)}")
    if "classes" in obj:
        obj["classes"] = tuple(obj["classes"])
    return fixtures.FixtureSpec(**obj)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train":
        config = _load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        output = pipeline.train_command(args.manifest, config, args.out)
        final = output.result.history[-1]
        print(f"checkpoint: {output.checkpoint_path}")
        print(f"loss: {output.result.initial_loss.total:.6f} -> {final.total:.6f}")
    elif args.command == "infer":
        payload = pipeline.infer_command(
            args.manifest, args.checkpoint, args.affordance, args.out, seed=args.seed
        )
        ok = sum(1 for r in payload["results"] if r["status"] == "ok")
        print(f"predictions: {args.out} ({ok}/{len(payload['results'])} ok)")
    elif args.command == "eval":
        config = _load_config(args.config)
        report = pipeline.eval_command(args.predictions, args.manifest, args.out, sigma=config.sigma)
        agg = report["aggregate"]
        if agg:
            tpc = f" TPC={agg['tpc_percent']}" if "tpc_percent" in agg else ""
            print(f"KLD={agg['kld']:.4f} SIM={agg['sim']:.4f} NSS={agg['nss']:.4f}{tpc}")
        else:
            print("no scorable images")
    elif args.command == "sweep":
        config = _load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        report = pipeline.sweep_command(
            args.manifest,
            _parse_int_list(args.s_values, "--s-values"),
            _parse_int_list(args.j_values, "--j-values"),
            config,
            args.out,
        )
        best = report["best"]
        if best:
            print(f"best cell: S={best['s']} J={best['j']} (by {best['by']})")
        else:
            print("no successful cells")
    elif args.command == "simulate-kgt":
        hand = pipeline.load_hand_model(args.hand_model) if args.hand_model else pipeline.DEFAULT_HAND_MODEL
        report = pipeline.simulate_command(args.trials, args.seed or 0, hand, args.out)
        print(
            f"trials={report.trials} retries={report.retries} "
            f"max_contact_error={report.max_contact_error_m:.3e} m in {report.elapsed_s:.2f}s"
        )
    elif args.command == "synth-fixtures":
        manifest_path = pipeline.synth_command(args.out, args.seed or 0, _fixture_spec(args.config))
        print(f"manifest: {manifest_path}")
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except KeygraspError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
