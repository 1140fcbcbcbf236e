"""Command-line entry point: ``iasdetect <command> [--config FILE] [--<config-key> VALUE ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from . import pipeline as P
from .config import ENV_OUTPUT_ROOT, PipelineConfig

PER_PRESET = {
    "train-encoder": P.train_encoder,
    "train-aux": P.train_aux,
    "attack": P.attack,
    "extract-features": P.extract_features,
    "train-detector": P.train_detector,
    "evaluate": P.evaluate_stage,
    "ablate-features": P.ablate_features,
    "sweep-train-size": P.sweep_train_size,
    "transfer": P.transfer,
    "analyze": P.analyze,
}
GLOBAL = {"gen-data": P.gen_data, "compare-size": P.compare_size, "report": P.report}
ORDER = (
    "gen-data", "train-encoder", "train-aux", "attack", "extract-features", "train-detector", "evaluate",
    "ablate-features", "sweep-train-size", "transfer", "compare-size", "analyze", "report",
)
HELP = {
    "gen-data": "generate (or import) train/val/test data and the lexicon",
    "train-encoder": "fine-tune the gated encoder",
    "train-aux": "train the layer-wise auxiliary heads on the frozen encoder",
    "attack": "run the 11 attacks and build the authentic/adversarial benchmark",
    "extract-features": "compute subnetworks and assemble detector features",
    "train-detector": "train AdvNet on the full features",
    "evaluate": "evaluate the trained detector",
    "ablate-features": "feature-family, binary-mask and no-CutMix ablations",
    "sweep-train-size": "detector accuracy versus training-set fraction",
    "transfer": "train on a subset of attack types, test on unseen ones",
    "compare-size": "small versus base preset detection accuracy",
    "analyze": "trajectories, histograms, CDFs, projections and refereeing heads",
    "report": "aggregate every artifact into results.json and figures",
    "run-all": "run every command in order",
}


def _parse_value(kind: str, default):
    if kind == "bool":
        return lambda s: s.lower() in ("1", "true", "yes", "on")
    if kind == "tuple":
        elem = type(default[0]) if default else str
        return lambda s: tuple(elem(x) for x in s.split(",") if x)
    return {"int": int, "float": float}.get(kind, str)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iasdetect", description="Adversarial text detection from input-specific attention subnetworks.")
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = PipelineConfig()
    for name in ORDER + ("run-all",):
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", help="JSON file with PipelineConfig keys")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for f in fields(PipelineConfig):
            default = getattr(defaults, f.name)
            extra = f" (env {ENV_OUTPUT_ROOT} if unset)" if f.name == "output_dir" else ""
            sp.add_argument(
                "--" + f.name.replace("_", "-"), dest=f.name, default=None,
                type=_parse_value(f.type, default), help=f"default: {default}{extra}",
            )
    return parser


def config_from_args(args) -> PipelineConfig:
    base = PipelineConfig.load(args.config).to_dict() if args.config else PipelineConfig().to_dict()
    for f in fields(PipelineConfig):
        v = getattr(args, f.name)
        if v is not None:
            base[f.name] = v
    return PipelineConfig.from_dict(base)


def run_command(command: str, cfg: PipelineConfig) -> list[str]:
    ws = P.Workspace(cfg)
    commands = ORDER if command == "run-all" else (command,)
    lines = []
    for cmd in commands:
        if cmd in GLOBAL:
            line = GLOBAL[cmd](ws)
        else:
            line = PER_PRESET[cmd](ws, cfg.preset)
        print(line, flush=True)
        lines.append(line)
    return lines


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        run_command(args.command, cfg)
    except P.MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
