"""Command-line entry point: one subcommand per pipeline stage, plus ``all`` and ``make-toy``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .pipeline import (STAGES, ConfigError, DependencyError, LockError, RunConfig, format_config,
                       run_pipeline)
from .toy import TOY_KINDS, write_toy

EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_LOCKED = 4

# settings that make the bundled toy corpora train in minutes on a CPU
TOY_SETTINGS = {
    "preset": "desk",
    "vocab_size": 500,
    "epochs": 30,
    "ablate": "false",
}
TOY_STYLES = {
    "politeness": ("neutral", "polite"),
    "polar": ("formal", "casual"),
    "review": ("negative", "positive"),
}


def write_toy_config(out_dir, kind="politeness", seed=0) -> Path:
    src, tgt = write_toy(out_dir, kind, seed)
    s_style, t_style = TOY_STYLES[kind]
    cfg = RunConfig(source_corpus=str(src), target_corpus=str(tgt), work_dir=str(Path(out_dir) / "work"),
                    source_style=s_style, target_style=t_style, seed=seed)
    cfg = RunConfig.from_mapping({**cfg.snapshot(), **TOY_SETTINGS})
    text = format_config(cfg)
    # keep the file relocatable
    text = text.replace(str(Path(out_dir).resolve()) + "/", "").replace(str(Path(out_dir)) + "/", "")
    path = Path(out_dir) / f"{kind}.cfg"
    path.write_text(text, encoding="utf-8")
    return path


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError({item: "expected KEY=VALUE"})
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taggen", description=__doc__)
    parser.add_argument("--version", action="version", version=f"taggen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="key = value run config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--preset", choices=("paper", "desk"), help="model size preset")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--json", action="store_true", help="print a JSON result object")
    common.add_argument("-v", "--verbose", action="store_true")

    for stage in STAGES + ("all",):
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage" if stage != "all"
                       else "run every stage in order")

    toy = sub.add_parser("make-toy", help="write a bundled synthetic corpus pair and its config")
    toy.add_argument("out_dir")
    toy.add_argument("--kind", choices=sorted(TOY_KINDS), default="politeness")
    toy.add_argument("--seed", type=int, default=0)
    toy.add_argument("--json", action="store_true")
    return parser


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    else:
        print(text)


def _summary_text(results: dict) -> str:
    lines = []
    for stage, res in results.items():
        if "table" in res:
            lines.append(f"[{stage}]\n{res['table']}")
        else:
            brief = {k: v for k, v in res.items() if not isinstance(v, (list, dict))}
            lines.append(f"[{stage}] " + ", ".join(f"{k}={v}" for k, v in brief.items()))
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    if args.command == "make-toy":
        path = write_toy_config(args.out_dir, args.kind, args.seed)
        _emit(args, {"config": str(path)}, f"wrote {path}\nrun: taggen all --config {path}")
        return 0

    try:
        overrides = _parse_sets(args.set)
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.preset is not None:
            overrides["preset"] = args.preset
        cfg = RunConfig.from_file(args.config, overrides)
        results = run_pipeline(cfg, args.command)
    except ConfigError as exc:
        _emit(args, {"error": "config", "problems": exc.problems}, f"error: {exc}")
        return EXIT_CONFIG
    except DependencyError as exc:
        _emit(args, {"error": "dependency", "stage": exc.stage, "prerequisite": exc.prerequisite,
                     "missing": str(exc.missing)}, f"error: {exc}")
        return EXIT_DEPENDENCY
    except LockError as exc:
        _emit(args, {"error": "locked", "message": str(exc)}, f"error: {exc}")
        return EXIT_LOCKED
    except FileNotFoundError as exc:
        _emit(args, {"error": "io", "message": str(exc)}, f"error: {exc}")
        return 1

    _emit(args, {"stages": results}, _summary_text(results))
    return 0


if __name__ == "__main__":
    sys.exit(main())
