"""Command-line entry point: ``swinfree {describe,verify,bench,infer}``.

Exit codes: 0 ok, 1 property/structural check failed, 2 usage or config
error, 3 I/O or format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import archive, numerics
from .attention import SIZE_VARYING, effective_shift
from .errors import ConfigError, DimensionError, FormatError
from .model import build_model, count_params, model_forward
from .presets import config_to_doc, expand_config, resolve_preset
from .profiler import (
    compare_reports,
    count_flops,
    count_shift_traffic,
    emit_report,
    profile_config,
    profile_model,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_config(path: str):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}", EXIT_USAGE) from None
    if not isinstance(doc, dict):
        raise CliError(f"config {path} must be a JSON object", EXIT_USAGE)
    doc.setdefault("name", Path(path).stem)
    return expand_config(doc)


def _configs(args) -> list[tuple]:
    """(ModelConfig, seed-or-None) for every --config and --preset, in order."""
    out = [_load_config(p) for p in args.config or []]
    out += [(resolve_preset(n), None) for n in args.preset or []]
    if not out:
        raise CliError("give --config PATH or --preset NAME", EXIT_USAGE)
    return out


def _single(args):
    cfgs = _configs(args)
    if len(cfgs) != 1:
        raise CliError("exactly one --config or --preset is required", EXIT_USAGE)
    cfg, seed = cfgs[0]
    if args.seed is not None:
        seed = args.seed
    return cfg, seed


def cmd_describe(args) -> int:
    cfg, seed = _single(args)
    stages = cfg.stages()
    doc = {
        "config": config_to_doc(cfg, seed),
        "stages": [
            {
                "stage": i + 1,
                "P": [st.resolution, st.resolution],
                "M": st.M,
                "N": st.num_windows,
                "depth": st.depth,
                "dim": st.dim,
                "heads": st.num_heads,
                "shifted_blocks": sum(
                    bool(effective_shift(st.M, st.resolution, st.resolution, f)) for f in st.shift_pattern
                ),
            }
            for i, st in enumerate(stages)
        ],
        "params": count_params(cfg),
        "flops": count_flops(cfg),
        "shift_elements": count_shift_traffic(cfg),
    }
    if args.format == "json":
        print(json.dumps(doc, indent=2))
        return EXIT_OK
    print(json.dumps(doc["config"], indent=2))
    for s in doc["stages"]:
        side = s["P"][0]
        print(
            f"stage {s['stage']}: P={side}x{side} M={s['M']} N={s['N']} depth={s['depth']} "
            f"dim={s['dim']} heads={s['heads']} shifted_blocks={s['shifted_blocks']}"
        )
    print(f"params={doc['params']}")
    print(f"flops={doc['flops']}")
    print(f"shift_elements={doc['shift_elements']}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_property_suite

    report = run_property_suite(args.scope, args.seed or 0)
    sys.stdout.write(report.text())
    if args.output:
        Path(args.output).write_text(report.to_json())
    return EXIT_OK if report.ok else EXIT_FAIL


def _structural_problems(rep, cfg) -> list[str]:
    problems = []
    if rep.flops <= 0:
        problems.append(f"{rep.name}: non-positive FLOP count")
    if cfg.mode == SIZE_VARYING:
        if rep.shift_elements != 0:
            problems.append(f"{rep.name}: size-varying model reports shift traffic")
        if rep.breakdown.get("shift", 0.0) != 0.0:
            problems.append(f"{rep.name}: size-varying model spent time shifting")
    return problems


def cmd_bench(args) -> int:
    cfgs = _configs(args)
    if len(cfgs) > 2:
        raise CliError("bench compares at most two configs", EXIT_USAGE)
    if args.runs < 3:
        raise CliError("--runs must be at least 3", EXIT_USAGE)
    threads = None if args.threads == 0 else args.threads
    reports, problems = [], []
    for cfg, seed in cfgs:
        seed = args.seed if args.seed is not None else (seed or 0)
        if args.analytic:
            rep = profile_config(cfg)
        else:
            params = build_model(cfg, seed)
            img = numerics.make_rng(seed + 1).standard_normal((args.batch, cfg.in_chans, cfg.img_size, cfg.img_size))
            rep = profile_model(params, img.astype(np.float32), args.runs, args.warmup, threads)
        problems += _structural_problems(rep, cfg)
        reports.append(rep)
    rows = reports + ([compare_reports(reports[0], reports[1])] if len(reports) == 2 else [])
    out = emit_report(rows, args.format)
    if args.output:
        Path(args.output).write_bytes(out)
    else:
        sys.stdout.buffer.write(out)
        sys.stdout.flush()
    figdir = args.figures or (Path(args.output).parent if args.output else None)
    if figdir is not None:
        from .plotting import render_figures

        for p in render_figures(reports, figdir):
            print(f"wrote {p}", file=sys.stderr)
    for p in problems:
        print(f"FAIL {p}", file=sys.stderr)
    return EXIT_FAIL if problems else EXIT_OK


def cmd_infer(args) -> int:
    cfg, seed = _single(args)
    img = archive.read_blob(args.input)
    if img.ndim != 4 or img.shape[1:] != (cfg.in_chans, cfg.img_size, cfg.img_size):
        raise CliError(
            f"input shape {list(img.shape)} does not match [B, {cfg.in_chans}, {cfg.img_size}, {cfg.img_size}]",
            EXIT_USAGE,
        )
    if args.weights:
        params = archive.load_weights(cfg, args.weights)
    else:
        params = build_model(cfg, seed or 0)
    logits = model_forward(params, img).astype(np.float32)
    if args.output:
        archive.write_blob(args.output, logits, layout="BC")
    k = min(args.topk, cfg.num_classes)
    for b, row in enumerate(logits):
        top = np.argsort(-row, kind="stable")[:k]
        print(f"image {b}: " + ", ".join(f"{int(i)} ({row[i]:.6f})" for i in top))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swinfree", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p):
        p.add_argument("--config", action="append", metavar="PATH", help="JSON config file")
        p.add_argument("--preset", action="append", metavar="NAME", help="named preset, e.g. swin-free-B-BR-DR14")
        p.add_argument("--seed", type=int, help="weight / input seed (overrides the config's seed)")

    p = sub.add_parser("describe", help="print expanded config, per-stage trace and analytic costs")
    model_args(p)
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("--scope", choices=["quick", "full"], default="quick")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", metavar="PATH", help="also write the JSON summary here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="profile one config or compare two")
    model_args(p)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--threads", type=int, default=1, help="BLAS threads; 0 leaves the library default")
    p.add_argument("--format", choices=["json", "csv", "table"], default="csv")
    p.add_argument("--output", metavar="PATH")
    p.add_argument("--figures", metavar="DIR", help="directory for PNG figures")
    p.add_argument("--analytic", action="store_true", help="skip timing; analytic counts only")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("infer", help="run a forward pass on a raw tensor blob")
    model_args(p)
    p.add_argument("--random-seed", dest="seed", type=int, help="alias of --seed")
    p.add_argument("--weights", metavar="PATH", help="weight archive (manifest at PATH.json)")
    p.add_argument("--input", required=True, metavar="PATH")
    p.add_argument("--output", metavar="PATH", help="logits blob destination")
    p.add_argument("--topk", type=int, default=5)
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
