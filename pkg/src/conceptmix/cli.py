"""Command-line front end.

Commands: ``generate``, ``ablate``, ``inject-demo``, ``oracle-check`` and
``metrics``. Exit status is 2 for config errors, 1 when nothing succeeded
(or a check failed) and 0 otherwise. ``CONCEPTMIX_WORKERS`` sets the number
of worker processes used for seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from .config import PipelineConfig, load_config
from .errors import ConfigError
from .imageio import atomic_write, read_pnm
from .metrics import SUMMARY_COLUMNS, MetricScene, sample_metrics, summarize

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _seed_arg(text: str) -> list[int]:
    """``N`` means seeds 0..N-1; ``A:B`` means A..B-1."""
    if ":" in text:
        a, b = text.split(":", 1)
        seeds = list(range(int(a), int(b)))
    else:
        seeds = list(range(int(text)))
    if not seeds:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return seeds


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.replace(" ", "").split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seed list needs nonnegative integers")
    return seeds


def _load(args) -> PipelineConfig:
    config = load_config(args.config)
    seeds = getattr(args, "seed_list", None) or getattr(args, "seeds", None)
    if seeds:
        config = replace(config, seeds=sorted(set(seeds)))
    return config


def _out_dir(args, config: PipelineConfig) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(args.config).parent / config.out_dir


def cmd_generate(args) -> int:
    from .pipeline import persist, run

    config = _load(args)
    dump_traj = args.dump_trajectory or config.dump_trajectory
    report = run(config, keep_trajectory=dump_traj)
    out = _out_dir(args, config)
    persist(report, config, out, dump_masks=args.dump_masks or config.dump_masks, dump_trajectory=dump_traj)
    s = report.summary
    print(f"{report.succeeded}/{len(report.results)} seeds succeeded; coverage {s['coverage_rate']:.3f}, "
          f"fidelity {s['fidelity_score']:.3f}, blending {s['blending_score']:.3f}; wrote {out}")
    return EXIT_OK if report.succeeded else EXIT_FAILED


def cmd_ablate(args) -> int:
    from .pipeline import TOGGLES, ablate, ablation_rows, sweep_scale

    config = _load(args)
    toggles = args.toggle or list(TOGGLES)
    result = ablate(config, toggles)
    table = ablation_rows(result)
    out = _out_dir(args, config)
    atomic_write(out / "ablation.csv", table.encode())
    sys.stdout.write(table)
    if args.sweep:
        scales = [float(v) for v in args.sweep.split(",")]
        sweep = sweep_scale(config, scales)
        lines = ["scale," + ",".join(SUMMARY_COLUMNS)]
        lines += [f"{lam!r}," + ",".join(repr(round(s[c], 12)) for c in SUMMARY_COLUMNS) for lam, s in sweep.items()]
        text = "\n".join(lines) + "\n"
        atomic_write(out / "scale_sweep.csv", text.encode())
        sys.stdout.write(text)
    return EXIT_OK if any(r.succeeded for r in result.reports.values()) else EXIT_FAILED


def _policy_from_args(args):
    from .videofeat import DEFAULT_RULES, InjectionPolicy

    rules = DEFAULT_RULES
    if args.rule:
        rules = []
        for text in args.rule:
            sel, _, eta = text.partition("=")
            if not sel or not eta:
                raise ConfigError(f"rule {text!r} must look like SELECTOR=ETA", field="--rule")
            rules.append((sel, float(eta)))
    rng = None
    if args.timestep_range:
        lo, _, hi = args.timestep_range.partition(":")
        rng = (int(lo), int(hi))
    try:
        return InjectionPolicy(tuple(rules), args.num_steps, rng)
    except ValueError as exc:
        raise ConfigError(str(exc), field="--rule") from None


def cmd_inject_demo(args) -> int:
    from .videofeat import read_bundle, run_demo, write_bundle

    policy = _policy_from_args(args)
    bundle = read_bundle(args.input) if args.input else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        demo = run_demo(policy, args.frames, args.seed, bundle)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print("layer,eta,drift_before,drift_after,status")
    for r in demo.rows:
        eta = "" if r["eta"] is None else repr(r["eta"])
        print(f"{r['layer']},{eta},{r['drift_before']:.6f},{r['drift_after']:.6f},{r['status']}")
    if args.out:
        out = Path(args.out)
        write_bundle(out / "features_before.bin", demo.before)
        write_bundle(out / "features_after.bin", demo.after)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from .checks import builtin_suite, config_suite

    report = builtin_suite(mc_draws=args.draws)
    if args.config:
        config_suite(load_config(args.config), report, mc_draws=min(args.draws, 50_000))
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_metrics(args) -> int:
    config = load_config(args.config)
    scene = MetricScene.from_config(config)
    paths = sorted(Path(p) for p in args.images)
    samples = []
    for p in paths:
        try:
            samples.append(sample_metrics(read_pnm(p), scene))
        except ValueError as exc:
            print(f"error: {p}: {exc}", file=sys.stderr)
            return EXIT_FAILED
    summary = summarize(samples)
    text = ",".join(SUMMARY_COLUMNS) + "\n" + ",".join(repr(round(summary[c], 12)) for c in SUMMARY_COLUMNS) + "\n"
    if args.out:
        atomic_write(args.out, text.encode())
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptmix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p):
        p.add_argument("config", help="run config JSON")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--seeds", type=_seed_arg, help="N (seeds 0..N-1) or A:B")
        g.add_argument("--seed-list", type=_seed_list, help="comma-separated seeds")
        p.add_argument("--out", help="output directory (default: the config's output.dir)")

    p = sub.add_parser("generate", help="sample every seed and write images, masks, report, metrics")
    run_args(p)
    p.add_argument("--dump-masks", action="store_true", help="write per-region PGM masks")
    p.add_argument("--dump-trajectory", action="store_true", help="write per-step denoised snapshots")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ablate", help="default run plus one run per ablation toggle")
    run_args(p)
    p.add_argument("--toggle", action="append", help="restrict to these toggles (repeatable)")
    p.add_argument("--sweep", help="also sweep the guidance scale over comma-separated values")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inject-demo", help="first-frame feature injection on a synthetic or given bundle")
    p.add_argument("--input", help="feature bundle to read instead of the synthetic one")
    p.add_argument("--out", help="directory for the before/after bundles")
    p.add_argument("--rule", action="append", help="SELECTOR=ETA (repeatable; default mid.*=1, up.0=0.3)")
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-steps", type=int, default=50, help="T, the only step injection applies at")
    p.add_argument("--timestep-range", help="LO:HI to inject over a range instead (experimental)")
    p.set_defaults(func=cmd_inject_demo)

    p = sub.add_parser("oracle-check", help="finite-difference and Monte-Carlo validation of the denoisers")
    p.add_argument("config", nargs="?", help="also check this config's libraries")
    p.add_argument("--draws", type=int, default=1_000_000)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("metrics", help="coverage, fidelity and blending of existing images")
    p.add_argument("config", help="scene config the images were generated from")
    p.add_argument("images", nargs="+", help="PPM images")
    p.add_argument("--out", help="write the CSV here as well")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
