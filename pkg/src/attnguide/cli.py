"""Command-line interface: run, ablate, gradcheck and bench.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 runtime
(numeric or I/O) error. Every error path prints a single line to stderr
with a machine-parseable ``error[<kind>]:`` prefix.
"""

from __future__ import annotations

import argparse
import dataclasses
import statistics
import sys
from pathlib import Path

from . import metrics, reporting
from .config import RunConfig, config_to_dict, default_config, load_config, write_config
from .errors import AttnGuideError, ConfigError, NumericError
from .numerics import Tensor
from .pairing import TokenGroup, TokenGroups
from .sampler import ToyDenoiser, guided_sample

BENCH_TEMPLATES = {
    # template name -> group structures as (subject, attributes) token indices
    "animal-animal": ((1, ()), (4, ())),
    "animal-object": ((1, ()), (5, (4,))),
    "object-object": ((2, (1,)), (6, (5,))),
    "multi-object": ((1, (0,)), (4, (3,))),
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from err


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"expected a comma-separated number list, got {text!r}") from err


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    guidance_updates = {}
    if getattr(args, "seed", None) is not None:
        guidance_updates["seed"] = args.seed
    if getattr(args, "tau", None) is not None:
        guidance_updates["tau"] = args.tau
    if getattr(args, "alpha", None) is not None:
        guidance_updates["alpha"] = args.alpha
    if getattr(args, "steps", None) is not None:
        guidance_updates["total_steps"] = args.steps
    if getattr(args, "refine_at", None) is not None:
        guidance_updates["refine_at"] = frozenset(_int_list(args.refine_at))
    if getattr(args, "refine_iters", None) is not None:
        guidance_updates["refine_iters"] = args.refine_iters
    if getattr(args, "cutoff", None) is not None:
        guidance_updates["cutoff_step"] = args.cutoff
    if guidance_updates:
        cfg = dataclasses.replace(cfg, guidance=dataclasses.replace(cfg.guidance, **guidance_updates))
    if getattr(args, "out_dir", None) is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out_dir)
    return cfg


def _run_once(cfg: RunConfig, guided: bool):
    model = ToyDenoiser.from_config(cfg.model, cfg.guidance.total_steps)
    trajectory = guided_sample(model, cfg.groups, cfg.guidance, guided=guided)
    # the echo describes the run itself; where it is written is not part of it
    echo = config_to_dict(dataclasses.replace(cfg, out_dir=None))
    report = metrics.build_report(trajectory, cfg.groups, echo,
                                  seed=cfg.guidance.seed, guided=guided)
    return trajectory, report


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(cfg.out_dir or f"{Path(args.config).stem}_out")
    _, report = _run_once(cfg, guided=args.guided)

    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    reporting.write_report(report, report_path)
    reporting.write_metrics_csv(report, out_dir / "metrics.csv")
    reporting.render_run_figures(report, cfg.groups, out_dir / "figures")
    maps_dir = out_dir / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    final = report.final_maps.data
    for tok in cfg.groups.all_tokens():
        reporting.export_map(Tensor(final[:, :, tok]), maps_dir / f"token_{tok:02d}.pgm")

    last = report.records[-1]
    print(f"wrote {report_path}")
    print(f"final step {last.step}: binding={_fmt(last.binding)} "
          f"separation={_fmt(last.separation)} scatter={_fmt(last.scatter)}")
    return 0


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    grid = _float_list(args.tau_grid) if args.tau_grid else [0.25, 0.5, 0.75, 1.0]
    for tau in grid:
        if tau <= 0:
            raise ConfigError(f"tau grid values must be positive, got {tau}")
    count = args.count if args.count is not None else 1
    if count < 1:
        raise ConfigError(f"count must be at least 1 for ablation, got {count}")
    out_dir = Path(args.out_dir or f"{Path(args.config).stem}_ablation")

    base_seed = cfg.guidance.seed
    run_rows = []
    for tau in sorted(grid):
        for seed in range(base_seed, base_seed + count):
            guidance = dataclasses.replace(cfg.guidance, tau=tau, seed=seed)
            _, report = _run_once(dataclasses.replace(cfg, guidance=guidance), guided=True)
            last = report.records[-1]
            run_rows.append({
                "tau": tau, "seed": seed,
                "binding": last.binding, "separation": last.separation,
            })
    agg_rows = []
    for tau in sorted(grid):
        rows = [r for r in run_rows if r["tau"] == tau]
        agg_rows.append({
            "tau": tau,
            "seeds": len(rows),
            "binding_mean": statistics.fmean(r["binding"] for r in rows),
            "separation_mean": statistics.fmean(r["separation"] for r in rows),
        })

    out_dir.mkdir(parents=True, exist_ok=True)
    reporting.write_ablation_csv(agg_rows, out_dir / "ablation.csv")
    reporting.write_ablation_runs_csv(run_rows, out_dir / "ablation_runs.csv")
    reporting.render_ablation_figure(agg_rows, out_dir / "ablation.png")

    print(f"{'tau':>6}  {'seeds':>5}  {'binding':>8}  {'separation':>10}")
    for row in agg_rows:
        print(f"{row['tau']:>6.3g}  {row['seeds']:>5d}  "
              f"{row['binding_mean']:>8.4f}  {row['separation_mean']:>10.4f}")
    print(f"wrote {out_dir / 'ablation.csv'}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    model = ToyDenoiser.from_config(cfg.model, cfg.guidance.total_steps)
    result = metrics.run_gradcheck(model, cfg.groups, cfg.guidance)
    for point in result.points:
        verdict = "PASS" if point.gap < result.tolerance else "FAIL"
        print(f"point {point.index}: max relative gap {point.gap:.3e} {verdict}")
    worst = result.worst
    if result.passed:
        print(f"gradcheck: PASS (worst gap {worst.gap:.3e} at point {worst.index})")
        return 0
    print(f"gradcheck: FAIL (worst gap {worst.gap:.3e} at point {worst.index}, "
          f"coordinate {worst.worst_coord})")
    return 1


def cmd_bench(args: argparse.Namespace) -> int:
    if args.template not in BENCH_TEMPLATES:
        raise ConfigError(
            f"unknown template {args.template!r}; choose from {sorted(BENCH_TEMPLATES)}"
        )
    count = args.count if args.count is not None else 1
    if count < 0:
        raise ConfigError(f"count must be nonnegative, got {count}")
    out_dir = Path(args.out_dir or "bench_configs")
    base_seed = args.seed if args.seed is not None else 0
    groups = TokenGroups(tuple(
        TokenGroup(subject=subject, attributes=attrs)
        for subject, attrs in BENCH_TEMPLATES[args.template]
    ))
    if count > 0:
        out_dir.mkdir(parents=True, exist_ok=True)
    for k in range(count):
        cfg = default_config(groups=groups, seed=base_seed + k)
        write_config(cfg, out_dir / f"{args.template}-{k:03d}.json")
    print(f"wrote {count} config(s) for template {args.template} to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnguide",
        description="Contrastive attention guidance in a deterministic sampling sandbox.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one guided (or unguided) trajectory")
    run.add_argument("--config", required=True, help="path to a JSON run config")
    run.add_argument("--seed", type=int, help="override the trajectory seed")
    run.add_argument("--tau", type=float, help="override the loss temperature")
    run.add_argument("--alpha", type=float, help="override the update scale factor")
    run.add_argument("--steps", type=int, help="override the number of denoising steps")
    run.add_argument("--refine-at", help="override refinement steps, e.g. 0,10,20")
    run.add_argument("--refine-iters", type=int, help="override inner refinement count")
    run.add_argument("--cutoff", type=int, help="override the optimization cutoff step")
    mode = run.add_mutually_exclusive_group()
    mode.add_argument("--guided", dest="guided", action="store_true", default=True)
    mode.add_argument("--unguided", dest="guided", action="store_false")
    run.add_argument("--out-dir", help="output directory (default: derived from config name)")
    run.set_defaults(func=cmd_run)

    ablate = sub.add_parser("ablate", help="grid-search the loss temperature")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--tau-grid", help="comma-separated temperatures (default 0.25,0.5,0.75,1.0)")
    ablate.add_argument("--seed", type=int, help="base seed (default: config seed)")
    ablate.add_argument("--count", type=int, help="number of seeds per temperature (default 1)")
    ablate.add_argument("--steps", type=int, help="override the number of denoising steps")
    ablate.add_argument("--out-dir")
    ablate.set_defaults(func=cmd_ablate)

    gradcheck = sub.add_parser("gradcheck", help="check taped gradients against finite differences")
    gradcheck.add_argument("--config", required=True)
    gradcheck.set_defaults(func=cmd_gradcheck)

    bench = sub.add_parser("bench", help="emit benchmark-template run configs")
    bench.add_argument("template", help="one of: " + ", ".join(sorted(BENCH_TEMPLATES)))
    bench.add_argument("--count", type=int, help="number of configs to emit (default 1)")
    bench.add_argument("--seed", type=int, help="base trajectory seed (default 0)")
    bench.add_argument("--out-dir")
    bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error[config]: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"error[numeric]: {err}", file=sys.stderr)
        return 3
    except AttnGuideError as err:
        print(f"error[runtime]: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"error[io]: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
