"""Command-line harness: demo generation, training, noisy evaluation,
ablation sweeps, and report merging.

Every command is a deterministic function of (config file, flags, seed):
rerunning with the same inputs reproduces every output file byte for
byte. Failures exit nonzero with a single machine-parsable ``error:``
line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import data as data_mod
from . import metrics as metrics_mod
from . import sim, training
from .config import ConfigError, RunConfig
from .policy import load_checkpoint, save_checkpoint
from .trajectory import LogParseError, load_log, save_log

ABLATION_GRIDS = {
    "curriculum_k": (5.0, 10.0, 15.0),
    "alpha": (0.1, 0.01, 0.001),
}
METRIC_COLUMNS = ("sr", "acr", "acr_f", "am_j", "am_e")


class CliError(RuntimeError):
    """Fatal command error; message becomes the one-line stderr output."""

    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def _episode_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1, np.uint64)[0])


def _ensure_dirs(out_dir: str, run: RunConfig) -> dict[str, str]:
    paths = {
        "demos": os.path.join(out_dir, run.paths.demos),
        "checkpoints": os.path.join(out_dir, run.paths.checkpoints),
        "logs": os.path.join(out_dir, run.paths.logs),
        "reports": os.path.join(out_dir, run.paths.reports),
    }
    os.makedirs(out_dir, exist_ok=True)
    for key in ("checkpoints", "logs", "reports"):
        os.makedirs(paths[key], exist_ok=True)
    return paths


def cmd_gen_demos(run: RunConfig, out_dir: str, n: int, seed: int) -> int:
    if n < 1:
        raise CliError(f"gen-demos: n must be >= 1, got {n}", exit_code=2)
    paths = _ensure_dirs(out_dir, run)
    try:
        ds = data_mod.generate_demonstrations(run.env, n, seed)
    except data_mod.GenerationError as exc:
        raise CliError(f"gen-demos: {exc}") from exc
    data_mod.save_dataset(ds, paths["demos"])
    print(
        f"wrote {len(ds)} demonstrations to {paths['demos']} "
        f"(mean episode length {ds.mean_length:.1f} steps)"
    )
    return 0


def _load_demos(run: RunConfig, paths: dict[str, str]) -> data_mod.DemoDataset:
    demos_path = paths["demos"]
    if not os.path.exists(demos_path):
        raise CliError(f"demo dataset not found: {demos_path} (run gen-demos first)")
    try:
        return data_mod.load_dataset(demos_path, run.env)
    except LogParseError as exc:
        raise CliError(str(exc)) from exc


def _run_tag(variant: str, run: RunConfig) -> str:
    tag = variant
    if run.train.l1_baseline:
        tag += "-l1"
    return f"{tag}_seed{run.train.seed}"


def cmd_train(run: RunConfig, out_dir: str, variant: str) -> int:
    paths = _ensure_dirs(out_dir, run)
    ds = _load_demos(run, paths)
    try:
        result = training.train_policy(run, ds, variant)
    except training.TrainingError as exc:
        raise CliError(f"train: aborted at {exc}") from exc
    tag = _run_tag(variant, run)
    csv_path = os.path.join(paths["logs"], f"train_{tag}.csv")
    training.write_history_csv(result.history, csv_path)
    ckpt_dir = os.path.join(paths["checkpoints"], tag)
    save_checkpoint(result.policy, ckpt_dir, run.train.seed, run.train.steps)
    print(
        f"trained {variant} for {run.train.steps} steps: "
        f"loss {result.initial_loss:.6f} -> {result.final_loss:.6f}; "
        f"checkpoint at {ckpt_dir}"
    )
    return 0


def _policy_source(run: RunConfig, checkpoint: str):
    """Action source plus a short name for output files."""
    if checkpoint == "expert":
        return sim.expert_policy(run.env), None, "expert"
    if not os.path.isdir(checkpoint):
        raise CliError(f"checkpoint not found: {checkpoint}")
    try:
        policy, _, _ = load_checkpoint(checkpoint)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        raise CliError(f"bad checkpoint {checkpoint}: {exc}") from exc
    name = os.path.basename(os.path.normpath(checkpoint))
    return policy.action_source(), policy.cfg.replan_every, name


def cmd_eval(run: RunConfig, out_dir: str, checkpoint: str, noise_name: str) -> int:
    paths = _ensure_dirs(out_dir, run)
    ds = _load_demos(run, paths)
    noise = sim.NoiseConfig.from_preset(noise_name)
    source, replan_every, name = _policy_source(run, checkpoint)

    episodes = []
    for i in range(run.eval.episodes_per_condition):
        seed = _episode_seed(run.eval.seed, i)
        episodes.append(sim.run_episode(source, run.env, noise, seed, replan_every))

    log_name = f"eval_{name}_{noise.label}.jsonl"
    save_log(episodes, os.path.join(paths["logs"], log_name))
    report = metrics_mod.build_report(
        episodes,
        ds,
        noise_level=noise.label,
        noise_p=noise.p,
        noise_sigma=noise.sigma,
        reference_scope=run.eval.reference_scope,
        tdl_c=run.eval.tdl_c,
        metadata={
            "checkpoint": name,
            "log": log_name,
            "eval_seed": run.eval.seed,
            "episodes": run.eval.episodes_per_condition,
        },
    )
    report_path = os.path.join(paths["reports"], f"eval_{name}_{noise.label}.json")
    metrics_mod.save_report(report, report_path)
    print(
        f"evaluated {name} under {noise.label} noise: "
        f"SR {report.sr:.3f}, ACR {report.acr:.3f}; report at {report_path}"
    )
    return 0


def cmd_ablate(run: RunConfig, out_dir: str, axis: str) -> int:
    if axis not in ABLATION_GRIDS:
        raise CliError(f"ablate: unknown axis {axis!r}, choose from {sorted(ABLATION_GRIDS)}", exit_code=2)
    paths = _ensure_dirs(out_dir, run)
    ds = _load_demos(run, paths)
    noise = sim.NoiseConfig.from_preset("normal")

    rows = []
    for value in ABLATION_GRIDS[axis]:
        variant_run = replace(run, loss=replace(run.loss, **{axis: value}))
        try:
            result = training.train_policy(variant_run, ds, "acorn")
        except training.TrainingError as exc:
            raise CliError(f"ablate {axis}={value}: aborted at {exc}") from exc
        episodes = []
        for i in range(run.eval.episodes_per_condition):
            seed = _episode_seed(run.eval.seed, i)
            episodes.append(
                sim.run_episode(
                    result.policy.action_source(),
                    run.env,
                    noise,
                    seed,
                    result.policy.cfg.replan_every,
                )
            )
        report = metrics_mod.build_report(
            episodes,
            ds,
            noise_level=noise.label,
            noise_p=noise.p,
            noise_sigma=noise.sigma,
            reference_scope=run.eval.reference_scope,
            tdl_c=run.eval.tdl_c,
            metadata={"axis": axis, "value": value, "eval_seed": run.eval.seed},
        )
        metrics_mod.save_report(
            report, os.path.join(paths["reports"], f"ablate_{axis}_{value}.json")
        )
        rows.append((value, report))
        print(f"ablate {axis}={value}: SR {report.sr:.3f}, ACR {report.acr:.3f}")

    table_path = os.path.join(paths["reports"], f"ablate_{axis}.csv")
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(f"{axis}," + ",".join(METRIC_COLUMNS) + "\n")
        for value, report in rows:
            cells = [repr(value)] + [_fmt(getattr(report, col)) for col in METRIC_COLUMNS]
            fh.write(",".join(cells) + "\n")
    print(f"ablation table at {table_path}")
    return 0


def cmd_report(run: RunConfig, out_dir: str, report_files: list[str]) -> int:
    paths = _ensure_dirs(out_dir, run)
    loaded = []
    for path in report_files:
        if not os.path.exists(path):
            raise CliError(f"report file not found: {path}")
        label = os.path.splitext(os.path.basename(path))[0]
        loaded.append((label, path, metrics_mod.load_report(path)))

    noise_levels = []
    for _, _, report in loaded:
        if report.noise_level not in noise_levels:
            noise_levels.append(report.noise_level)

    comparison_path = os.path.join(paths["reports"], "comparison.csv")
    with open(comparison_path, "w", encoding="utf-8") as fh:
        fh.write("metric,noise," + ",".join(label for label, _, _ in loaded) + "\n")
        for metric in METRIC_COLUMNS:
            for level in noise_levels:
                cells = [
                    _fmt(getattr(report, metric)) if report.noise_level == level else ""
                    for _, _, report in loaded
                ]
                fh.write(f"{metric},{level}," + ",".join(cells) + "\n")

    from .plots import write_band_svg

    for label, path, report in loaded:
        metrics_mod.write_band_csv(
            report.tdl, os.path.join(paths["reports"], f"{label}_bands.csv")
        )
        failed = []
        log_name = report.metadata.get("log")
        if log_name:
            log_path = os.path.join(os.path.dirname(os.path.abspath(path)), log_name)
            candidates = [log_path, os.path.join(paths["logs"], log_name)]
            for candidate in candidates:
                if os.path.exists(candidate):
                    failed = [t for t in load_log(candidate) if not t.success]
                    break
        write_band_svg(
            report.tdl,
            failed,
            run.env.joint_groups,
            os.path.join(paths["reports"], f"{label}_bands.svg"),
            title=f"{label}: expert band vs failed executions ({report.noise_level})",
        )
    print(f"comparison table at {comparison_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acorn",
        description="Safety-aware chunked behavior cloning on a planar arm.",
    )
    parser.add_argument("--config", default=None, help="YAML run config path")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--out", default="runs", help="output directory (default: runs)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", help="collect scripted expert demonstrations")
    p.add_argument("--n", type=int, default=50, help="number of demonstrations")

    p = sub.add_parser("train", help="train a policy variant")
    p.add_argument("--variant", choices=training.VARIANTS, required=True)
    p.add_argument(
        "--l1-baseline",
        action="store_true",
        help="use L1 reconstruction instead of Huber",
    )

    p = sub.add_parser("eval", help="evaluate a checkpoint under an action-noise preset")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory, or 'expert'")
    p.add_argument("--noise", choices=sorted(sim.NOISE_PRESETS), required=True)

    p = sub.add_parser("ablate", help="sweep one loss hyperparameter and tabulate metrics")
    p.add_argument("--axis", choices=sorted(ABLATION_GRIDS), required=True)

    p = sub.add_parser("report", help="merge reports into a comparison table and band plots")
    p.add_argument("reports", nargs="+", help="report JSON files")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = RunConfig.load(args.config)
        if args.seed is not None:
            run = run.with_seed(args.seed)
        if args.command == "gen-demos":
            seed = args.seed if args.seed is not None else run.train.seed
            return cmd_gen_demos(run, args.out, args.n, seed)
        if args.command == "train":
            if args.l1_baseline:
                run = replace(run, train=replace(run.train, l1_baseline=True))
            return cmd_train(run, args.out, args.variant)
        if args.command == "eval":
            return cmd_eval(run, args.out, args.checkpoint, args.noise)
        if args.command == "ablate":
            return cmd_ablate(run, args.out, args.axis)
        if args.command == "report":
            return cmd_report(run, args.out, args.reports)
        raise CliError(f"unknown command {args.command!r}", exit_code=2)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ConfigError, LogParseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
