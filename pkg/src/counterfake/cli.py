"""Command line interface.

Subcommands mirror the pipeline stages:

  pretrain  train a face-swap model on the clean target/source pair
  protect   perturb the target's training faces against saved checkpoints
  train     run a full named variant recipe end to end
  eval      swap holdout faces through a checkpoint and measure degradation
  report    merge several run directories into one comparison report

Every command takes --config (YAML), repeatable --set overrides and --out.
Runs are deterministic: invoking a command twice with the same inputs
produces byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from . import report as reportmod
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, CounterfakeError, IngestionError, InputError
from .experiments import run_eval, run_pretrain, run_variant
from .images import read_image
from .protect import EnsembleMember, EnsembleSpec, protect_dataset
from .utils import derive_seed

USAGE_HINT = "run 'counterfake <command> --help' for usage"


def _common(sub: argparse.ArgumentParser, config_required: bool = True) -> None:
    sub.add_argument("--config", "-c", required=config_required, help="YAML config path")
    sub.add_argument("--set", "-s", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a config value (dotted path)")
    sub.add_argument("--out", "-o", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="counterfake",
                                     description="Disrupt face-swap training and measure it.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("pretrain", help="train a model on the clean pair")
    _common(p)

    p = subs.add_parser("protect", help="perturb target training faces")
    _common(p)
    p.add_argument("--checkpoint", action="append", default=[],
                   help="pre-trained model checkpoint (repeat for an ensemble)")

    p = subs.add_parser("train", help="run a full variant recipe")
    _common(p)

    p = subs.add_parser("eval", help="evaluate a trained checkpoint")
    _common(p)
    p.add_argument("--checkpoint", default=None, help="checkpoint to evaluate")

    p = subs.add_parser("report", help="merge run directories into a comparison")
    p.add_argument("runs", nargs="+", help="run directories to merge")
    p.add_argument("--out", "-o", required=True, help="output directory")
    return parser


def _load_cfg(args) -> dict:
    cfg = cfgmod.load_config(args.config)
    cfgmod.apply_overrides(cfg, args.overrides)
    return cfg


def _out_dir(args, cfg) -> str:
    out = args.out or cfg.get("output")
    if not out:
        raise ConfigurationError("no output directory: pass --out or set output in the config")
    os.makedirs(out, exist_ok=True)
    return out


def _write_provenance(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def cmd_pretrain(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    plan = cfgmod.build_plan(cfg)
    model, log = run_pretrain(plan.target, plan.source, plan.model, plan.pretrain_steps,
                              derive_seed(plan.seed, "pretrain", 0),
                              batch_size=plan.batch_size, lr=plan.lr, log_every=plan.log_every)
    ckpt = save_checkpoint(model, os.path.join(out, "checkpoints", "final.ckpt"),
                           extra={"role": "pretrained", "seed": plan.seed})
    from .experiments import export_logs
    export_logs(log, os.path.join(out, "logs"))
    _write_provenance(os.path.join(out, "provenance.json"), {
        "command": "pretrain", "config_digest": cfgmod.config_digest(cfg),
        "seed": plan.seed, "steps": plan.pretrain_steps,
        "artifacts": ["checkpoints/final.ckpt", "logs/train_log.csv"]})
    print(f"pretrained model -> {ckpt}")
    return 0


def cmd_protect(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    plan = cfgmod.build_plan(cfg)
    attack = replace(cfgmod.build_attack_config(cfg), seed=derive_seed(plan.seed, "protect"))
    checkpoints = list(args.checkpoint)

    if attack.method == "random":
        if checkpoints:
            raise ConfigurationError("method 'random' uses no checkpoints")
        result = protect_dataset(plan.target, attack)
    elif not checkpoints:
        raise ConfigurationError(f"method {attack.method!r} requires --checkpoint")
    elif len(checkpoints) == 1:
        result = protect_dataset(plan.target, attack, model=load_checkpoint(checkpoints[0]))
    else:
        if attack.method != "pgd":
            raise ConfigurationError("ensemble protection runs pgd; set attack.method to pgd")
        members = [EnsembleMember(model=load_checkpoint(p),
                                  tag=os.path.splitext(os.path.basename(p))[0])
                   for p in checkpoints]
        result = protect_dataset(plan.target, attack, ensemble=EnsembleSpec(members=members))

    from .experiments import write_protected
    protected_dir = write_protected(result, plan.target, os.path.join(out, "protected"))

    # Budget check against the files actually on disk.
    worst = 0.0
    for i in result.protected_indices:
        name = os.path.splitext(plan.target.names[i])[0] + ".png"
        stored = read_image(os.path.join(protected_dir, name))
        gap = float(np.max(np.abs(stored - plan.target.faces[i].numpy())))
        worst = max(worst, gap)
    if worst > attack.epsilon + 1e-6:
        print(f"error: stored perturbation exceeds budget: {worst:.8f} > "
              f"{attack.epsilon} + 1e-6", file=sys.stderr)
        return 1
    _write_provenance(os.path.join(out, "provenance.json"), {
        "command": "protect", "config_digest": cfgmod.config_digest(cfg),
        "seed": plan.seed, "attack": attack.as_dict(),
        "checkpoints": [os.path.basename(p) for p in checkpoints],
        "worst_linf_on_disk": worst,
        "faces": len(result.protected_indices), "artifacts": ["protected"]})
    print(f"protected {len(result.protected_indices)} faces -> {protected_dir} "
          f"(worst stored offset {worst:.6f} <= {attack.epsilon} + 1e-6)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    plan = cfgmod.build_plan(cfg)
    result = run_variant(plan, out)
    provenance = dict(result.provenance)
    provenance.update({"command": "train", "config_digest": cfgmod.config_digest(cfg),
                       "artifacts": ["checkpoints/final.ckpt", "logs/train_log.csv"]
                       + (["protected"] if result.protected_dir else [])})
    _write_provenance(os.path.join(out, "provenance.json"), provenance)
    tail = result.log.tail_means()
    summary = f"total_G {tail.get('total_G', float('nan')):.4f}" if tail else "no steps"
    print(f"variant {plan.variant}: trained {plan.steps} steps -> {result.checkpoint_path} ({summary})")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    ckpt_path = args.checkpoint or cfg["eval"]["checkpoint"]
    if not ckpt_path:
        raise ConfigurationError("no checkpoint: pass --checkpoint or set eval.checkpoint")
    model = load_checkpoint(ckpt_path)
    plan_cfg = dict(cfg)
    plan_cfg["resolution"] = model.config.resolution
    source = cfgmod.build_dataset(cfg["data"]["source"], model.config.resolution, "source")
    variant = None
    run_provenance = os.path.join(os.path.dirname(os.path.dirname(ckpt_path)), "provenance.json")
    if os.path.exists(run_provenance):
        with open(run_provenance) as fh:
            variant = json.load(fh).get("variant")
    report = run_eval(model, source, os.path.join(out, "reports"),
                      margin=cfgmod.eval_margin(plan_cfg),
                      top_fraction=float(cfg["eval"]["top_fraction"]),
                      masks_dir=cfg["eval"]["masks"], variant=variant,
                      spectra=bool(cfg["eval"]["spectra"]),
                      spectrum_mode=str(cfg["eval"]["spectrum_mode"]))
    _write_provenance(os.path.join(out, "reports", "provenance.json"), {
        "command": "eval", "config_digest": cfgmod.config_digest(cfg),
        "checkpoint": os.path.basename(ckpt_path), "variant": variant,
        "aggregates": report.aggregates, "artifacts": ["reports/metrics.csv", "reports/metrics.json"]})
    agg = report.aggregates
    mean = agg.get("aih_mean")
    print(f"evaluated {agg.get('count', 0)} swaps -> {out}/reports "
          f"(mean AIH {mean:.4f})" if mean is not None else
          f"evaluated {agg.get('count', 0)} swaps -> {out}/reports")
    return 0


def cmd_report(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    merged = reportmod.merge_reports(args.runs, args.out)
    print(f"merged {len(merged['rows'])} runs -> {os.path.join(args.out, 'comparison.csv')}")
    return 0


COMMANDS = {"pretrain": cmd_pretrain, "protect": cmd_protect, "train": cmd_train,
            "eval": cmd_eval, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, InputError, IngestionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(USAGE_HINT, file=sys.stderr)
        return 2
    except CounterfakeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
