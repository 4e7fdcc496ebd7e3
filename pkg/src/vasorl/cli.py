"""Command-line pipeline: generate-data, train, evaluate, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import ope
from .actions import ActionKind
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .data import Cohort, CohortValidationError, CsvParseError, NormStats, ingest_csv, normalize, split_cohort, write_csv
from .qlearning import QModel, TrainingError, train
from .reward import annotate_rewards
from .sim import generate_cohort

log = logging.getLogger("vasorl")

MODEL_NAMES = {
    ActionKind.BINARY: "Binary vp1",
    ActionKind.DUAL_MIXED: "Dual Mixed",
    ActionKind.BLOCK_DISCRETE: "Dual BD",
    ActionKind.STEPWISE: "Dual Stepwise",
    ActionKind.LSTM_BLOCK_DISCRETE: "LSTM BD",
}

TABLE2_HEADER = ["Model", "Config", "alpha", "Q/step", "dQ/step", "vp1 usage %", "vp1 concordance %", "vp2 concordance %"]
TABLE3_HEADER = ["Model", "alpha", "Config", "PIR", "dQ Mean", "Model Mean", "Clinician Mean", "Cohen's d"]
TABLE4_HEADER = ["Model", "Config", "Trans E[R]", "Trans IS", "Trans WIS", "Traj E[R]", "Traj IS", "Traj WIS",
                 "Imp WIS (Mod.-Cli.)", "Imp x", "95% CI"]


def model_label(cfg: RunConfig) -> tuple[str, str]:
    spec = cfg.action_space
    name = cfg.eval.model_name or MODEL_NAMES[spec.kind]
    if spec.kind in (ActionKind.BLOCK_DISCRETE, ActionKind.LSTM_BLOCK_DISCRETE):
        detail = f"{spec.n_bins} bins"
    elif spec.kind is ActionKind.STEPWISE:
        detail = f"max_step {spec.max_step:g}"
    else:
        detail = "--"
    return name, detail


# -- pipeline stages ----------------------------------------------------------------


def raw_cohort(cfg: RunConfig) -> Cohort:
    if cfg.data.csv:
        return ingest_csv(cfg.data.csv)
    return generate_cohort(cfg.sim)


def prepared_cohort(cfg: RunConfig, stats: Optional[NormStats] = None) -> Cohort:
    """Annotated, split and normalized cohort; ``stats`` reuses stored normalization."""
    cohort = split_cohort(annotate_rewards(raw_cohort(cfg), cfg.reward), cfg.split.ratios, cfg.split.seed)
    if stats is None:
        return normalize(cohort)
    return replace(cohort.map(lambda ep: ep.with_features(stats.transform(ep.features))), norm_stats=stats)


def cmd_generate(cfg: RunConfig, out: Path) -> None:
    cohort = generate_cohort(cfg.sim)
    write_csv(cohort, out / "cohort.csv")
    cfg.sim.save(out / "sim_config.json")
    log.info("wrote %d patients to %s", len(cohort), out / "cohort.csv")


def cmd_train(cfg: RunConfig, out: Path) -> None:
    cohort = prepared_cohort(cfg)
    cfg.save(out / "config.json")
    cohort.norm_stats.save(out / "norm_stats.json")
    metrics_path = out / "metrics.jsonl"
    with open(metrics_path, "w", encoding="utf-8") as fh:
        def emit(record):
            fh.write(json.dumps(record, sort_keys=True) + "\n")

        def snapshot(model, epoch):
            model.save(out / f"checkpoint_epoch{epoch + 1:04d}.npz", {"run_config": cfg.to_dict()})

        model = train(cohort, cfg.train, cfg.action_space, callback=emit, checkpoint=snapshot)
    model.save(out / "checkpoint.npz", {"run_config": cfg.to_dict()})
    log.info("trained %s for %d epochs", cfg.action_space.kind.value, cfg.train.epochs)


def cmd_evaluate(cfg: RunConfig, out: Path, checkpoint: Optional[Path]) -> None:
    checkpoint = checkpoint or out / "checkpoint.npz"
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    model = QModel.load(checkpoint)
    if model.spec != cfg.action_space:
        log.warning("checkpoint action space differs from config; using the checkpoint's")
        cfg = replace(cfg, action_space=model.spec)
    cohort = prepared_cohort(cfg, model.norm_stats)
    episodes = cohort.split(cfg.eval.split)
    e = cfg.eval
    samples = ope.critic_samples(model, episodes, e.seed)
    fixed = model.spec.kind is ActionKind.LSTM_BLOCK_DISCRETE
    dq = ope.delta_q_from_arrays(samples.q_model, samples.q_clin, samples.greedy_vp1, samples.logged_vp1,
                                 samples.greedy_bin, samples.logged_bin, fixed)
    fqe = ope.fqe_gaussian_report(samples.q_model, samples.q_clin)
    report = ope.evaluate_model_ope(model, episodes, None, e.l2, e.p_floor, (e.clip_lo, e.clip_hi),
                                    (e.product_clip_lo, e.product_clip_hi), e.bootstrap, e.seed)
    name, detail = model_label(cfg)
    report.baseline = e.baseline
    payload = {
        "model": name,
        "config": detail,
        "alpha": cfg.train.alpha,
        "split": e.split,
        "delta_q": dq,
        "fqe": fqe,
        "ope": report.to_dict(),
    }
    ope.write_json(out / "ope_report.json", payload)
    row = {"Model": name, "Config": detail, "alpha": cfg.train.alpha, "Q/step": dq["q_per_step"],
           "dQ/step": dq["delta_q_per_step"], "vp1 usage %": dq["vp1_usage"],
           "vp1 concordance %": dq["vp1_concordance"], "vp2 concordance %": dq["vp2_concordance"]}
    ope.write_csv_rows(out / "delta_q.csv", [row], TABLE2_HEADER)
    ope.write_csv_rows(out / "fqe_hist.csv", ope.fqe_histogram(samples.q_model, samples.q_clin, e.hist_bins))


def report_tables(payloads: Sequence[dict], baseline: str) -> dict[str, list[dict]]:
    base = [p for p in payloads if p["model"] == baseline]
    base_imp = base[0]["ope"]["improvement"] if base else None
    t2, t3, t4 = [], [], []
    for p in payloads:
        dq, fqe, o = p["delta_q"], p["fqe"], p["ope"]
        t2.append({"Model": p["model"], "Config": p["config"], "alpha": p["alpha"], "Q/step": dq["q_per_step"],
                   "dQ/step": dq["delta_q_per_step"], "vp1 usage %": dq["vp1_usage"],
                   "vp1 concordance %": dq["vp1_concordance"], "vp2 concordance %": dq["vp2_concordance"]})
        t3.append({"Model": p["model"], "alpha": p["alpha"], "Config": p["config"], "PIR": fqe["pir"],
                   "dQ Mean": fqe["delta_q_mean"], "Model Mean": fqe["model"]["mu"],
                   "Clinician Mean": fqe["clinician"]["mu"], "Cohen's d": fqe["cohens_d"]})
        mult = None
        if base_imp is not None and base_imp != 0:
            mult = o["improvement"] / base_imp
        ci = o.get("ci")
        t4.append({"Model": p["model"], "Config": p["config"], "Trans E[R]": o["trans_mean_reward"],
                   "Trans IS": o["trans_is"], "Trans WIS": o["trans_wis"], "Traj E[R]": o["traj_mean_return"],
                   "Traj IS": o["traj_is"], "Traj WIS": o["traj_wis"], "Imp WIS (Mod.-Cli.)": o["improvement"],
                   "Imp x": mult, "95% CI": "" if ci is None else f"[{ci[0]:.3f}, {ci[1]:.3f}]"})
    return {"table2.csv": t2, "table3.csv": t3, "table4.csv": t4}


def cmd_report(cfg: RunConfig, out: Path, runs: Sequence[Path]) -> None:
    if not runs:
        raise ConfigError("report needs at least one evaluate output directory")
    payloads = []
    for r in runs:
        path = Path(r) / "ope_report.json" if Path(r).is_dir() else Path(r)
        if not path.exists():
            raise FileNotFoundError(f"no ope_report.json under {r}")
        payloads.append(json.loads(path.read_text(encoding="utf-8")))
    headers = {"table2.csv": TABLE2_HEADER, "table3.csv": TABLE3_HEADER, "table4.csv": TABLE4_HEADER}
    for fname, rows in report_tables(payloads, cfg.eval.baseline).items():
        ope.write_csv_rows(out / fname, rows, headers[fname])


# -- entry point -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vasorl", description="Offline RL for dual-vasopressor dosing.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON run config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. train.alpha=0.0 (repeatable)")
    common.add_argument("--out", type=Path, default=Path("runs/default"), help="output directory")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for splitting, simulation and training (default: the config's, 42)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", parents=[common], help="simulate a cohort and write it as CSV")
    sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    ev = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on the test split")
    ev.add_argument("--checkpoint", type=Path, help="defaults to <out>/checkpoint.npz")
    rep = sub.add_parser("report", parents=[common], help="aggregate evaluate outputs into tables")
    rep.add_argument("runs", nargs="*", type=Path, help="evaluate output directories")
    return parser


def _limit_threads():
    n = os.environ.get("VASORL_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    limiter = None
    try:
        limiter = _limit_threads()
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        cfg = apply_overrides(cfg, args.overrides)
        out: Path = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "generate-data":
            cmd_generate(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, out)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out, args.checkpoint)
        else:
            cmd_report(cfg, out, args.runs)
    except (ConfigError, CsvParseError, CohortValidationError, FileNotFoundError, TrainingError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.unregister()
    return 0


def main() -> None:
    sys.exit(run())
