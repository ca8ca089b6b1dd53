"""Experiment entry point: config loading, metrics persistence, comparison."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_config
from .orchestrator import RoundMetricsRecord, Simulation

CSV_COLUMNS = [
    "round", "device", "mode", "acc", "acc_m1", "acc_m2",
    "loss_task", "loss_sim", "loss_cls", "loss_dif", "loss_kd", "loss_gen",
    "gamma_m1", "gamma_m2", "phi_m1", "phi_m2",
    "n_m1", "n_m2", "n_max", "e_cmp", "e_com", "e_remaining", "infeasible",
]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def record_row(r: RoundMetricsRecord) -> list[str]:
    return [_fmt(v) for v in (
        r.round, r.device, r.mode, r.acc, r.acc_m.get(0), r.acc_m.get(1),
        r.loss_task, r.loss_sim, r.loss_cls, r.loss_dif, r.loss_kd, r.loss_gen,
        r.gamma.get(0), r.gamma.get(1), r.phi_mean.get(0), r.phi_mean.get(1),
        r.n_m.get(0), r.n_m.get(1), r.n_max, r.e_cmp, r.e_com, r.e_remaining,
        r.infeasible,
    )]


def write_metrics(records: list[RoundMetricsRecord], path: str):
    records = sorted(records, key=lambda r: (r.round, r.device))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(record_row(r))


def summarize(records: list[RoundMetricsRecord], config: ExperimentConfig) -> dict:
    last_round = max(r.round for r in records)
    finals = [r for r in records if r.round == last_round]
    by_round = {}
    for r in records:
        by_round.setdefault(r.round, []).append(r.acc)
    round_means = {t: float(np.mean(a)) for t, a in by_round.items()}
    best_round = max(round_means, key=lambda t: (round_means[t], -t))

    modality_acc = {}
    for m in (0, 1):
        vals = [r.acc_m[m] for r in finals if m in r.acc_m]
        modality_acc[f"m{m + 1}"] = float(np.mean(vals)) if vals else None
    groups = {}
    for m in (0, 1):
        vals = [r.acc for r in finals if set(r.acc_m) == {m}]
        groups[f"only_m{m + 1}"] = float(np.mean(vals)) if vals else None

    spent = {}
    for r in records:
        spent[r.device] = spent.get(r.device, 0.0) + r.e_cmp + r.e_com
    return {
        "mode": config.mode,
        "seed": config.seed,
        "gamma": config.gamma,
        "phi": config.phi,
        "rounds": last_round,
        "final_accuracy": float(np.mean([r.acc for r in finals])),
        "best_accuracy": round_means[best_round],
        "best_round": best_round,
        "final_modality_accuracy": modality_acc,
        "final_group_accuracy": groups,
        "total_energy_per_device": {str(k): spent[k] for k in sorted(spent)},
        "mean_energy_per_device": float(np.mean(list(spent.values()))),
    }


def _emit_plots(records: list[RoundMetricsRecord], out_dir: str):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rounds = sorted({r.round for r in records})
    mean_acc = [float(np.mean([r.acc for r in records if r.round == t])) for t in rounds]
    fig, ax = plt.subplots()
    ax.plot(rounds, mean_acc, label="overall")
    for m in (0, 1):
        vals = []
        for t in rounds:
            a = [r.acc_m[m] for r in records if r.round == t and m in r.acc_m]
            vals.append(float(np.mean(a)) if a else np.nan)
        ax.plot(rounds, vals, label=f"modality {m + 1}")
    ax.set_xlabel("round")
    ax.set_ylabel("test accuracy")
    ax.legend()
    fig.savefig(os.path.join(out_dir, "accuracy.svg"))
    plt.close(fig)


def run_experiment(config: ExperimentConfig, quiet: bool = True):
    """Run one simulation; write metrics.csv and summary.json to out_dir."""
    os.makedirs(config.out_dir, exist_ok=True)
    sim = Simulation(config)
    records = []
    for t in range(1, config.T + 1):
        rows = sim.run_round(t)
        records.extend(rows)
        if not quiet and rows:
            acc = float(np.mean([r.acc for r in rows]))
            print(f"round {t:3d} mean acc {acc:.4f}")
    write_metrics(records, os.path.join(config.out_dir, "metrics.csv"))
    summary = summarize(records, config) if records else {"mode": config.mode,
                                                          "seed": config.seed,
                                                          "rounds": 0}
    with open(os.path.join(config.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if config.emit_plots and records:
        _emit_plots(records, config.out_dir)
    return records, summary


def compare(run_dirs: list[str], out_path: str | None = None) -> list[dict]:
    """Aggregate summaries across runs, grouped by mode."""
    summaries = []
    for d in run_dirs:
        with open(os.path.join(d, "summary.json")) as fh:
            summaries.append(json.load(fh))
    by_mode = {}
    for s in summaries:
        by_mode.setdefault(s["mode"], []).append(s)
    rows = []
    for mode in sorted(by_mode):
        group = by_mode[mode]
        accs = [s["final_accuracy"] for s in group]
        energies = [s["mean_energy_per_device"] for s in group]
        row = {"mode": mode, "runs": len(group),
               "final_acc_mean": float(np.mean(accs)),
               "final_acc_std": float(np.std(accs)),
               "mean_energy": float(np.mean(energies))}
        for m in ("m1", "m2"):
            vals = [s["final_modality_accuracy"].get(m) for s in group]
            vals = [v for v in vals if v is not None]
            row[f"acc_{m}"] = float(np.mean(vals)) if vals else None
        rows.append(row)
    header = ["mode", "runs", "final_acc_mean", "final_acc_std",
              "acc_m1", "acc_m2", "mean_energy"]
    print("  ".join(f"{h:>16}" for h in header))
    for row in rows:
        print("  ".join(f"{_fmt(row[h]):>16}" for h in header))
    if out_path:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(row[h]) for h in header])
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dmml-sim")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run one experiment")
    runp.add_argument("--config", default=None)
    runp.add_argument("--mode", default=None)
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--out", default=None)
    runp.add_argument("--rounds", type=int, default=None)
    runp.add_argument("--quiet", action="store_true")

    cmpp = sub.add_parser("compare", help="compare finished runs")
    cmpp.add_argument("dirs", nargs="+")
    cmpp.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    if args.command == "run":
        overrides = {"mode": args.mode, "seed": args.seed, "T": args.rounds}
        out = args.out or os.environ.get("DMML_SIM_OUT")
        if out:
            overrides["out_dir"] = out
        try:
            cfg = load_config(args.config, overrides)
            run_experiment(cfg, quiet=args.quiet)
        except Exception as exc:  # noqa: BLE001 - CLI boundary
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return 0
    compare(args.dirs, args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
