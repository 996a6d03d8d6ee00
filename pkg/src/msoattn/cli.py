"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .archive import ArchiveError, assign_weights, load_weights, save_weights, write_manifest
from .config import RunConfig
from .metrics import reports_to_csv
from .model import Model
from .paramcount import comparison_rows
from .task import make_split
from .tensor import ConfigError, StateError, make_rng
from .training import TrainingDiverged, evaluate, history_csv, model_grad_check, score_dump_csv, train

GRAD_TOL = 1e-4
RUNTIME_ERRORS = (ConfigError, StateError, ArchiveError, TrainingDiverged, OSError, ValueError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="msoattn", description="Many-source-one-target attention toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pc = sub.add_parser("param-count", help="proposed vs naive per-layer parameter counts")
    pc.add_argument("--u", type=int, required=True)
    pc.add_argument("--d", type=int, required=True)
    pc.add_argument("--h", type=int, required=True)
    pc.add_argument("--no-self", action="store_true", help="blocks without self-attention")
    pc.add_argument("--csv", action="store_true", help="CSV instead of an aligned table")
    pc.add_argument("--plot", type=Path, help="also write a bar chart here")

    gc = sub.add_parser("grad-check", help="finite-difference check of the full training loss")
    gc.add_argument("--config", type=Path, help="flat JSON run config (default: built-in)")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--entries", type=int, default=8, help="probed entries per parameter")

    tr = sub.add_parser("train", help="train on the synthetic task")
    tr.add_argument("--config", type=Path, required=True)
    tr.add_argument("--out", type=Path, required=True)

    ev = sub.add_parser("evaluate", help="score a split with trained weights")
    ev.add_argument("--weights", type=Path, required=True)
    ev.add_argument("--mode", choices=("disc", "gen", "avg"), default="disc")
    ev.add_argument("--config", type=Path, help="run config (default: config.json beside the weights)")
    ev.add_argument("--split", choices=("val", "test"), default="test")
    ev.add_argument("--out", type=Path, help="directory for metrics.csv and scores.csv")

    da = sub.add_parser("dump-attention", help="write one episode's attention maps as JSON")
    da.add_argument("--weights", type=Path, required=True)
    da.add_argument("--episode", type=int, required=True)
    da.add_argument("--out", type=Path, required=True)
    da.add_argument("--config", type=Path)
    da.add_argument("--split", choices=("train", "val", "test"), default="test")

    be = sub.add_parser("bench", help="forward timing, proposed vs naive layer")
    be.add_argument("--u", type=int, default=3)
    be.add_argument("--d", type=int, default=64)
    be.add_argument("--h", type=int, default=4)
    be.add_argument("--sizes", type=_sizes, default=[8, 32, 128])
    be.add_argument("--reps", type=int, default=25)
    be.add_argument("--out", type=Path, help="write the CSV (and a plot) here")
    return p


def _load_run(weights: Path, config: Path | None) -> tuple[RunConfig, Model]:
    if not weights.is_file():
        raise FileNotFoundError(f"weights file not found: {weights}")
    cfg = RunConfig.load(config if config is not None else weights.parent / "config.json")
    model = Model(cfg.model, make_rng(cfg.seed))
    assign_weights(model.parameters(), load_weights(weights))
    return cfg, model


def cmd_param_count(a, out) -> int:
    rows = comparison_rows([(a.u, a.d, a.h, not a.no_self)])
    if a.csv:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["config", "proposed_total", "naive_total", "ratio"])
        for r in rows:
            w.writerow([r["config"], r["proposed_total"], r["naive_total"], f"{r['ratio']:.4f}"])
    else:
        cells = [("config", "proposed_total", "naive_total", "ratio")]
        cells += [(r["config"], f"{r['proposed_total']:,}", f"{r['naive_total']:,}", f"{r['ratio']:.4f}")
                  for r in rows]
        widths = [max(len(row[i]) for row in cells) for i in range(4)]
        for row in cells:
            out.write("  ".join([row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]))
            out.write("\n")
    if a.plot:
        from .plotting import param_count_plot
        param_count_plot(rows, a.plot)
    return 0


def cmd_grad_check(a, out) -> int:
    cfg = RunConfig.load(a.config) if a.config else RunConfig()
    report = model_grad_check(cfg.model, cfg.task, seed=a.seed, max_entries=a.entries)
    worst = max(report, key=report.get)
    out.write(f"parameters checked: {len(report)}\n")
    out.write(f"max relative error: {report[worst]:.3e} ({worst})\n")
    if report[worst] >= GRAD_TOL:
        out.write(f"FAIL: exceeds {GRAD_TOL:g}\n")
        return 2
    return 0


def cmd_train(a, out) -> int:
    cfg = RunConfig.load(a.config)
    a.out.mkdir(parents=True, exist_ok=True)
    result = train(cfg.model, cfg.task, cfg.schedule, seed=cfg.seed, eval_mode=cfg.eval_mode)
    params = result.model.parameters()
    labels = [str(h.epoch) for h in result.history]
    (a.out / "metrics.csv").write_text(
        reports_to_csv([h.report for h in result.history], labels, label_column="epoch"), encoding="utf-8"
    )
    (a.out / "history.csv").write_text(history_csv(result.history), encoding="utf-8")
    (a.out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    save_weights(a.out / "weights.bin", params)
    write_manifest(a.out / "manifest.txt", params)
    from .plotting import training_curves
    training_curves(result.history, a.out / "training.png")
    final = result.final
    out.write(reports_to_csv([final], ["final"]))
    out.write(f"wrote {a.out}/metrics.csv, weights.bin, manifest.txt\n")
    return 0


def cmd_evaluate(a, out) -> int:
    cfg, model = _load_run(a.weights, a.config)
    episodes = make_split(cfg.task, a.split)
    text = reports_to_csv([evaluate(model, episodes, a.mode)], [f"{a.split}:{a.mode}"])
    out.write(text)
    if a.out:
        a.out.mkdir(parents=True, exist_ok=True)
        (a.out / "metrics.csv").write_text(text, encoding="utf-8")
        (a.out / "scores.csv").write_text(score_dump_csv(model, episodes), encoding="utf-8")
    return 0


def cmd_dump_attention(a, out) -> int:
    cfg, model = _load_run(a.weights, a.config)
    n = cfg.task.split_size(a.split)
    if not 0 <= a.episode < n:
        raise ValueError(f"episode {a.episode} outside the {a.split} split (0..{n - 1})")
    ep = make_split(cfg.task, a.split, n=1, start=a.episode)
    model.encode(ep, record_attention=True)
    rec = model.encoder.last_record
    a.out.parent.mkdir(parents=True, exist_ok=True)
    a.out.write_text(rec.to_json(0) + "\n", encoding="utf-8")
    from .plotting import attention_heatmaps
    maps = {k: v[0] for k, v in rec.head_average().items()}
    png = attention_heatmaps(maps, a.out.with_suffix(".png"), title=f"{a.split} episode {a.episode}")
    out.write(f"wrote {a.out} ({len(rec.maps)} maps) and {png}\n")
    return 0


def cmd_bench(a, out) -> int:
    from .bench import bench, bench_csv
    rows = bench(a.u, a.d, a.h, a.sizes, reps=a.reps)
    text = bench_csv(rows)
    out.write(text)
    if a.out:
        a.out.parent.mkdir(parents=True, exist_ok=True)
        a.out.write_text(text, encoding="utf-8")
        from .plotting import bench_plot
        bench_plot(rows, a.out.with_suffix(".png"))
    return 0


COMMANDS = {
    "param-count": cmd_param_count,
    "grad-check": cmd_grad_check,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "dump-attention": cmd_dump_attention,
    "bench": cmd_bench,
}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        err.write(f"{e}\n")
        return 1
    except SystemExit as e:  # --help
        return 0 if not e.code else 1
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=err)
    try:
        return COMMANDS[args.command](args, out)
    except RUNTIME_ERRORS as e:
        err.write(f"error: {e}\n")
        return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
