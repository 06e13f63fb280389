"""Command-line interface.

::

    nesy-shortcuts analyze TASK [--csv]
    nesy-shortcuts verify TASK [--limit N]
    nesy-shortcuts train TASK --out DIR [--seeds N] [--seed-base S] [--rec] [--sup]
                         [--lr F] [--epochs N] [--hidden N] [--jobs N]
    nesy-shortcuts report DIR [--out FILE]
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .combinatorics import (
    count_regime,
    count_report,
    identity,
    is_ground_truth,
    iter_detopts,
    regime_name,
)
from .knowledge import KnowledgeError, Task, load_task
from .trainer import NoPins, NonFinite, RunReport, TrainConfig, pins_digest, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISMATCH = 2

_REGIME_DIRS = {"L": "L", "L+R": "LR", "L+C": "LC", "L+R+C": "LRC"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# analyze / verify


def cmd_analyze(task_path: str, as_csv: bool = False, out=None) -> int:
    out = out or sys.stdout
    try:
        task = load_task(task_path)
    except (KnowledgeError, OSError) as e:
        _err(str(e))
        return EXIT_ERROR
    report = count_report(task)
    out.write(report.to_csv() if as_csv else report.to_table())
    return EXIT_OK


def verify_task(task: Task, limit: int) -> list[tuple[str, str, int, int | None]]:
    """Check enumeration against the closed forms for every regime.

    Returns ``(regime, status, closed_form, enumerated)`` tuples where status
    is ``PASS``, ``FAIL`` or ``SKIPPED``.
    """
    results = []
    ident = identity(task.k).mapping
    for injective in (False, True):
        for respect_pins in (False, True):
            name = regime_name(injective, respect_pins)
            expected = count_regime(task, injective, respect_pins)
            if expected > limit:
                results.append((name, "SKIPPED", expected, None))
                continue
            n = 0
            seen_identity = False
            for d in iter_detopts(task, injective, respect_pins):
                n += 1
                seen_identity = seen_identity or d.mapping == ident
            ok = n == expected and seen_identity
            results.append((name, "PASS" if ok else "FAIL", expected, n))
    return sorted(results, key=lambda r: ("L", "L+R", "L+C", "L+R+C").index(r[0]))


def cmd_verify(task_path: str, limit: int = 10**6, out=None) -> int:
    out = out or sys.stdout
    try:
        task = load_task(task_path)
    except (KnowledgeError, OSError) as e:
        _err(str(e))
        return EXIT_ERROR
    failed = False
    for name, status, expected, n in verify_task(task, limit):
        if status == "SKIPPED":
            out.write(f"{name:<6} SKIPPED(LimitExceeded) closed_form={expected} limit={limit}\n")
        else:
            out.write(f"{name:<6} {status} enumerated={n} closed_form={expected}\n")
            failed |= status == "FAIL"
    return EXIT_MISMATCH if failed else EXIT_OK


# ---------------------------------------------------------------------------
# train


@dataclass
class SweepSummary:
    task: str
    regime: str
    lambda_rec: float
    lambda_concept: float
    pins: str
    theoretical_count: int
    digests: list[str] = field(default_factory=list)
    n_runs: int = 0
    n_optimal: int = 0
    n_rs: int = 0
    n_ground_truth: int = 0
    n_nonfinite: int = 0

    def add(self, report: RunReport | None, seed: int, failure: str = "") -> None:
        self.n_runs += 1
        if report is None:
            self.n_nonfinite += 1
            self.digests.append(f"seed={seed} status={failure}")
            return
        if report.optimal:
            self.n_optimal += 1
            if is_ground_truth(report.extracted):
                self.n_ground_truth += 1
            else:
                self.n_rs += 1
        self.digests.append(
            f"seed={seed} status=ok optimal={str(report.optimal).lower()} "
            + report.summary_line()
        )

    def render(self) -> str:
        lines = [
            f"task={self.task} regime={self.regime} lambda_rec={self.lambda_rec!r} "
            f"lambda_concept={self.lambda_concept!r} pins={self.pins}",
            *self.digests,
            f"runs={self.n_runs} optimal={self.n_optimal} rs={self.n_rs} "
            f"ground_truth={self.n_ground_truth} nonfinite={self.n_nonfinite} "
            f"theoretical_det_opts={self.theoretical_count}",
        ]
        return "\n".join(lines) + "\n"


def _run_one(task: Task, cfg: TrainConfig) -> tuple[RunReport | None, str]:
    try:
        return train(task, cfg), ""
    except NonFinite as e:
        return None, f"nonfinite@{e.epoch}"


def _failure_row(task: Task, cfg: TrainConfig, status: str, count: int) -> dict[str, str]:
    row = dict.fromkeys(RunReport.columns(), "")
    row.update(
        regime=cfg.regime,
        seed=str(cfg.seed),
        status=status,
        lambda_rec=repr(cfg.lambda_rec),
        lambda_concept=repr(cfg.lambda_concept),
        pins_digest=pins_digest(task),
        learning_rate=repr(cfg.learning_rate),
        epochs=str(cfg.epochs),
        hidden=str(cfg.hidden),
        theoretical_count=str(count),
    )
    return row


def run_sweep(
    task: Task,
    task_name: str,
    out_dir: str | Path,
    seeds: int,
    seed_base: int = 0,
    rec: bool = False,
    sup: bool = False,
    learning_rate: float = 0.1,
    epochs: int = 5000,
    hidden: int = 32,
    jobs: int = 1,
) -> SweepSummary:
    if seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    if sup and not task.pinned:
        raise NoPins("--sup needs 'pin' lines in the task file")
    configs = [
        TrainConfig(
            seed=seed_base + i,
            learning_rate=learning_rate,
            epochs=epochs,
            hidden=hidden,
            lambda_rec=1.0 if rec else 0.0,
            lambda_concept=1.0 if sup else 0.0,
        )
        for i in range(seeds)
    ]
    regime = configs[0].regime
    count = count_regime(task, injective=rec, respect_pins=sup)
    if jobs == 1:
        results = [_run_one(task, cfg) for cfg in configs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, [task] * len(configs), configs))

    summary = SweepSummary(
        task=task_name,
        regime=regime,
        lambda_rec=configs[0].lambda_rec,
        lambda_concept=configs[0].lambda_concept,
        pins=pins_digest(task),
        theoretical_count=count,
    )
    base = Path(out_dir) / _REGIME_DIRS[regime]
    for cfg, (report, failure) in zip(configs, results):
        bundle = base / f"seed_{cfg.seed:04d}"
        if report is None:
            bundle.mkdir(parents=True, exist_ok=True)
            text = _rows_csv([_failure_row(task, cfg, failure, count)])
            (bundle / "run.csv").write_text(text, encoding="utf-8", newline="")
        else:
            report.write(bundle)
        summary.add(report, cfg.seed, failure)
    (base / "sweep.txt").write_text(summary.render(), encoding="utf-8", newline="")
    return summary


def cmd_train(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    try:
        task = load_task(args.task)
        summary = run_sweep(
            task,
            task_name=Path(args.task).name,
            out_dir=args.out,
            seeds=args.seeds,
            seed_base=args.seed_base,
            rec=args.rec,
            sup=args.sup,
            learning_rate=args.lr,
            epochs=args.epochs,
            hidden=args.hidden,
            jobs=args.jobs,
        )
    except (KnowledgeError, OSError, UsageError, NoPins, ValueError) as e:
        _err(str(e))
        return EXIT_ERROR
    out.write(summary.render())
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _rows_csv(rows: list[dict[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RunReport.columns(), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def collect_runs(directory: str | Path) -> list[dict[str, str]]:
    rows = []
    for path in sorted(Path(directory).rglob("run.csv")):
        with open(path, newline="", encoding="utf-8") as fh:
            rows.extend(csv.DictReader(fh))
    rows.sort(key=lambda r: (r["regime"], r["pins_digest"], int(r["seed"])))
    return rows


def summarize_runs(rows: list[dict[str, str]]) -> str:
    groups: dict[tuple[str, str], list[dict[str, str]]] = {}
    for r in rows:
        groups.setdefault((r["regime"], r["pins_digest"]), []).append(r)
    lines = ["regime,pins_digest,runs,optimal,rs,ground_truth,nonfinite,theoretical_count"]
    for (regime, digest), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        optimal = [r for r in ok if r["optimal"] == "true"]
        n_rs = sum(r["rs"] == "true" for r in optimal)
        counts = sorted({r["theoretical_count"] for r in rs})
        lines.append(
            f"{regime},{digest},{len(rs)},{len(optimal)},{n_rs},{len(optimal) - n_rs},"
            f"{len(rs) - len(ok)},{'|'.join(counts)}"
        )
    return "\n".join(lines) + "\n"


def cmd_report(directory: str, out_file: str | None = None, out=None) -> int:
    out = out or sys.stdout
    if not Path(directory).is_dir():
        _err(f"{directory}: not a directory")
        return EXIT_ERROR
    rows = collect_runs(directory)
    if not rows:
        _err(f"no run bundles found under {directory}")
        return EXIT_ERROR
    merged = _rows_csv(rows)
    summary = summarize_runs(rows)
    if out_file:
        try:
            Path(out_file).write_text(merged, encoding="utf-8", newline="")
        except OSError as e:
            _err(str(e))
            return EXIT_ERROR
    else:
        out.write(merged)
        out.write("\n")
    out.write(summary)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nesy-shortcuts", description="Count and reproduce reasoning shortcuts.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="closed-form det-opt counts for a task file")
    a.add_argument("task")
    a.add_argument("--csv", action="store_true", help="emit CSV instead of a table")

    v = sub.add_parser("verify", help="check closed forms against brute-force enumeration")
    v.add_argument("task")
    v.add_argument("--limit", type=int, default=10**6)

    t = sub.add_parser("train", help="seeded training sweep")
    t.add_argument("task")
    t.add_argument("--out", required=True)
    t.add_argument("--seeds", type=int, default=20)
    t.add_argument("--seed-base", type=int, default=0)
    t.add_argument("--rec", action="store_true", help="add the reconstruction term")
    t.add_argument("--sup", action="store_true", help="add concept supervision on pinned vectors")
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--epochs", type=int, default=5000)
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--jobs", type=int, default=1)

    r = sub.add_parser("report", help="merge run bundles under a directory")
    r.add_argument("dir")
    r.add_argument("--out", help="write the merged CSV here instead of stdout")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "analyze":
        return cmd_analyze(args.task, args.csv)
    if args.command == "verify":
        return cmd_verify(args.task, args.limit)
    if args.command == "train":
        return cmd_train(args)
    return cmd_report(args.dir, args.out)


def entry() -> None:
    sys.exit(main())
