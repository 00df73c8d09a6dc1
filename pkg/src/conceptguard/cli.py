"""Command-line front end.

Subcommands share one YAML experiment config (``--config``) with dotted
overrides (``--partial attack.budgets=[1,2]``).  Artifacts live in one
output directory: ``--out``, else ``output`` in the config, else the
``CONCEPTGUARD_OUT`` environment variable, else ``./runs``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config, output_dir
from .evaluation import (
    BoundDomainError,
    BoundInputs,
    PipelineConfig,
    concept_accuracy_vs_bound,
    lemma2_lower_bound,
    mean_by_setting,
    run_experiment,
    sweep_and_ablation,
    theorem1_bound,
    theorem2_bound,
)
from .graph import FactorGraph, binarize, build_graph
from .rules import (
    CATEGORY_CONCEPT,
    CONCEPT_CONCEPT,
    RuleError,
    RuleSchema,
    format_rules,
    parse_rules,
    validate_rules,
)
from .synth import (
    InfeasibleSchemaError,
    derive_rules,
    gen_dataset,
    read_instances,
    signatures_from_json,
    signatures_to_json,
    write_instances,
)
from .weights import MLE, MissingConfidenceError, WeightConfig, mle_fit, prior_weights, read_weights, write_weights

logger = logging.getLogger("conceptguard")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

REPORT_COLUMNS = [
    "run",
    "B (ε-analogue)",
    "count",
    "flagged",
    "passed",
    "zero_flip",
    "LSM_before",
    "LSM",
    "IR",
    "SR",
    "E-ACC_before",
    "E-ACC",
    "P-ACC_before",
    "P-ACC",
]


class Timer:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.phases: list[tuple[str, float]] = []

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases.append((name, time.perf_counter() - t0))

    def report(self):
        if self.enabled:
            for name, secs in self.phases:
                print(f"timing {name}: {secs:.3f}s", file=sys.stderr)


# ---------------------------------------------------------------------------
# artifact helpers

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} does not exist; {hint}")
    return path


def _schema(cfg: dict) -> RuleSchema:
    return RuleSchema(cfg["schema"]["M"], cfg["schema"]["K"])


def _load_rules(cfg: dict, out: Path):
    path = Path(cfg["rules"]["path"]) if cfg["rules"]["path"] else _need(out / "rules.rules", "run `gen` first")
    rules = parse_rules(path.read_text())
    return validate_rules(rules, _schema(cfg), dedupe=bool(cfg["rules"]["dedupe"]))


def _load_data(out: Path):
    sigs = signatures_from_json(json.loads(_need(out / "signatures.json", "run `gen` first").read_text()))
    instances = read_instances(_need(out / "instances.jsonl", "run `gen` first"))
    return sigs, instances


def _weights(cfg: dict, rules, out: Path) -> np.ndarray:
    if cfg["weights"]["mode"] == MLE:
        path = Path(cfg["weights"]["path"]) if cfg["weights"]["path"] else out / "weights.txt"
        return read_weights(_need(path, "run `learn-weights` first"), len(rules))
    return prior_weights(rules)


def _graph(cfg: dict, out: Path) -> FactorGraph:
    rules = _load_rules(cfg, out)
    return build_graph(rules, _schema(cfg), _weights(cfg, rules, out))


def _pipeline(cfg: dict, repair: bool = True) -> PipelineConfig:
    return PipelineConfig(
        threshold=float(cfg["identify"]["threshold"]),
        mode=cfg["identify"]["mode"],
        max_passes=int(cfg["repair"]["max_passes"]),
        repair=bool(cfg["repair"]["enabled"]) and repair,
    )


def _report_row(rep) -> list:
    return [
        rep.run, rep.budget, rep.count, rep.flagged, rep.passed, rep.zero_flip,
        rep.lsm_before, rep.lsm, rep.ir, rep.sr,
        rep.e_acc_before, rep.e_acc, rep.p_acc_before, rep.p_acc,
    ]


def _instance_record(r) -> dict:
    return {
        "index": r.index,
        "flagged": r.flagged,
        "achieved_flips": r.achieved_flips,
        "flips": r.flips,
        "gains": r.gains,
        "s_before": r.s_before,
        "s_after": r.s_after,
        "lsm_before": r.lsm_before,
        "lsm_after": r.lsm_after,
        "predicted_after": r.predicted_after,
    }


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(cfg: dict, out: Path, args, timer: Timer) -> int:
    s, d, r = cfg["schema"], cfg["dataset"], cfg["rules"]
    with timer.phase("generate"):
        sigs, instances = gen_dataset(
            s["K"], s["M"], s["k"], d["n_samples"], int(d["seed"]), float(d["noise"]), int(s["min_distance"])
        )
        if r["path"]:
            rules = validate_rules(parse_rules(Path(r["path"]).read_text()), _schema(cfg), dedupe=bool(r["dedupe"]))
        else:
            rules = derive_rules(sigs, s["M"], float(r["omission_rate"]), int(r["seed"]))
    with timer.phase("write"):
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "signatures.json", signatures_to_json(sigs))
        write_instances(out / "instances.jsonl", instances)
        (out / "rules.rules").write_text(format_rules(rules))
    n_cat = sum(rule.family == CATEGORY_CONCEPT for rule in rules)
    n_con = sum(rule.family == CONCEPT_CONCEPT for rule in rules)
    print(
        f"concepts: {s['M']}  categories: {s['K']}  category-concept rules: {n_cat}  "
        f"concept-concept rules: {n_con}  factors: {len(rules)}  instances: {len(instances)}"
    )
    return EXIT_OK


def cmd_learn_weights(cfg: dict, out: Path, args, timer: Timer) -> int:
    with timer.phase("load"):
        rules = _load_rules(cfg, out)
        _, instances = _load_data(out)
        schema = _schema(cfg)
        graph = build_graph(rules, schema, np.ones(len(rules)))
        data = [binarize(i.activation, i.predicted_category, schema.num_categories) for i in instances]
    wc = cfg["weights"]
    config = WeightConfig(
        mode=MLE,
        learning_rate=float(wc["learning_rate"]),
        epochs=int(wc["epochs"]),
        w_min=float(wc["w_min"]),
        w_max=float(wc["w_max"]),
        init=float(wc["init"]),
    )
    history: list[float] = []
    with timer.phase("fit"):
        w = mle_fit(graph, data, config, history)
    out.mkdir(parents=True, exist_ok=True)
    write_weights(out / "weights.txt", w)
    print(f"weights: {len(w)}  final nll: {min(history):.6f}  epochs run: {len(history) - 1}")
    return EXIT_OK


def cmd_run(cfg: dict, out: Path, args, timer: Timer) -> int:
    with timer.phase("load"):
        graph = _graph(cfg, out)
        sigs, instances = _load_data(out)
    budgets = [] if args.clean_only else list(cfg["attack"]["budgets"])
    a = cfg["attack"]
    with timer.phase("pipeline"):
        res = run_experiment(
            graph, sigs, instances, budgets,
            kind=a["kind"], gamma=float(a["gamma"]), attack_seed=int(a["seed"]),
            config=_pipeline(cfg, repair=not args.no_repair), workers=args.workers,
        )
    with timer.phase("write"):
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "report.csv", REPORT_COLUMNS, [_report_row(r) for r in res.reports])
        _write_json(
            out / "report.json",
            {
                "config": cfg,
                "rows": [r.as_row() for r in res.reports],
                "instances": {k: [_instance_record(r) for r in v] for k, v in res.instances.items()},
            },
        )
        for key, results in res.instances.items():
            if key == "clean":
                continue
            attacked = [r.attacked_instance(instances[r.index]) for r in results]
            write_instances(out / f"attacked_B{key.split('=')[1]}.jsonl", attacked)
    for name, secs in res.timings.items():
        timer.phases.append((f"pipeline[{name}]", secs))
    for rep in res.reports:
        label = "clean" if rep.budget is None else f"B={rep.budget}"
        ir = "-" if rep.ir is None else f"{rep.ir:.1f}"
        sr = "-" if rep.sr is None else f"{rep.sr:.1f}"
        print(f"{label:>6}  LSM {rep.lsm:6.2f}  IR {ir:>5}  SR {sr:>5}  E-ACC {rep.e_acc:6.2f}  P-ACC {rep.p_acc:6.2f}")
    return EXIT_OK


def _explicit_bounds(path: Path) -> dict:
    """Bounds from a JSON file: {"concepts": [{"inputs": {...}, "taus": [...]}, ...]}."""
    data = json.loads(path.read_text())
    lows, taus, rows = [], [], []
    for j, entry in enumerate(data["concepts"]):
        b = BoundInputs(**entry["inputs"])
        low = lemma2_lower_bound(b)
        lows.append(low)
        taus.append([float(t) for t in entry.get("taus", [])])
        rows.append({"concept": j, "lemma2": low})
    return {"concepts": rows, "theorem1": theorem1_bound(lows, taus)}


def cmd_bounds(cfg: dict, out: Path, args, timer: Timer) -> int:
    bc = cfg["bounds"]
    out.mkdir(parents=True, exist_ok=True)
    if args.inputs:
        result = _explicit_bounds(_need(Path(args.inputs), "pass an existing bound-inputs file"))
        _write_json(out / "bounds.json", result)
        print(f"theorem-1 bound: {result['theorem1']:.6f}")
        return EXIT_OK
    with timer.phase("load"):
        graph = _graph(cfg, out)
        sigs, instances = _load_data(out)
    a = cfg["attack"]
    with timer.phase("pipeline"):
        res = run_experiment(
            graph, sigs, instances, [int(bc["budget"])],
            kind=a["kind"], gamma=float(a["gamma"]), attack_seed=int(a["seed"]),
            config=_pipeline(cfg), include_clean=False, workers=args.workers,
        )
        results = res.instances[f"B={int(bc['budget'])}"]
        attacked = [r.attacked_instance(instances[r.index]) for r in results]
        rows = concept_accuracy_vs_bound(graph, attacked, results)
    slack = float(bc["slack"])
    for row in rows:
        row["meets_bound"] = row["accuracy"] >= row["bound"] - slack
    header = ["concept", "n_factors", "theta_t", "theta_f", "assumption_holds", "bound", "accuracy", "meets_bound"]
    _write_csv(out / "bounds.csv", header, [[row[h] for h in header] for row in rows])

    supported = [row for row in rows if row["n_factors"]]
    th_t = float(np.mean([row["theta_t"] for row in supported])) if supported else 0.0
    th_f = float(np.mean([row["theta_f"] for row in supported])) if supported else 0.0
    sweep = [[n, theorem2_bound(n, th_t, th_f), th_t > th_f] for n in range(int(bc["n_max"]) + 1)]
    _write_csv(out / "bounds_sweep.csv", ["N", "bound", "assumption_holds"], sweep)
    _write_json(out / "bounds.json", {"concepts": rows, "theta_t": th_t, "theta_f": th_f})
    met = sum(row["meets_bound"] for row in rows)
    print(f"concepts meeting bound: {met}/{len(rows)}  mean theta_t: {th_t:.4f}  mean theta_f: {th_f:.4f}")
    return EXIT_OK


def cmd_sweep(cfg: dict, out: Path, args, timer: Timer) -> int:
    with timer.phase("load"):
        graph = _graph(cfg, out)
        sigs, instances = _load_data(out)
    e, a = cfg["eval"], cfg["attack"]
    with timer.phase("sweep"):
        rows = sweep_and_ablation(
            graph, sigs, instances,
            ratios=[float(r) for r in e["ratios"]], families=list(e["families"]),
            budget=int(e["budget"]), kind=a["kind"], gamma=float(a["gamma"]), attack_seed=int(a["seed"]),
            repeats=int(e["repeats"]), seed=int(e["seed"]), config=_pipeline(cfg), workers=args.workers,
        )
    out.mkdir(parents=True, exist_ok=True)
    header = ["sweep", "setting", "repeat", "n_factors"] + REPORT_COLUMNS
    _write_csv(
        out / "sweep.csv", header,
        [[r.kind, r.setting, r.repeat, r.n_factors] + _report_row(r.report) for r in rows],
    )
    for kind in ("ratio", "family"):
        lsm = mean_by_setting(rows, kind, "lsm")
        eacc = mean_by_setting(rows, kind, "e_acc")
        for setting in lsm:
            print(f"{kind:>6} {setting:>8}  LSM {lsm[setting]:6.2f}  E-ACC {eacc[setting]:6.2f}")
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "learn-weights": cmd_learn_weights,
    "run": cmd_run,
    "bounds": cmd_bounds,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument(
        "--partial", action="append", default=[], metavar="KEY=VALUE",
        help="override a config entry, e.g. attack.budgets=[1,2] (repeatable)",
    )
    common.add_argument("--out", help="output directory (default: $CONCEPTGUARD_OUT or ./runs)")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallel worker processes")
    common.add_argument("--timing", action="store_true", help="print per-phase durations to stderr")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="conceptguard", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate signatures, dataset and rules")
    sub.add_parser("learn-weights", parents=[common], help="fit factor weights by maximum likelihood")
    run = sub.add_parser("run", parents=[common], help="attack, identify, repair and report metrics")
    run.add_argument("--no-repair", action="store_true", help="identify only; report the unrepaired baseline")
    run.add_argument("--clean-only", action="store_true", help="skip attacked budgets")
    bounds = sub.add_parser("bounds", parents=[common], help="accuracy bounds and their empirical check")
    bounds.add_argument("--inputs", help="JSON file with explicit bound inputs per concept")
    sub.add_parser("sweep", parents=[common], help="subgraph-ratio sweep and rule-family ablation")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    timer = Timer(args.timing)
    try:
        cfg = load_config(args.config, args.partial)
        out = output_dir(cfg, args.out)
        code = COMMANDS[args.command](cfg, out, args, timer)
    except (ConfigError, RuleError, InfeasibleSchemaError, MissingConfidenceError, BoundDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level guard maps to the runtime exit code
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    timer.report()
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
