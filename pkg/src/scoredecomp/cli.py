"""Command-line interface.

Exit codes: 0 on success, 2 for invalid input or configuration, 3 when the
data are degenerate (a single outcome class).  Every command is
deterministic given its flags; CSV numbers use the shortest decimal string
that round-trips to the same double.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from scoredecomp.errors import DegenerateDataError, InputError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE = 3

LOSS_CHOICES = ("brier", "logloss", "both")
CALIBRATOR_CHOICES = ("isotonic", "platt", "spline", "binned")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    return repr(float(x))


def rows_to_csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def read_score_file(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Parse a ``score,outcome[,oracle_q]`` CSV.

    Raises
    ------
    InputError
        On a wrong header, malformed row or out-of-range value; the message
        names the offending line.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header not in (["score", "outcome"], ["score", "outcome", "oracle_q"]):
        raise InputError(f"{path}:1: header must be score,outcome or score,outcome,oracle_q")
    width = len(header)
    scores, outcomes, oracle = [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != width:
            raise InputError(f"{path}:{lineno}: expected {width} fields, got {len(rec)}")
        try:
            s = float(rec[0])
            y = float(rec[1])
            q = float(rec[2]) if width == 3 else None
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: not a number ({exc})") from exc
        if not 0.0 <= s <= 1.0:
            raise InputError(f"{path}:{lineno}: score {rec[0]!r} outside [0, 1]")
        if y not in (0.0, 1.0):
            raise InputError(f"{path}:{lineno}: outcome {rec[1]!r} must be 0 or 1")
        if q is not None and not 0.0 <= q <= 1.0:
            raise InputError(f"{path}:{lineno}: oracle_q {rec[2]!r} outside [0, 1]")
        scores.append(s)
        outcomes.append(y)
        oracle.append(q)
    if not scores:
        raise InputError(f"{path}: no data rows")
    q_arr = np.array(oracle, dtype=float) if width == 3 else None
    return np.array(scores), np.array(outcomes), q_arr


def write_score_file(path, scores, outcomes, oracle_q=None) -> None:
    cols = ["score", "outcome"] + (["oracle_q"] if oracle_q is not None else [])
    rows = []
    for i in range(len(scores)):
        row = {"score": float(scores[i]), "outcome": int(outcomes[i])}
        if oracle_q is not None:
            row["oracle_q"] = float(oracle_q[i])
        rows.append(row)
    Path(path).write_text(rows_to_csv(cols, rows))


# --------------------------------------------------------------------------
# configuration


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError("config file must hold a JSON object")
    return doc


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Defaults, then the config file, then explicit flags, field by field."""
    cfg = dict(defaults)
    file_cfg = _load_config(args.config)
    unknown = sorted(set(file_cfg) - set(defaults))
    if unknown:
        raise InputError(f"unknown config keys: {unknown}")
    cfg.update(file_cfg)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _losses(value) -> tuple[str, ...]:
    from scoredecomp.losses import parse_losses

    if isinstance(value, (list, tuple)):
        return tuple(value)
    try:
        return tuple(loss.name for loss in parse_losses(value))
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise InputError(message)


def _emit(args, files: dict[str, str], stdout_name: str | None = None) -> None:
    """Write outputs under ``--out`` or, without it, print the main one."""
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            (out / name).write_text(text)
    if stdout_name is not None and (args.out is None or args.verbose):
        sys.stdout.write(files[stdout_name])


# --------------------------------------------------------------------------
# commands

DECOMPOSE_DEFAULTS = {"seed": 0, "loss": "both", "calibrator": "isotonic", "folds": 5,
                      "exact": False, "bins": 10}


def cmd_decompose(args) -> int:
    from scoredecomp.decomp_est import (
        ScoredSample,
        crossfit_predictions,
        decompose_sample,
        diagram_to_csv,
        reliability_diagram,
    )
    from scoredecomp.recalib import fit_calibrator

    cfg = resolve(args, DECOMPOSE_DEFAULTS)
    _check(cfg["calibrator"] in CALIBRATOR_CHOICES, "unknown calibrator")
    _check(int(cfg["folds"]) >= 2, "folds must be at least 2")
    _check(int(cfg["bins"]) >= 1, "bins must be at least 1")
    scores, outcomes, oracle = read_score_file(args.score_file)
    if np.all(outcomes == outcomes[0]):
        raise DegenerateDataError("score file has a single outcome class")
    sample = ScoredSample(scores, outcomes, oracle)
    if cfg["exact"]:
        c_hat = fit_calibrator("exact", scores, outcomes)
        how = "exact in-sample conditional means"
    else:
        c_hat = crossfit_predictions(scores, outcomes, cfg["calibrator"], int(cfg["folds"]),
                                     int(cfg["seed"]))
        how = f"{cfg['calibrator']}, {int(cfg['folds'])}-fold cross-fitted"
    meta = {"calibration_map": how, "seed": int(cfg["seed"]), "source": str(args.score_file)}
    report = decompose_sample(sample, c_hat, _losses(cfg["loss"]), meta)
    diagram = reliability_diagram(sample, min(int(cfg["bins"]), len(sample)))
    _emit(args, {"report.json": report.to_json(), "diagram.csv": diagram_to_csv(diagram)},
          "report.json")
    return EXIT_OK


SYNTH_DEFAULTS = {"seed": 0, "loss": "both", "calibrator": "isotonic", "folds": 5,
                  "rhos": None, "n": 10_000, "surface": "main", "levels": 8}


def cmd_synth(args) -> int:
    from scoredecomp.stats_infer import parallel_map
    from scoredecomp.synthgen import SURFACES, SweepConfig, sweep_cell, sweep_columns

    cfg = resolve(args, SYNTH_DEFAULTS)
    rhos = cfg["rhos"] if cfg["rhos"] is not None else SweepConfig().rhos
    _check(isinstance(rhos, (list, tuple)) and len(rhos) > 0, "rhos must be a nonempty list")
    _check(all(isinstance(r, (int, float)) and -1 < r < 1 for r in rhos),
           "every rho must lie in (-1, 1)")
    _check(int(cfg["n"]) >= 10, "n must be at least 10")
    _check(cfg["surface"] in SURFACES, f"surface must be one of {SURFACES}")
    _check(int(cfg["levels"]) >= 2, "levels must be at least 2")
    _check(cfg["calibrator"] in CALIBRATOR_CHOICES, "unknown calibrator")
    _check(int(cfg["folds"]) >= 2, "folds must be at least 2")
    losses = _losses(cfg["loss"])
    sweep = SweepConfig(rhos=tuple(float(r) for r in rhos), n=int(cfg["n"]),
                        seed=int(cfg["seed"]), surface=cfg["surface"],
                        calibrator=cfg["calibrator"], losses=losses, folds=int(cfg["folds"]),
                        levels=int(cfg["levels"]))
    cells = parallel_map(lambda r: sweep_cell(r, sweep), sweep.rhos)
    rows = [row for cell in cells for row in cell]
    _emit(args, {"synth.csv": rows_to_csv(sweep_columns(losses), rows)}, "synth.csv")
    return EXIT_OK


def counterexample_table() -> list[tuple[str, float]]:
    from scoredecomp.decomp_est import enumerate_population, reliability_hat
    from scoredecomp.finite_world import conditional_law, counterexample_average
    from scoredecomp.losses import BRIER
    from scoredecomp.recalib import fit_calibrator

    ex = counterexample_average()
    lines = []
    for name in ("S1", "S2", "Sbar"):
        sample = enumerate_population(ex.space, ex.predictors[name])
        c = fit_calibrator("exact", sample.scores, sample.outcomes, weights=sample.weights)
        label = "average" if name == "Sbar" else name
        lines.append((f"{label} brier_reliability", reliability_hat(BRIER, sample, c)))
    law = conditional_law(ex.space, ex.partitions["Sbar"]).at_atoms()[:, 1]
    for value in np.unique(ex.average).tolist():
        cond = float(law[ex.average == value][0])
        lines.append((f"E[Y|Sbar={value!r}]", cond))
    return lines


def cmd_counterexample(args) -> int:
    out = "".join(f"{label} = {value!r}\n" for label, value in counterexample_table())
    _emit(args, {"counterexample.txt": out}, "counterexample.txt")
    return EXIT_OK


BOOST_DEFAULTS = {"seed": 0, "depth": 3, "atoms": 8, "trivial": False}
BOOST_COLUMNS = ["stage", "n_blocks", "brier_risk", "gain", "logloss_risk", "logloss_gain",
                 "mutual_info"]


def cmd_boost(args) -> int:
    from dataclasses import asdict

    from scoredecomp.synthgen import boosting_demo

    cfg = resolve(args, BOOST_DEFAULTS)
    _check(int(cfg["depth"]) >= 1, "depth must be at least 1")
    _check(int(cfg["atoms"]) >= 2, "atoms must be at least 2")
    rows = boosting_demo(int(cfg["atoms"]), int(cfg["depth"]), int(cfg["seed"]),
                         bool(cfg["trivial"]))
    _emit(args, {"boost.csv": rows_to_csv(BOOST_COLUMNS, [asdict(r) for r in rows])},
          "boost.csv")
    return EXIT_OK


ROBUSTNESS_DEFAULTS = {"seed": 0, "loss": "both", "calibrator": "isotonic", "replicates": 20,
                       "n": 2000, "rho": 0.0, "surface": "main",
                       "methods": ["average", "stacking"], "reference": "average",
                       "table": None}


def cmd_robustness(args) -> int:
    from scoredecomp.stats_infer import (
        METHODS,
        PipelineSpec,
        ReplicateTable,
        comparison_to_csv,
        paired_comparison,
        repeated_splits,
    )

    cfg = resolve(args, ROBUSTNESS_DEFAULTS)
    if cfg["table"] is not None:
        try:
            table = ReplicateTable.from_csv(Path(cfg["table"]).read_text())
        except (OSError, ValueError, StopIteration, IndexError) as exc:
            raise InputError(f"cannot read replicate table {cfg['table']}: {exc}") from exc
    else:
        methods = cfg["methods"]
        if isinstance(methods, str):
            methods = [m for m in methods.split(",") if m]
        _check(all(m in METHODS for m in methods), f"methods must be among {METHODS}")
        _check(cfg["reference"] in methods, "reference must be one of the methods")
        _check(int(cfg["replicates"]) >= 1, "replicates must be at least 1")
        _check(cfg["calibrator"] in CALIBRATOR_CHOICES, "unknown calibrator")
        _check(-1 < float(cfg["rho"]) < 1, "rho must lie in (-1, 1)")
        _check(int(cfg["n"]) >= 30, "n must be at least 30")
        spec = PipelineSpec(rho=float(cfg["rho"]), n=int(cfg["n"]), surface=cfg["surface"],
                            calibrator=cfg["calibrator"], losses=_losses(cfg["loss"]))
        table = repeated_splits(spec, int(cfg["replicates"]), int(cfg["seed"]), methods)
    _check(cfg["reference"] in table.methods, "reference missing from the table")
    try:
        comparison = paired_comparison(table, cfg["reference"])
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    _emit(args, {
        "replicates.csv": table.to_csv(),
        "comparison.csv": comparison_to_csv(comparison),
        "summary.json": dumps({"reference": cfg["reference"], "methods": table.summary(),
                               "wilcoxon": {"alternative": "method < reference",
                                            "zero_handling": "dropped",
                                            "exact_max_n": 20}}),
    }, "comparison.csv")
    return EXIT_OK


IDENTITIES_DEFAULTS = {"seed": 0, "n_spaces": 100, "max_atoms": 12}


def cmd_identities(args) -> int:
    from scoredecomp.finite_world import identity_suite

    cfg = resolve(args, IDENTITIES_DEFAULTS)
    _check(int(cfg["n_spaces"]) >= 1, "n_spaces must be at least 1")
    _check(int(cfg["max_atoms"]) >= 2, "max_atoms must be at least 2")
    worst = identity_suite(int(cfg["n_spaces"]), int(cfg["seed"]), int(cfg["max_atoms"]))
    _emit(args, {"identities.json": dumps({"max_abs_residual": worst,
                                           "n_spaces": int(cfg["n_spaces"])})},
          "identities.json")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON file; flags override its fields")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--verbose", action="store_true", help="also print to stdout with --out")
    return p


def _calibration_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--loss", choices=LOSS_CHOICES, default=None)
    p.add_argument("--calibrator", choices=CALIBRATOR_CHOICES, default=None)
    p.add_argument("--folds", type=int, default=None, metavar="K")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scoredecomp",
                                     description="Proper-loss decompositions of probabilistic scores.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("decompose", parents=[common], help="decompose a score file")
    p.add_argument("score_file")
    _calibration_flags(p)
    p.add_argument("--exact", action="store_const", const=True, default=None,
                   help="use in-sample conditional means as the calibration map")
    p.add_argument("--bins", type=int, default=None)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", parents=[common], help="rho sweep on the synthetic process")
    _calibration_flags(p)
    p.add_argument("--rhos", type=lambda s: [float(v) for v in s.split(",")], default=None,
                   help="comma-separated list")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--surface", default=None)
    p.add_argument("--levels", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("counterexample", parents=[common], help="averaging counterexample")
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("boost", parents=[common], help="telescoping table on a filtration")
    p.add_argument("--depth", type=int, default=None, metavar="T")
    p.add_argument("--atoms", type=int, default=None)
    p.add_argument("--trivial", action="store_const", const=True, default=None)
    p.set_defaults(func=cmd_boost)

    p = sub.add_parser("robustness", parents=[common], help="repeated splits and paired tests")
    _calibration_flags(p)
    p.add_argument("--replicates", type=int, default=None, metavar="R")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--surface", default=None)
    p.add_argument("--methods", default=None, help="comma-separated")
    p.add_argument("--reference", default=None)
    p.add_argument("--table", default=None, help="existing replicate CSV to compare")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("identities", parents=[common], help="finite-space identity suite")
    p.add_argument("--n-spaces", dest="n_spaces", type=int, default=None)
    p.add_argument("--max-atoms", dest="max_atoms", type=int, default=None)
    p.set_defaults(func=cmd_identities)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
