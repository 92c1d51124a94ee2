"""Command-line front end.

Subcommands: extract, table-one, train-eval, synth, version. Options come from
a flat key=value config file plus a few overriding flags; every command is
deterministic given the same config and seed, and only writes under --out.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 degenerate
statistics.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__, ecg_ingest, synth
from .cohort import ModelSpec, load_cohort, save_cohort, summarize_table_one
from .errors import ConfigError, DataFormatError, DegenerateStatsError, TriageError
from .geh import compute_geh
from .pipeline import EvalReport, ExperimentConfig, evaluate_model, split
from .vcg import baseline_correct, kors_transform

log = logging.getLogger("ecgtriage")


@dataclass(frozen=True)
class RunConfig:
    ecg_dir: Path = Path("ecg")
    fiducial_dir: Path = Path("fiducials")
    cohort_table: Path = Path("cohort.csv")
    out_dir: Path = Path("out")
    master_seed: int = 0
    eta_grid: tuple[float, ...] = (0.01, 0.05, 0.1, 0.2, 0.3)
    k_folds: int = 5
    n_instances: int = 50
    min_sensitivity: float = 0.9
    specs: tuple[str, ...] = ("S", "R", "G", "SRG")
    stratify: bool = True
    holdout_selection: bool = False
    beat_aggregation: str = "median"
    pre_ms: float = 300.0
    post_ms: float = 500.0
    max_rounds: int = 500
    patience: int = 20
    max_depth: int = 6
    min_child_hessian: float = 1.0
    l2_reg: float = 1.0
    gamma: float = 0.0
    split_ratio: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.min_sensitivity <= 1.0:
            raise ConfigError(f"min_sensitivity must be in (0, 1], got {self.min_sensitivity}")
        if self.n_instances < 1:
            raise ConfigError("n_instances must be >= 1")
        if self.beat_aggregation not in ("median", "mean"):
            raise ConfigError("beat_aggregation must be median or mean")
        for label in self.specs:
            if label not in ("S", "R", "G", "SRG"):
                raise ConfigError(f"unknown model spec {label!r}")

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            master_seed=self.master_seed,
            eta_grid=self.eta_grid,
            k_folds=self.k_folds,
            n_instances=self.n_instances,
            min_sensitivity=self.min_sensitivity,
            stratify=self.stratify,
            holdout_selection=self.holdout_selection,
            max_rounds=self.max_rounds,
            patience=self.patience,
            max_depth=self.max_depth,
            min_child_hessian=self.min_child_hessian,
            l2_reg=self.l2_reg,
            gamma=self.gamma,
            split_ratio=self.split_ratio,
        )


_BOOL_KEYS = {"stratify", "holdout_selection"}
_INT_KEYS = {"master_seed", "k_folds", "n_instances", "max_rounds", "patience", "max_depth"}
_FLOAT_KEYS = {"min_sensitivity", "pre_ms", "post_ms", "min_child_hessian", "l2_reg",
               "gamma", "split_ratio"}
_PATH_KEYS = {"ecg_dir", "fiducial_dir", "cohort_table", "out_dir"}
_SYNTH_PREFIX = "synth_"


def _parse_bool(value: str, key: str) -> bool:
    if value.lower() in ("1", "true", "yes"):
        return True
    if value.lower() in ("0", "false", "no"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def read_config_file(path) -> dict:
    """Flat key=value text; blank lines and # comments ignored."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def build_run_config(raw: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for key, value in raw.items():
        if key.startswith(_SYNTH_PREFIX):
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            if key in _BOOL_KEYS:
                kwargs[key] = _parse_bool(value, key)
            elif key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key in _PATH_KEYS:
                kwargs[key] = Path(value)
            elif key == "eta_grid":
                kwargs[key] = tuple(float(v) for v in value.split(",") if v)
            elif key == "specs":
                kwargs[key] = tuple(v.strip().upper() for v in value.split(",") if v.strip())
            else:
                kwargs[key] = value
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return RunConfig(**kwargs)


def build_synth_config(raw: dict, master_seed: int) -> synth.SynthConfig:
    known = {f.name for f in dataclasses.fields(synth.SynthConfig)}
    kwargs = {"seed": master_seed}
    for key, value in raw.items():
        if not key.startswith(_SYNTH_PREFIX):
            continue
        name = key[len(_SYNTH_PREFIX):]
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        field_type = {f.name: f.type for f in dataclasses.fields(synth.SynthConfig)}[name]
        try:
            kwargs[name] = int(value) if field_type == "int" else float(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return synth.SynthConfig(**kwargs)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{what} {path} does not exist")
    return path


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: Path, doc) -> None:
    _write_text(path, json.dumps(doc, indent=2) + "\n")


# --- commands ----------------------------------------------------------------

def cmd_extract(cfg: RunConfig) -> int:
    """Per patient: trace + annotations -> median beat -> baseline -> XYZ ->
    features; failures are logged and the row left incomplete, never fatal."""
    _require(cfg.cohort_table, "cohort table")
    _require(cfg.ecg_dir, "ecg directory")
    _require(cfg.fiducial_dir, "fiducial directory")
    cohort = load_cohort(cfg.cohort_table)

    out_rows, log_lines = [], []
    for record in cohort:
        try:
            ecg = ecg_ingest.parse_ecg(_require(cfg.ecg_dir / f"{record.id}.csv", "trace file"))
            fiducials = ecg_ingest.parse_fiducials(
                _require(cfg.fiducial_dir / f"{record.id}.json", "fiducial file"))
            beat = ecg_ingest.median_beat(ecg, fiducials, pre_ms=cfg.pre_ms,
                                          post_ms=cfg.post_ms, statistic=cfg.beat_aggregation)
            corrected = baseline_correct(beat)
            geh = compute_geh(kors_transform(corrected))
            standard = ecg_ingest.standard_measures(corrected)
        except DegenerateStatsError as exc:
            out_rows.append(record)
            log_lines.append(f"{record.id}\tdegenerate\t{exc}")
            continue
        except TriageError as exc:
            out_rows.append(record)
            log_lines.append(f"{record.id}\tfailed\t{exc}")
            continue
        out_rows.append(dataclasses.replace(record, standard=standard, geh=geh))
        note = ",".join(geh.degenerate)
        log_lines.append(f"{record.id}\tok\t{note}")

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    save_cohort(out_rows, cfg.out_dir / "features.csv")
    _write_text(cfg.out_dir / "extract_log.txt", "\n".join(log_lines) + "\n")
    n_failed = sum(1 for line in log_lines if "\tok\t" not in line)
    log.info("extracted %d patients (%d failed) -> %s",
             len(out_rows), n_failed, cfg.out_dir / "features.csv")
    return 0


def cmd_table_one(cfg: RunConfig) -> int:
    _require(cfg.cohort_table, "cohort table")
    doc = summarize_table_one(load_cohort(cfg.cohort_table))
    _write_json(cfg.out_dir / "table_one.json", doc)
    log.info("wrote %s (%d rows)", cfg.out_dir / "table_one.json", len(doc["rows"]))
    return 0


def _report_tables(report: EvalReport, reports_dir: Path):
    label = report.label
    roc = ["fpr,tpr"] + [f"{x!r},{y!r}" for x, y in report.roc_points]
    _write_text(reports_dir / f"roc_{label}.txt", "\n".join(roc) + "\n")
    pr = ["recall,precision"] + [f"{x!r},{y!r}" for x, y in report.pr_points]
    _write_text(reports_dir / f"pr_{label}.txt", "\n".join(pr) + "\n")
    imp = ["name,gain,percent"] + [
        f"{e.name},{e.gain!r},{e.percent!r}" for e in report.importance.entries
    ]
    _write_text(reports_dir / f"importance_{label}.txt", "\n".join(imp) + "\n")


def cmd_train_eval(cfg: RunConfig) -> int:
    """Evaluate every requested feature set over one shared train/test split."""
    _require(cfg.cohort_table, "cohort table")
    cohort = load_cohort(cfg.cohort_table)
    experiment = cfg.experiment()
    plan = split(cohort, experiment.master_seed, ratio=experiment.split_ratio,
                 stratified=experiment.stratify)

    reports_dir = cfg.out_dir / "reports"
    summary_rows = []
    best = None
    for label in cfg.specs:
        report = evaluate_model(ModelSpec(label), cohort, experiment, split_plan=plan)
        _write_json(reports_dir / f"report_{label}.json", report.to_dict())
        _report_tables(report, reports_dir)
        summary_rows.append({
            "model": label,
            "f2": f"{report.f2:.2f}",
            "auc_pct": f"{100.0 * report.auc:.1f}",
            "sensitivity_pct": f"{100.0 * report.sensitivity:.2f}",
            "specificity_pct": f"{100.0 * report.specificity:.2f}",
        })
        log.info("model %s: AUC %.3f, AUCPR %.3f, F2 %.3f, sens %.4f, spec %.4f",
                 label, report.auc, report.aucpr, report.f2,
                 report.sensitivity, report.specificity)
        if best is None or (report.f2, report.auc) > (best[0].f2, best[0].auc):
            best = (report, label)

    winner_report, winner = best
    imp = ["name,gain,percent"] + [
        f"{e.name},{e.gain!r},{e.percent!r}"
        for e in sorted(winner_report.importance.entries, key=lambda e: -e.gain)
    ]
    _write_text(reports_dir / "winner_importance.txt", "\n".join(imp) + "\n")
    _write_json(reports_dir / "summary.json", {
        "format": "train-eval-summary/1",
        "winner": winner,
        "master_seed": experiment.master_seed,
        "config_hash": experiment.hash(),
        "rows": summary_rows,
    })
    log.info("winner: %s", winner)
    return 0


def cmd_synth(cfg: RunConfig, raw: dict) -> int:
    sc = build_synth_config(raw, cfg.master_seed)
    summary = synth.generate(sc, cfg.out_dir)
    _write_json(cfg.out_dir / "synth_summary.json", summary)
    log.info("synthesized %d patients (%d positive) under %s",
             summary["n_patients"], summary["n_positive"], cfg.out_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecgtriage")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value config file")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", type=Path, help="output directory override")
    common.add_argument("--specs", help="comma list of model labels, e.g. s,r,g,srg")
    common.add_argument("--no-stratify", action="store_true",
                        help="plain random split instead of outcome-stratified")
    common.add_argument("--holdout-selection", action="store_true",
                        help="score instance selection on a train holdout, not the test set")
    common.add_argument("--min-sens", type=float, help="sensitivity floor for thresholding")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("extract", "table-one", "train-eval", "synth", "version"):
        sub.add_parser(name, parents=[common])
    return parser


def _merged_config(args) -> tuple[RunConfig, dict]:
    raw = read_config_file(args.config) if args.config else {}
    cfg = build_run_config(raw)
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.specs is not None:
        updates["specs"] = tuple(v.strip().upper() for v in args.specs.split(",") if v.strip())
    if args.no_stratify:
        updates["stratify"] = False
    if args.holdout_selection:
        updates["holdout_selection"] = True
    if args.min_sens is not None:
        updates["min_sensitivity"] = args.min_sens
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    return cfg, raw


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "version":
        print(f"ecgtriage {__version__}")
        return 0
    try:
        cfg, raw = _merged_config(args)
        if args.command == "extract":
            return cmd_extract(cfg)
        if args.command == "table-one":
            return cmd_table_one(cfg)
        if args.command == "train-eval":
            return cmd_train_eval(cfg)
        if args.command == "synth":
            return cmd_synth(cfg, raw)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except DataFormatError as exc:
        log.error("data error: %s", exc)
        return 3
    except DegenerateStatsError as exc:
        log.error("degenerate statistics: %s", exc)
        return 4
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
