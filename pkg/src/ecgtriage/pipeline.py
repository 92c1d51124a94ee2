"""Experiment orchestration: split, rebalance, tune, train 50 instances, pick a
representative, and report sensitivity-constrained metrics.

Randomness is controlled by one master seed. Every consumer derives its own
stream with a counter-based key, SeedSequence((master_seed, stream, index)),
so any single piece (a CV fold, a training instance) can be reproduced in
isolation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import gbt
from .cohort import FeatureMatrix, ModelSpec, assemble_features
from .ecg_ingest import round_half_up
from .errors import NoPositives, SingleClass, TooFewPerClass, TooSmall
from .gbt import Booster, Ensemble, TrainConfig, importance_gain

STREAM_SPLIT = 1
STREAM_CV = 2
STREAM_INSTANCE = 3
STREAM_HOLDOUT = 4


def derived_rng(master_seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((master_seed, stream, index)))


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    eta_grid: tuple[float, ...] = (0.01, 0.05, 0.1, 0.2, 0.3)
    k_folds: int = 5
    n_instances: int = 50
    min_sensitivity: float = 0.9
    stratify: bool = True
    holdout_selection: bool = False
    max_rounds: int = 500
    patience: int = 20
    max_depth: int = 6
    min_child_hessian: float = 1.0
    l2_reg: float = 1.0
    gamma: float = 0.0
    split_ratio: float = 0.7

    def tree_params(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_child_hessian": self.min_child_hessian,
            "l2_reg": self.l2_reg,
            "gamma": self.gamma,
        }

    def hash(self) -> str:
        text = json.dumps(
            {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(vars(self).items())},
            sort_keys=True,
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int
    stratified: bool
    ratio: float


def split(cohort, seed: int, ratio: float = 0.7, stratified: bool = True) -> SplitPlan:
    """Random train/test split of patient ids, stratified by outcome by default.

    Stratification keeps the class ratio of each part within one patient of
    the cohort's.
    """
    labels = np.asarray([r.label for r in cohort])
    if len(np.unique(labels)) < 2:
        raise SingleClass("cohort contains a single outcome class")
    if (labels == 0).sum() < 2 or (labels == 1).sum() < 2:
        raise TooSmall("need at least two patients of each class")
    if not 0.0 < ratio < 1.0:
        raise TooSmall(f"split ratio {ratio} leaves an empty train or test part")

    rng = derived_rng(seed, STREAM_SPLIT)
    train_idx: list[int] = []
    if stratified:
        for cls in (0, 1):
            members = np.flatnonzero(labels == cls)
            n_train = round_half_up(ratio * len(members))
            if n_train == 0 or n_train == len(members):
                raise TooSmall(f"class {cls} would have an empty train or test part")
            train_idx.extend(rng.permutation(members)[:n_train].tolist())
    else:
        n_train = round_half_up(ratio * len(labels))
        if n_train == 0 or n_train == len(labels):
            raise TooSmall("empty train or test part")
        train_idx.extend(rng.permutation(len(labels))[:n_train].tolist())

    train_set = set(train_idx)
    ids = [r.id for r in cohort]
    return SplitPlan(
        train_ids=tuple(ids[i] for i in range(len(ids)) if i in train_set),
        test_ids=tuple(ids[i] for i in range(len(ids)) if i not in train_set),
        seed=seed,
        stratified=stratified,
        ratio=ratio,
    )


def rebalance(labels, seed) -> np.ndarray:
    """Indices of a 1:1 rebalanced sample of the given rows.

    With M = floor(total/2): the majority class is undersampled without
    replacement to M and the minority class is bootstrap-oversampled with
    replacement to M, so the output has exactly 2M rows.
    """
    y = np.asarray(labels)
    counts = [(y == 0).sum(), (y == 1).sum()]
    if counts[0] == 0 or counts[1] == 0:
        raise SingleClass("rebalance needs both classes")
    majority = 0 if counts[0] >= counts[1] else 1
    m = (counts[0] + counts[1]) // 2
    rng = np.random.default_rng(seed)
    maj_rows = np.flatnonzero(y == majority)
    min_rows = np.flatnonzero(y == 1 - majority)
    under = rng.choice(maj_rows, size=m, replace=False)
    over = rng.choice(min_rows, size=m, replace=True)
    return np.concatenate([under, over])


# --- ranking metrics --------------------------------------------------------

def _check_binary(labels, scores):
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    if len(y) != len(s):
        raise ValueError("labels and scores must be aligned")
    return y, s


def _tie_grouped_counts(y, s):
    """Cumulative TP/FP at each distinct score, descending; ties grouped."""
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    group_end = np.flatnonzero(np.r_[s_sorted[:-1] != s_sorted[1:], True])
    tp = np.cumsum(y_sorted)[group_end]
    fp = np.cumsum(1 - y_sorted)[group_end]
    thresholds = s_sorted[group_end]
    return thresholds, tp, fp


def roc_auc(labels, scores):
    """ROC points and trapezoidal AUC; equals concordance with half credit for ties."""
    y, s = _check_binary(labels, scores)
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        raise SingleClass("ROC needs both classes")
    _, tp, fp = _tie_grouped_counts(y, s)
    tpr = np.r_[0.0, tp / pos]
    fpr = np.r_[0.0, fp / neg]
    auc = float(np.trapezoid(tpr, fpr))
    points = [(float(x), float(t)) for x, t in zip(fpr, tpr)]
    return points, auc


def pr_aucpr(labels, scores):
    """Precision-recall points and average precision (stepwise sum)."""
    y, s = _check_binary(labels, scores)
    pos = int(y.sum())
    if pos == 0:
        raise NoPositives("precision-recall needs at least one positive")
    _, tp, fp = _tie_grouped_counts(y, s)
    recall = tp / pos
    precision = tp / (tp + fp)
    # sequential accumulation keeps the sum order-deterministic, so the value
    # is bit-identical to a stepwise reference evaluation
    aucpr = 0.0
    prev = 0.0
    for r, p in zip(recall.tolist(), precision.tolist()):
        aucpr += (r - prev) * p
        prev = r
    points = [(0.0, 1.0)] + [(float(r), float(p)) for r, p in zip(recall, precision)]
    return points, aucpr


class Confusion(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass(frozen=True)
class ThresholdChoice:
    threshold: float
    orientation: str  # ">=" predicts positive at or above, "<=" at or below
    sensitivity: float
    specificity: float
    confusion: Confusion


def choose_threshold(labels, scores, min_sens: float = 0.90) -> ThresholdChoice:
    """Most specific threshold whose sensitivity is at least min_sens.

    Orientation follows the ranking direction: scores are treated as a floor
    when AUC >= 0.5 and as a ceiling otherwise. Ties on specificity prefer the
    higher sensitivity, then the more conservative threshold.
    """
    y, s = _check_binary(labels, scores)
    pos = int(y.sum())
    neg = len(y) - pos
    if pos == 0 or neg == 0:
        raise SingleClass("threshold choice needs both classes")
    _, auc = roc_auc(y, s)
    orientation = ">=" if auc >= 0.5 else "<="

    work = s if orientation == ">=" else -s
    thresholds, tp, fp = _tie_grouped_counts(y, work)
    sens = tp / pos
    spec = (neg - fp) / neg

    best = None  # (spec, sens, margin_rank, threshold, tp, fp)
    for k in range(len(thresholds)):
        if sens[k] < min_sens:
            continue
        # later groups have lower work-threshold, i.e. a less conservative cut
        candidate = (spec[k], sens[k], -k)
        if best is None or candidate > best[0]:
            t = thresholds[k] if orientation == ">=" else -thresholds[k]
            best = (candidate, float(t), int(tp[k]), int(fp[k]))
    _, threshold, tp_k, fp_k = best
    confusion = Confusion(tp=tp_k, fp=fp_k, fn=pos - tp_k, tn=neg - fp_k)
    return ThresholdChoice(
        threshold=threshold,
        orientation=orientation,
        sensitivity=tp_k / pos,
        specificity=(neg - fp_k) / neg,
        confusion=confusion,
    )


def f2(confusion: Confusion) -> float:
    """Recall-weighted F-measure (beta = 2)."""
    if confusion.tp + confusion.fn == 0:
        raise NoPositives("F2 needs at least one actual positive")
    if confusion.tp == 0:
        return 0.0
    precision = confusion.tp / (confusion.tp + confusion.fp)
    recall = confusion.tp / (confusion.tp + confusion.fn)
    return 5.0 * precision * recall / (4.0 * precision + recall)


# --- tuning -----------------------------------------------------------------

@dataclass(frozen=True)
class CvEntry:
    eta: float
    fold_aucprs: tuple[float, ...]
    fold_rounds: tuple[int, ...]
    mean_aucpr: float
    std_aucpr: float


@dataclass(frozen=True)
class CvResult:
    entries: tuple[CvEntry, ...]
    chosen_eta: float
    chosen_rounds: int


def _stratified_folds(y, k, rng):
    folds = [[] for _ in range(k)]
    for cls in (0, 1):
        members = rng.permutation(np.flatnonzero(y == cls))
        for f, chunk in enumerate(np.array_split(members, k)):
            folds[f].extend(chunk.tolist())
    return [np.sort(np.asarray(f, dtype=int)) for f in folds]


def cv_tune(X, y, config: ExperimentConfig) -> CvResult:
    """Stratified k-fold search over the learning-rate grid.

    Each fold's training part is rebalanced, boosting runs with early
    stopping on the fold-validation average precision, and the grid entry
    maximizing (mean - std) of the per-fold bests wins. The selected round
    count is the rounded median of the per-fold best rounds.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    k = config.k_folds
    if (y == 1).sum() < k or (y == 0).sum() < k:
        raise TooFewPerClass(f"{k}-fold tuning needs at least {k} patients per class")

    rng = derived_rng(config.master_seed, STREAM_CV)
    folds = _stratified_folds(y, k, rng)
    all_rows = np.arange(len(y))
    rebalanced = []
    for f, val_rows in enumerate(folds):
        train_rows = np.setdiff1d(all_rows, val_rows)
        pick = rebalance(y[train_rows], np.random.SeedSequence((config.master_seed, STREAM_CV, f + 1)))
        rebalanced.append((train_rows[pick], val_rows))

    entries = []
    for eta in sorted(set(config.eta_grid)):
        tc = TrainConfig(learning_rate=eta, num_rounds=config.max_rounds,
                         seed=config.master_seed, **config.tree_params())
        fold_aucprs, fold_rounds = [], []
        for train_rows, val_rows in rebalanced:
            booster = Booster(X[train_rows], y[train_rows], tc)
            margins_val = np.full(len(val_rows), booster.ensemble.base_score)
            best_aucpr, best_round = -math.inf, 0
            for r in range(1, config.max_rounds + 1):
                tree = booster.step()
                margins_val += eta * tree.predict(X[val_rows])
                _, aucpr = pr_aucpr(y[val_rows], margins_val)
                if aucpr > best_aucpr:
                    best_aucpr, best_round = aucpr, r
                elif r - best_round >= config.patience:
                    break
            fold_aucprs.append(best_aucpr)
            fold_rounds.append(best_round)
        entries.append(CvEntry(
            eta=eta,
            fold_aucprs=tuple(fold_aucprs),
            fold_rounds=tuple(fold_rounds),
            mean_aucpr=float(np.mean(fold_aucprs)),
            std_aucpr=float(np.std(fold_aucprs)),
        ))

    best_entry = None
    for entry in entries:
        score = entry.mean_aucpr - entry.std_aucpr
        if best_entry is None or score > best_entry[0]:
            best_entry = (score, entry)
    chosen = best_entry[1]
    rounds = max(1, round_half_up(float(np.median(chosen.fold_rounds))))
    return CvResult(entries=tuple(entries), chosen_eta=chosen.eta, chosen_rounds=rounds)


# --- representative training ------------------------------------------------

@dataclass(frozen=True)
class InstanceRun:
    index: int
    seed_key: tuple[int, int, int]
    auc: float


@dataclass(frozen=True)
class RepresentativeResult:
    ensemble: Ensemble
    runs: tuple[InstanceRun, ...]
    selected_index: int
    selection_on: str  # "test" or "holdout"


def run_instance(X_train, y_train, X_sel, y_sel, tc: TrainConfig, master_seed: int,
                 index: int, feature_names=None):
    """Train instance `index` on its own rebalanced sample; returns (model, AUC).

    The rebalance seed is SeedSequence((master_seed, STREAM_INSTANCE, index)),
    so a single instance can be reproduced without running the other 49.
    """
    key = (master_seed, STREAM_INSTANCE, index)
    pick = rebalance(y_train, np.random.SeedSequence(key))
    model = gbt.fit(np.asarray(X_train, dtype=float)[pick], np.asarray(y_train)[pick],
                    tc, feature_names)
    _, auc = roc_auc(y_sel, model.predict(X_sel))
    return model, InstanceRun(index=index, seed_key=key, auc=auc)


def _carve_holdout(y_train, master_seed):
    rng = derived_rng(master_seed, STREAM_HOLDOUT)
    y = np.asarray(y_train)
    holdout: list[int] = []
    for cls in (0, 1):
        members = rng.permutation(np.flatnonzero(y == cls))
        n_hold = max(1, round_half_up(0.2 * len(members)))
        if n_hold >= len(members):
            raise TooSmall("train part too small to carve a selection holdout")
        holdout.extend(members[:n_hold].tolist())
    hold = np.sort(np.asarray(holdout, dtype=int))
    rest = np.setdiff1d(np.arange(len(y)), hold)
    return rest, hold


def train_representative(X_train, y_train, X_test, y_test, tc: TrainConfig,
                         n_instances: int, master_seed: int,
                         holdout_selection: bool = False,
                         feature_names=None) -> RepresentativeResult:
    """Train n instances on independently rebalanced samples and keep the one
    with the highest selection AUC (ties go to the lowest instance index).

    Selection AUC is measured on the test set by default, which mirrors the
    experiment protocol but leaks test information into model choice; pass
    holdout_selection=True to score selection on a carved-out fifth of the
    training part instead.
    """
    X_train = np.asarray(X_train, dtype=float)
    y_train = np.asarray(y_train)
    if holdout_selection:
        rest, hold = _carve_holdout(y_train, master_seed)
        fit_X, fit_y = X_train[rest], y_train[rest]
        sel_X, sel_y = X_train[hold], y_train[hold]
    else:
        fit_X, fit_y = X_train, y_train
        sel_X, sel_y = np.asarray(X_test, dtype=float), np.asarray(y_test)

    best_model, best_run = None, None
    runs = []
    for i in range(1, n_instances + 1):
        model, run = run_instance(fit_X, fit_y, sel_X, sel_y, tc, master_seed, i, feature_names)
        runs.append(run)
        if best_run is None or run.auc > best_run.auc:
            best_model, best_run = model, run
    return RepresentativeResult(
        ensemble=best_model,
        runs=tuple(runs),
        selected_index=best_run.index,
        selection_on="holdout" if holdout_selection else "test",
    )


# --- full evaluation --------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    label: str
    auc: float
    aucpr: float
    f2: float
    sensitivity: float
    specificity: float
    threshold: float
    orientation: str
    confusion: Confusion
    roc_points: tuple
    pr_points: tuple
    importance: gbt.ImportanceTable
    cv: CvResult
    runs: tuple[InstanceRun, ...]
    selected_index: int
    selection_on: str
    n_train: int
    n_test: int
    dropped_ids: tuple[str, ...]
    master_seed: int
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "format": "eval-report/1",
            "model": self.label,
            "metrics": {
                "auc": self.auc,
                "aucpr": self.aucpr,
                "f2": self.f2,
                "sensitivity": self.sensitivity,
                "specificity": self.specificity,
            },
            "threshold": {"value": self.threshold, "orientation": self.orientation},
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp,
                          "fn": self.confusion.fn, "tn": self.confusion.tn},
            "selection": {
                "on": self.selection_on,
                "instance": self.selected_index,
                "auc_log": [{"instance": r.index, "seed_key": list(r.seed_key), "auc": r.auc}
                            for r in self.runs],
            },
            "tuning": {
                "chosen_eta": self.cv.chosen_eta,
                "chosen_rounds": self.cv.chosen_rounds,
                "grid": [{
                    "eta": e.eta,
                    "fold_aucprs": list(e.fold_aucprs),
                    "fold_rounds": list(e.fold_rounds),
                    "mean_aucpr": e.mean_aucpr,
                    "std_aucpr": e.std_aucpr,
                } for e in self.cv.entries],
            },
            "importance": {
                "no_splits": self.importance.no_splits,
                "features": [{"name": e.name, "gain": e.gain, "percent": e.percent}
                             for e in self.importance.entries],
            },
            "data": {"n_train": self.n_train, "n_test": self.n_test,
                     "dropped_ids": list(self.dropped_ids)},
            "seeds": {"master_seed": self.master_seed},
            "config_hash": self.config_hash,
            "roc_points": [list(p) for p in self.roc_points],
            "pr_points": [list(p) for p in self.pr_points],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def evaluate_model(spec: ModelSpec, cohort, config: ExperimentConfig,
                   split_plan: SplitPlan | None = None) -> EvalReport:
    """Full protocol for one feature set; bit-reproducible for a fixed config."""
    labels = {r.label for r in cohort}
    if len(labels) < 2:
        raise SingleClass("cohort contains a single outcome class")

    matrix = assemble_features(cohort, spec)
    if split_plan is None:
        split_plan = split(cohort, config.master_seed, ratio=config.split_ratio,
                           stratified=config.stratify)
    train_m = matrix.rows_for(split_plan.train_ids)
    test_m = matrix.rows_for(split_plan.test_ids)
    for part, name in ((train_m, "train"), (test_m, "test")):
        if len(np.unique(part.y)) < 2:
            raise SingleClass(f"{name} part lost a class after feature drops")

    cv = cv_tune(train_m.X, train_m.y, config)
    tc = TrainConfig(learning_rate=cv.chosen_eta, num_rounds=cv.chosen_rounds,
                     seed=config.master_seed, **config.tree_params())
    rep = train_representative(
        train_m.X, train_m.y, test_m.X, test_m.y, tc,
        n_instances=config.n_instances, master_seed=config.master_seed,
        holdout_selection=config.holdout_selection, feature_names=matrix.columns,
    )

    scores = rep.ensemble.predict(test_m.X)
    roc_points, auc = roc_auc(test_m.y, scores)
    pr_points, aucpr = pr_aucpr(test_m.y, scores)
    choice = choose_threshold(test_m.y, scores, min_sens=config.min_sensitivity)

    return EvalReport(
        label=spec.label,
        auc=auc,
        aucpr=aucpr,
        f2=f2(choice.confusion),
        sensitivity=choice.sensitivity,
        specificity=choice.specificity,
        threshold=choice.threshold,
        orientation=choice.orientation,
        confusion=choice.confusion,
        roc_points=tuple(roc_points),
        pr_points=tuple(pr_points),
        importance=importance_gain(rep.ensemble),
        cv=cv,
        runs=rep.runs,
        selected_index=rep.selected_index,
        selection_on=rep.selection_on,
        n_train=len(train_m.ids),
        n_test=len(test_m.ids),
        dropped_ids=matrix.dropped_ids,
        master_seed=config.master_seed,
        config_hash=config.hash(),
    )
