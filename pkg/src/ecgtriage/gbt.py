"""Gradient-boosted decision trees for binary classification, written from
scratch with second-order (Newton) split gain.

Per boosting round, with current probabilities p: gradients g = p - y and
hessians h = p (1 - p); a tree is grown greedily, scoring each candidate split

    gain = 1/2 * [GL^2/(HL + lambda) + GR^2/(HR + lambda) - G^2/(H + lambda)] - gamma

over the exact midpoints between sorted distinct feature values. Leaf weight is
-G/(H + lambda). The prediction is sigmoid(base_score + lr * sum of tree
outputs), with base_score the log-odds of the training prevalence.

Everything is deterministic: tied gains resolve to the lowest feature index and
then the lowest threshold, so repeated fits serialize identically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMatrix, SchemaError, SingleClass, WidthMismatch

SERIALIZATION_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    num_rounds: int
    max_depth: int = 6
    min_child_hessian: float = 1.0
    l2_reg: float = 1.0
    gamma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise SchemaError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.num_rounds < 1:
            raise SchemaError("num_rounds must be >= 1")
        if self.max_depth < 1:
            raise SchemaError("max_depth must be >= 1")
        if self.l2_reg < 0 or self.gamma < 0:
            raise SchemaError("l2_reg and gamma must be non-negative")


@dataclass
class TreeNode:
    """Internal split node or leaf. Leaves carry only a weight."""

    weight: float | None = None
    feature: int | None = None
    threshold: float | None = None
    default_left: bool = True
    gain: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"weight": self.weight}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "default": "left" if self.default_left else "right",
            "gain": self.gain,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @staticmethod
    def from_dict(doc: dict) -> "TreeNode":
        if "weight" in doc:
            return TreeNode(weight=doc["weight"])
        return TreeNode(
            feature=doc["feature"],
            threshold=doc["threshold"],
            default_left=doc["default"] == "left",
            gain=doc["gain"],
            left=TreeNode.from_dict(doc["left"]),
            right=TreeNode.from_dict(doc["right"]),
        )


@dataclass
class Tree:
    root: TreeNode

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Raw leaf weights for each row; NaN cells follow the default direction."""
        out = np.empty(len(X))
        stack = [(self.root, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if len(idx) == 0:
                continue
            if node.is_leaf:
                out[idx] = node.weight
                continue
            col = X[idx, node.feature]
            nan = np.isnan(col)
            goes_left = col < node.threshold
            goes_left[nan] = node.default_left
            stack.append((node.left, idx[goes_left]))
            stack.append((node.right, idx[~goes_left]))
        return out

    def gain_by_feature(self, totals: dict[int, float]):
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                continue
            totals[node.feature] = totals.get(node.feature, 0.0) + node.gain
            stack.append(node.left)
            stack.append(node.right)


@dataclass
class Ensemble:
    base_score: float
    learning_rate: float
    trees: list[Tree]
    feature_names: tuple[str, ...]

    def margins(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise WidthMismatch(
                f"rows have {X.shape[1] if X.ndim == 2 else '?'} features, "
                f"model expects {len(self.feature_names)}"
            )
        m = np.full(len(X), self.base_score)
        for tree in self.trees:
            m += self.learning_rate * tree.predict(X)
        return m

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Probabilities, clipped into the open interval (0, 1)."""
        p = _sigmoid(self.margins(X))
        return np.clip(p, 1e-15, float(np.nextafter(1.0, 0.0)))

    def to_json(self) -> str:
        doc = {
            "version": SERIALIZATION_VERSION,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": list(self.feature_names),
            "trees": [tree.root.to_dict() for tree in self.trees],
        }
        return json.dumps(doc, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "Ensemble":
        doc = json.loads(text)
        if doc.get("version") != SERIALIZATION_VERSION:
            raise SchemaError(f"unsupported model version {doc.get('version')!r}")
        return Ensemble(
            base_score=doc["base_score"],
            learning_rate=doc["learning_rate"],
            trees=[Tree(TreeNode.from_dict(d)) for d in doc["trees"]],
            feature_names=tuple(doc["feature_names"]),
        )


@dataclass(frozen=True)
class ImportanceEntry:
    name: str
    gain: float
    percent: float


@dataclass(frozen=True)
class ImportanceTable:
    entries: tuple[ImportanceEntry, ...]
    no_splits: bool


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def mean_logistic_loss(y: np.ndarray, margins: np.ndarray) -> float:
    """Mean of log(1 + exp(m)) - y*m, numerically stable."""
    return float(np.mean(np.logaddexp(0.0, margins) - y * margins))


class _NodeBest:
    __slots__ = ("gain", "feature", "threshold")

    def __init__(self):
        self.gain = -math.inf
        self.feature = -1
        self.threshold = math.nan


class Booster:
    """Incremental trainer: one call to step() grows and applies one tree."""

    def __init__(self, X, y, config: TrainConfig, feature_names=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or len(X) == 0:
            raise EmptyMatrix("training matrix is empty")
        if len(X) != len(y):
            raise WidthMismatch(f"{len(X)} rows but {len(y)} labels")
        classes = np.unique(y)
        if not np.array_equal(classes, [0.0, 1.0]):
            if len(classes) == 1:
                raise SingleClass(f"training labels contain only class {classes[0]:g}")
            raise SchemaError(f"labels must be 0/1, got {classes}")
        if feature_names is None:
            feature_names = tuple(f"f{j}" for j in range(X.shape[1]))
        if len(feature_names) != X.shape[1]:
            raise WidthMismatch("feature name manifest does not match matrix width")

        self.X = X
        self.y = y
        self.config = config
        prevalence = float(y.mean())
        base = math.log(prevalence / (1.0 - prevalence))
        self.ensemble = Ensemble(
            base_score=base,
            learning_rate=config.learning_rate,
            trees=[],
            feature_names=tuple(feature_names),
        )
        self._margins = np.full(len(y), base)
        # column-wise presorted row orders, reused by every node
        self._order = np.argsort(X, axis=0, kind="stable")

    @property
    def margins(self) -> np.ndarray:
        return self._margins.copy()

    def train_loss(self) -> float:
        return mean_logistic_loss(self.y, self._margins)

    def step(self) -> Tree:
        p = _sigmoid(self._margins)
        g = p - self.y
        h = p * (1.0 - p)
        leaf_values = np.empty(len(self.y))
        root = self._grow(np.arange(len(self.y)), g, h, depth=0, leaf_values=leaf_values)
        tree = Tree(root)
        self.ensemble.trees.append(tree)
        self._margins = self._margins + self.config.learning_rate * leaf_values
        return tree

    def run(self, num_rounds: int) -> Ensemble:
        for _ in range(num_rounds):
            self.step()
        return self.ensemble

    def _grow(self, idx, g, h, depth, leaf_values) -> TreeNode:
        cfg = self.config
        G = float(g[idx].sum())
        H = float(h[idx].sum())

        def leaf() -> TreeNode:
            weight = 0.0 if H + cfg.l2_reg == 0 else -G / (H + cfg.l2_reg)
            leaf_values[idx] = weight
            return TreeNode(weight=weight)

        if depth >= cfg.max_depth or len(idx) < 2:
            return leaf()

        best = _NodeBest()
        parent_term = G * G / (H + cfg.l2_reg)
        member = np.zeros(len(self.y), dtype=bool)
        member[idx] = True
        for j in range(self.X.shape[1]):
            ordered = self._order[:, j][member[self._order[:, j]]]
            values = self.X[ordered, j]
            if values[0] == values[-1]:
                continue
            gl = np.cumsum(g[ordered])[:-1]
            hl = np.cumsum(h[ordered])[:-1]
            gr = G - gl
            hr = H - hl
            boundary = values[:-1] < values[1:]
            feasible = np.flatnonzero(
                boundary & (hl >= cfg.min_child_hessian) & (hr >= cfg.min_child_hessian)
            )
            if feasible.size == 0:
                continue
            with np.errstate(divide="ignore", invalid="ignore"):
                gains = (
                    0.5 * (gl[feasible] ** 2 / (hl[feasible] + cfg.l2_reg)
                           + gr[feasible] ** 2 / (hr[feasible] + cfg.l2_reg)
                           - parent_term)
                    - cfg.gamma
                )
            gains = np.where(np.isfinite(gains), gains, -np.inf)
            k = int(feasible[np.argmax(gains)])
            top = float(np.max(gains))
            if top > best.gain:
                best.gain = top
                best.feature = j
                best.threshold = float((values[k] + values[k + 1]) / 2.0)

        if best.feature < 0 or best.gain <= 0.0:
            return leaf()

        col = self.X[idx, best.feature]
        left_idx = idx[col < best.threshold]
        right_idx = idx[~(col < best.threshold)]
        return TreeNode(
            feature=best.feature,
            threshold=best.threshold,
            default_left=True,
            gain=best.gain,
            left=self._grow(left_idx, g, h, depth + 1, leaf_values),
            right=self._grow(right_idx, g, h, depth + 1, leaf_values),
        )


def fit(X, y, config: TrainConfig, feature_names=None) -> Ensemble:
    """Train a boosted ensemble for config.num_rounds rounds."""
    return Booster(X, y, config, feature_names).run(config.num_rounds)


def importance_gain(model: Ensemble) -> ImportanceTable:
    """Total recorded split gain per feature, normalized to percentages."""
    totals: dict[int, float] = {}
    for tree in model.trees:
        tree.gain_by_feature(totals)
    grand = sum(totals.values())
    if not totals or grand <= 0:
        return ImportanceTable(entries=(), no_splits=True)
    entries = tuple(
        ImportanceEntry(
            name=model.feature_names[j],
            gain=totals.get(j, 0.0),
            percent=100.0 * totals.get(j, 0.0) / grand,
        )
        for j in range(len(model.feature_names))
    )
    return ImportanceTable(entries=entries, no_splits=False)
