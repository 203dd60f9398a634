"""Boosted decision forests over quantized filtered-channel features.

Trees are grown greedily with an exhaustive scan over every feature and
every one of the 255 bin thresholds; a sample goes left when its bin is
``<= t``. Ties go to the lowest feature column, then the lowest threshold.
Discrete trees minimise weighted misclassification and output +-1;
Realboost trees minimise ``2·Σ sqrt(W+ · W-)`` and output
``½·ln((W+ + e)/(W- + e))`` with ``e = 1/(2n)``.

For inference the bin threshold becomes the raw upper edge of its bin and
a window goes left when ``value < threshold``. Thresholds, leaf values and
tree weights are rounded to 12 significant digits when fitted.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from fcf.config import settings
from fcf.exceptions import InvalidInputError
from fcf.services.featuremap import N_BINS, FeatureIndex, Quantizer, ResponseStack
from fcf.services.filterbank import FilterBank
from fcf.utils.numeric import round_sig

logger = logging.getLogger(__name__)

MODEL_DIGITS = 12
MIN_ERROR = 1e-10
CASCADE_MARGIN = 1.0
CASCADE_PERCENTILE = 0.5
SPLIT_CHUNK = 2048


@dataclass(frozen=True)
class Leaf:
    value: float


@dataclass(frozen=True)
class SplitNode:
    feature: FeatureIndex
    threshold: float
    left: "Node"
    right: "Node"
    bin: Optional[int] = field(default=None, compare=False)


Node = Union[SplitNode, Leaf]


@dataclass(frozen=True)
class Tree:
    root: Node
    depth: int

    def split_nodes(self) -> Iterator[SplitNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, SplitNode):
                yield node
                stack.append(node.right)
                stack.append(node.left)

    @property
    def n_splits(self) -> int:
        return sum(1 for _ in self.split_nodes())

    def evaluate(self, fetch: Callable[[SplitNode, np.ndarray], np.ndarray], n: int, quantized: bool = False) -> np.ndarray:
        """Leaf values for n items; `fetch(node, rows)` returns the node feature for those rows."""
        out = np.empty(n)
        _evaluate(self.root, fetch, np.arange(n), out, quantized)
        return out


def _evaluate(node: Node, fetch, rows: np.ndarray, out: np.ndarray, quantized: bool) -> None:
    if isinstance(node, Leaf):
        out[rows] = node.value
        return
    if rows.size == 0:
        return
    values = fetch(node, rows)
    go_left = values <= node.bin if quantized else values < node.threshold
    _evaluate(node.left, fetch, rows[go_left], out, quantized)
    _evaluate(node.right, fetch, rows[~go_left], out, quantized)


@dataclass
class TrainingHistory:
    errors: List[float] = field(default_factory=list)
    loss_trace: List[float] = field(default_factory=list)
    stopped_early: bool = False


@dataclass(frozen=True, eq=False)
class BoostedForest:
    trees: Tuple[Tree, ...]
    tree_weights: Tuple[float, ...]
    variant: str
    depth: int
    window: Tuple[int, int] = (60, 120)
    bank: Optional[FilterBank] = None
    cascade: Optional[Tuple[float, ...]] = None
    history: TrainingHistory = field(default_factory=TrainingHistory, compare=False, repr=False)

    def __post_init__(self):
        if len(self.trees) != len(self.tree_weights):
            raise InvalidInputError("one weight per tree is required")
        if self.variant not in ("discrete", "real"):
            raise InvalidInputError(f"unknown boosting variant {self.variant!r}")

    def __len__(self) -> int:
        return len(self.trees)

    @property
    def bank_ref(self) -> str:
        return self.bank.bank_id if self.bank is not None else ""

    def split_nodes(self) -> Iterator[SplitNode]:
        for tree in self.trees:
            yield from tree.split_nodes()

    def with_cascade(self, trace: Optional[Sequence[float]]) -> "BoostedForest":
        return BoostedForest(
            trees=self.trees,
            tree_weights=self.tree_weights,
            variant=self.variant,
            depth=self.depth,
            window=self.window,
            bank=self.bank,
            cascade=None if trace is None else tuple(trace),
            history=self.history,
        )

    def partial_scores(self, fetch, n: int) -> np.ndarray:
        """Running sums after each tree, shape (n_trees, n)."""
        out = np.zeros((len(self.trees), n))
        running = np.zeros(n)
        for t, (tree, weight) in enumerate(zip(self.trees, self.tree_weights)):
            running = running + weight * tree.evaluate(fetch, n)
            out[t] = running
        return out

    def score(self, fetch, n: int, use_cascade: bool = False) -> np.ndarray:
        """Scores for n items; with the cascade, rejected items keep their partial sum."""
        scores = np.zeros(n)
        alive = np.arange(n)
        trace = self.cascade if use_cascade else None
        for t, (tree, weight) in enumerate(zip(self.trees, self.tree_weights)):
            if alive.size == 0:
                break
            sub_fetch = _subset_fetch(fetch, alive)
            scores[alive] += weight * tree.evaluate(sub_fetch, alive.size)
            if trace is not None:
                alive = alive[scores[alive] >= trace[t] - CASCADE_MARGIN]
        return scores


def _subset_fetch(fetch, alive: np.ndarray):
    return lambda node, rows: fetch(node, alive[rows])


def matrix_fetch(features: np.ndarray, column_of: Dict[FeatureIndex, int]):
    """Fetch from a raw (n_samples, n_features) matrix."""
    return lambda node, rows: features[rows, column_of[node.feature]]


def bins_fetch(bins: np.ndarray, column_of: Dict[FeatureIndex, int]):
    """Fetch from a quantized (n_features, n_samples) matrix."""
    return lambda node, rows: bins[column_of[node.feature], rows]


def response_fetch(resp: ResponseStack, origins: np.ndarray):
    """Fetch from response planes for window origins given as (gx, gy) grid cells."""
    origins = np.asarray(origins, dtype=np.int64).reshape(-1, 2)

    def fetch(node: SplitNode, rows: np.ndarray) -> np.ndarray:
        f = node.feature
        plane = resp.plane(f.channel, f.filter)
        return plane[origins[rows, 1] + f.cell_y, origins[rows, 0] + f.cell_x]

    return fetch


@dataclass
class TrainData:
    """Quantized training matrix with labels in {-1, +1}."""

    bins: np.ndarray
    labels: np.ndarray
    features: List[FeatureIndex]
    quantizer: Quantizer

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.bins.shape != (len(self.features), len(self.labels)):
            raise InvalidInputError(
                f"bins shape {self.bins.shape} does not match {len(self.features)} features x {len(self.labels)} samples"
            )
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise InvalidInputError("labels must be -1 or +1")
        self.column_of = {idx: col for col, idx in enumerate(self.features)}

    @classmethod
    def from_matrix(
        cls,
        features: np.ndarray,
        labels: np.ndarray,
        indices: Optional[List[FeatureIndex]] = None,
    ) -> "TrainData":
        features = np.asarray(features)
        if indices is None:
            indices = [FeatureIndex(0, j, 0, 0) for j in range(features.shape[1])]
        quantizer = Quantizer.fit(features)
        return cls(bins=quantizer.transform(features), labels=labels, features=indices, quantizer=quantizer)

    @property
    def n_samples(self) -> int:
        return len(self.labels)


def _class_histograms(bins: np.ndarray, rows: np.ndarray, weights: np.ndarray) -> np.ndarray:
    n_features = bins.shape[0]
    out = np.zeros((n_features, N_BINS))
    if rows.size == 0:
        return out
    w = weights[rows]

    def chunk(start: int) -> None:
        stop = min(start + SPLIT_CHUNK, n_features)
        block = bins[start:stop][:, rows].astype(np.int64)
        block += (np.arange(stop - start, dtype=np.int64) * N_BINS)[:, None]
        counts = np.bincount(block.ravel(), weights=np.tile(w, stop - start), minlength=(stop - start) * N_BINS)
        out[start:stop] = counts.reshape(stop - start, N_BINS)

    starts = range(0, n_features, SPLIT_CHUNK)
    if settings.workers > 1 and n_features > SPLIT_CHUNK:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            list(pool.map(chunk, starts))
    else:
        for start in starts:
            chunk(start)
    return out


def _criterion(variant: str, left_pos, left_neg, right_pos, right_neg):
    if variant == "discrete":
        return np.minimum(left_pos, left_neg) + np.minimum(right_pos, right_neg)
    return 2.0 * (np.sqrt(left_pos * left_neg) + np.sqrt(right_pos * right_neg))


def best_split(
    data: TrainData,
    rows: np.ndarray,
    weights: np.ndarray,
    variant: str,
) -> Optional[Tuple[int, int, float]]:
    """(column, bin threshold, criterion) of the best split of `rows`, or None."""
    positive = rows[data.labels[rows] > 0]
    negative = rows[data.labels[rows] < 0]
    cum_pos = np.cumsum(_class_histograms(data.bins, positive, weights), axis=1)
    cum_neg = np.cumsum(_class_histograms(data.bins, negative, weights), axis=1)
    total_pos = cum_pos[:, -1:]
    total_neg = cum_neg[:, -1:]

    left_pos, left_neg = cum_pos[:, :-1], cum_neg[:, :-1]
    right_pos, right_neg = total_pos - left_pos, total_neg - left_neg
    crit = _criterion(variant, left_pos, left_neg, right_pos, right_neg)
    valid = ((left_pos + left_neg) > 0) & ((right_pos + right_neg) > 0)
    crit = np.where(valid, crit, np.inf)
    if not np.any(valid):
        return None
    flat = int(np.argmin(crit))
    column, threshold = divmod(flat, N_BINS - 1)
    return column, threshold, float(crit[column, threshold])


def _leaf(variant: str, w_pos: float, w_neg: float, smoothing: float) -> Leaf:
    if variant == "discrete":
        return Leaf(1.0 if w_pos > w_neg else -1.0)
    return Leaf(round_sig(0.5 * math.log((w_pos + smoothing) / (w_neg + smoothing)), MODEL_DIGITS))


def _grow(data: TrainData, rows: np.ndarray, weights: np.ndarray, depth: int, variant: str, smoothing: float) -> Node:
    labels = data.labels[rows]
    w_pos = float(weights[rows][labels > 0].sum())
    w_neg = float(weights[rows][labels < 0].sum())
    if depth == 0 or w_pos == 0 or w_neg == 0:
        return _leaf(variant, w_pos, w_neg, smoothing)

    found = best_split(data, rows, weights, variant)
    parent = _criterion(variant, w_pos, w_neg, 0.0, 0.0)
    if found is None or not found[2] < parent - 1e-15:
        return _leaf(variant, w_pos, w_neg, smoothing)

    column, bin_index, _ = found
    go_left = data.bins[column, rows] <= bin_index
    threshold = round_sig(data.quantizer.bin_upper_edge(column, bin_index), MODEL_DIGITS)
    return SplitNode(
        feature=data.features[column],
        threshold=threshold,
        left=_grow(data, rows[go_left], weights, depth - 1, variant, smoothing),
        right=_grow(data, rows[~go_left], weights, depth - 1, variant, smoothing),
        bin=bin_index,
    )


def fit_tree(
    data: TrainData,
    weights: np.ndarray,
    depth: int,
    variant: str = "discrete",
    rows: Optional[np.ndarray] = None,
) -> Tree:
    """Greedy exhaustive tree over all features and quantized thresholds."""
    if variant not in ("discrete", "real"):
        raise InvalidInputError(f"unknown boosting variant {variant!r}")
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights <= 0):
        raise InvalidInputError("sample weights must be positive")
    if rows is None:
        rows = np.arange(data.n_samples)
    labels = data.labels[rows]
    if not (np.any(labels > 0) and np.any(labels < 0)):
        raise InvalidInputError("both classes must be present to fit a tree")
    smoothing = 1.0 / (2.0 * data.n_samples)
    return Tree(root=_grow(data, rows, weights, depth, variant, smoothing), depth=depth)


def initial_weights(labels: np.ndarray) -> np.ndarray:
    """Half of the mass on each class, uniform within a class."""
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels > 0))
    n_neg = int(np.sum(labels < 0))
    return np.where(labels > 0, 0.5 / max(n_pos, 1), 0.5 / max(n_neg, 1))


def boost(
    data: TrainData,
    n_trees: int,
    depth: int = 2,
    variant: str = "discrete",
    bank: Optional[FilterBank] = None,
    window: Tuple[int, int] = (60, 120),
) -> BoostedForest:
    if n_trees < 1:
        raise InvalidInputError("n_trees must be >= 1")
    labels = data.labels
    base = initial_weights(labels)
    weights = base / base.sum()
    scores = np.zeros(data.n_samples)
    fetch = bins_fetch(data.bins, data.column_of)
    trees: List[Tree] = []
    tree_weights: List[float] = []
    history = TrainingHistory()

    for t in range(n_trees):
        tree = fit_tree(data, weights, depth, variant)
        h = tree.evaluate(fetch, data.n_samples, quantized=True)

        if variant == "discrete":
            error = float(weights[h != labels].sum())
            if error >= 0.5:
                logger.info(f"Stopping after {t} trees: weak learner error {error:.4f} >= 0.5")
                history.stopped_early = True
                break
            clamped = max(error, MIN_ERROR)
            alpha = round_sig(0.5 * math.log((1.0 - clamped) / clamped), MODEL_DIGITS)
            history.errors.append(error)
        else:
            alpha = 1.0
            history.errors.append(float(weights[np.sign(h) != labels].sum()))

        trees.append(tree)
        tree_weights.append(alpha)
        scores += alpha * h
        history.loss_trace.append(float(np.sum(base * np.exp(-labels * scores))))

        weights = weights * np.exp(-labels * alpha * h)
        total = weights.sum()
        if not np.isfinite(total) or total <= 0:
            history.stopped_early = True
            break
        weights = weights / total
        if weights[labels > 0].sum() <= 0 or weights[labels < 0].sum() <= 0 or np.any(weights <= 0):
            logger.info(f"Stopping after {t + 1} trees: a class weight mass vanished")
            history.stopped_early = True
            break
        logger.debug(f"tree {t}: error={history.errors[-1]:.5f} loss={history.loss_trace[-1]:.6g}")

    if history.stopped_early and not trees:
        logger.warning("Boosting produced no trees")
    return BoostedForest(
        trees=tuple(trees),
        tree_weights=tuple(tree_weights),
        variant=variant,
        depth=depth,
        window=window,
        bank=bank,
        history=history,
    )


def score_window(
    forest: BoostedForest,
    resp: ResponseStack,
    origin: Tuple[int, int],
    use_cascade: bool = False,
) -> float:
    """Forest score of the window whose top-left pixel is `origin` (x, y)."""
    ox, oy = origin
    if ox % resp.stride or oy % resp.stride:
        raise InvalidInputError(f"origin {origin} is not aligned to the response stride {resp.stride}")
    fetch = response_fetch(resp, np.array([[ox // resp.stride, oy // resp.stride]]))
    return float(forest.score(fetch, 1, use_cascade=use_cascade)[0])


def calibrate_cascade(forest: BoostedForest, fetch, n: int) -> BoostedForest:
    """Attach a rejection trace: the 0.5-percentile of positive partial sums after each tree."""
    if n == 0 or len(forest) == 0:
        return forest.with_cascade(None)
    partial = forest.partial_scores(fetch, n)
    trace = np.percentile(partial, CASCADE_PERCENTILE, axis=1)
    return forest.with_cascade(round_sig(trace, MODEL_DIGITS).tolist())
