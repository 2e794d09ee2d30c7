"""CART regression tree for partitioning observation space by score behavior.

Greedy binary splitting with exact search over midpoints of consecutive
sorted feature values, a minimum-leaf-size constraint, and weakest-link
cost-complexity pruning.  The tie rule at a split is fixed as
``value <= threshold -> left`` so that region membership is reproducible
across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._rng import as_vector, per_x_rng


class TreeError(ValueError):
    pass


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = float("nan")
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    leaf_id: int = -1
    mean_target: float = 0.0
    sample_count: int = 0
    sse: float = 0.0  # within-node squared error of the training targets

    @property
    def is_leaf(self) -> bool:
        return self.left is None


def _node_stats(y: np.ndarray) -> tuple[float, float]:
    mean = float(y.mean())
    return mean, float(np.sum((y - mean) ** 2))


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Exact search for the split minimizing total child SSE.

    Returns (gain, feature, threshold) or None when no admissible split
    improves on the parent.  Gains within a dust-level band of the best
    are treated as tied and resolve to the lowest feature index and then
    the lowest threshold, so selection is deterministic and reproducible
    against an independent enumeration of the same criterion.
    """
    n, p = X.shape
    if n < 2 * min_leaf:
        return None
    _, parent_sse = _node_stats(y)
    if parent_sse <= 0.0 or np.all(y == y[0]):
        return None
    tol = 1e-9 * parent_sse
    best = None
    for j in range(p):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        ys = y[order]
        csum = np.cumsum(ys)
        csum2 = np.cumsum(ys * ys)
        total, total2 = csum[-1], csum2[-1]
        # candidate split after position i (left gets i+1 points)
        idx = np.arange(min_leaf - 1, n - min_leaf)
        if idx.size == 0:
            continue
        idx = idx[xs[idx] < xs[idx + 1]]
        if idx.size == 0:
            continue
        n_left = idx + 1.0
        n_right = n - n_left
        sse_left = csum2[idx] - csum[idx] ** 2 / n_left
        sse_right = (total2 - csum2[idx]) - (total - csum[idx]) ** 2 / n_right
        gains = parent_sse - (np.maximum(sse_left, 0.0) + np.maximum(sse_right, 0.0))
        gmax = float(np.max(gains))
        if gmax <= 1e-12 * parent_sse:
            continue
        # smallest threshold among this feature's tied maximizers
        i = int(idx[np.flatnonzero(gains >= gmax - tol)[0]])
        thr = 0.5 * (xs[i] + xs[i + 1])
        if thr >= xs[i + 1]:  # midpoint rounded up to the right value
            thr = float(xs[i])
        if best is None or gmax > best[0] + tol:
            best = (gmax, j, float(thr))
    return best


def _grow(X: np.ndarray, y: np.ndarray, min_leaf: int) -> TreeNode:
    mean, sse = _node_stats(y)
    node = TreeNode(mean_target=mean, sample_count=y.size, sse=sse)
    split = _best_split(X, y, min_leaf)
    if split is None:
        return node
    _, j, thr = split
    mask = X[:, j] <= thr
    node.feature = j
    node.threshold = thr
    node.left = _grow(X[mask], y[mask], min_leaf)
    node.right = _grow(X[~mask], y[~mask], min_leaf)
    return node


@dataclass
class RegressionTree:
    """Fitted CART partition of feature space."""

    root: TreeNode
    n_features: int
    min_samples_leaf: int
    ccp_alpha: float
    n_train: int
    leaves: list[TreeNode] = field(default_factory=list)

    def __post_init__(self):
        self._index_leaves()

    def _index_leaves(self) -> None:
        self.leaves = []

        def visit(node: TreeNode) -> None:
            if node.is_leaf:
                node.leaf_id = len(self.leaves)
                self.leaves.append(node)
            else:
                visit(node.left)
                visit(node.right)

        visit(self.root)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def leaf_of(self, feature) -> int:
        """Leaf id for one feature vector; ties at a threshold go left."""
        v = as_vector(feature, self.n_features)
        node = self.root
        while not node.is_leaf:
            node = node.left if v[node.feature] <= node.threshold else node.right
        return node.leaf_id

    def leaf_of_batch(self, features: np.ndarray) -> np.ndarray:
        arr = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return np.fromiter((self.leaf_of(row) for row in arr), dtype=np.int64,
                           count=arr.shape[0])

    def describe(self, node: TreeNode | None = None, depth: int = 0) -> str:
        """Plain-text serialization used in region manifests."""
        node = node or self.root
        pad = "  " * depth
        if node.is_leaf:
            return (f"{pad}leaf id={node.leaf_id} mean={node.mean_target!r} "
                    f"count={node.sample_count}")
        return "\n".join([
            f"{pad}node feature={node.feature} threshold={node.threshold!r}",
            self.describe(node.left, depth + 1),
            self.describe(node.right, depth + 1),
        ])


def _prune(root: TreeNode, ccp_alpha: float, n_train: int) -> TreeNode:
    """Weakest-link pruning: collapse subtrees whose per-leaf error
    reduction (normalized by the training size) is <= ccp_alpha."""
    if ccp_alpha < 0:
        raise TreeError("ccp_alpha must be >= 0")

    def subtree_stats(node: TreeNode) -> tuple[float, int]:
        if node.is_leaf:
            return node.sse, 1
        ls, ln = subtree_stats(node.left)
        rs, rn = subtree_stats(node.right)
        return ls + rs, ln + rn

    while True:
        weakest: tuple[float, TreeNode] | None = None

        def visit(node: TreeNode) -> None:
            nonlocal weakest
            if node.is_leaf:
                return
            leaf_sse, n_leaves = subtree_stats(node)
            g = (node.sse - leaf_sse) / (n_train * (n_leaves - 1))
            if weakest is None or g < weakest[0]:
                weakest = (g, node)
            visit(node.left)
            visit(node.right)

        visit(root)
        if weakest is None or weakest[0] > ccp_alpha:
            return root
        node = weakest[1]
        node.left = node.right = None
        node.feature = -1
        node.threshold = float("nan")


def fit_tree(features: np.ndarray, targets: np.ndarray, min_samples_leaf: int,
             ccp_alpha: float = 0.0) -> RegressionTree:
    """Fit a CART regression tree of targets on features.

    Growth stops when no split can leave both children with at least
    ``min_samples_leaf`` training points (or no split reduces the squared
    error); the grown tree is then pruned at ``ccp_alpha``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).ravel()
    if X.shape[0] == 0 or y.size == 0:
        raise TreeError("empty training data")
    if X.shape[0] != y.size:
        raise TreeError("features and targets disagree in length")
    if min_samples_leaf < 1:
        raise TreeError("min_samples_leaf must be >= 1")
    root = _grow(X, y, int(min_samples_leaf))
    root = _prune(root, float(ccp_alpha), X.shape[0])
    return RegressionTree(root, X.shape[1], int(min_samples_leaf), float(ccp_alpha),
                          X.shape[0])


def score_spread(surrogate, score_fn, x, draws: int, seed: int) -> float:
    """Sample variance of the conformity score over surrogate draws at x.

    This is the conditional-variance estimate appended as an extra
    feature; high-variance observations are harder, and the tree can
    separate them even when raw coordinates do not.
    """
    if draws < 2:
        raise TreeError("variance estimation needs at least 2 draws")
    rng = per_x_rng(seed, x, "augment")
    thetas = surrogate.sample(x, rng, draws)
    scores = np.atleast_1d(score_fn.evaluate(thetas, x))
    return float(scores.var(ddof=1))


def augment_features(x, surrogate, score_fn, draws: int, seed: int = 0) -> np.ndarray:
    """Append the conditional score-variance estimate to the raw observation."""
    v = as_vector(x)
    spread = score_spread(surrogate, score_fn, v, draws, seed)
    return np.concatenate([v, [spread]])
