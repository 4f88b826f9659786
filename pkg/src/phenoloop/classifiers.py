"""Binary classifier zoo used by the AutoML search.

Every family fits with a deterministic seed and exposes
``predict_proba(X) -> P(y=1)``. Training effort is expressed in the unit the
family naturally scales by (epochs, trees, boosting rounds) so the search can
run configurations at partial resource.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "FitError",
    "LogisticRegressionGD",
    "LinearSvm",
    "RandomForest",
    "GradientBoosting",
    "Mlp",
    "classifier_from_dict",
]


class FitError(ValueError):
    """Training cannot proceed (single-class targets, bad data)."""


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_xy(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise FitError("X must be 2-d and aligned with y")
    if not np.isfinite(X).all():
        raise FitError("non-finite feature values")
    if len(np.unique(y)) < 2:
        raise FitError("both classes must be present in y")
    return X, y


class LogisticRegressionGD:
    """L2-regularized logistic loss minimized by full-batch gradient descent
    with fixed step halving whenever a step would increase the loss."""

    family = "logistic_regression"

    def __init__(self, lam: float = 1e-3, epochs: int = 200, lr: float = 1.0):
        self.lam = lam
        self.epochs = epochs
        self.lr0 = lr
        self.w: np.ndarray | None = None
        self.b = 0.0

    def _loss(self, X, y, w, b):
        z = X @ w + b
        # log(1 + exp(-m)) with m = (2y-1) * z, stable form
        m = np.where(y > 0.5, z, -z)
        nll = np.logaddexp(0.0, -m).mean()
        return nll + 0.5 * self.lam * float(w @ w)

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        n, d = X.shape
        w = np.zeros(d)
        b = 0.0
        lr = self.lr0
        loss = self._loss(X, y, w, b)
        for _ in range(self.epochs):
            p = _sigmoid(X @ w + b)
            gw = X.T @ (p - y) / n + self.lam * w
            gb = float((p - y).mean())
            cand_w = w - lr * gw
            cand_b = b - lr * gb
            cand_loss = self._loss(X, y, cand_w, cand_b)
            if cand_loss > loss:
                lr *= 0.5
            else:
                w, b, loss = cand_w, cand_b, cand_loss
        self.w, self.b = w, b
        return self

    def predict_proba(self, X):
        return _sigmoid(np.asarray(X, dtype=float) @ self.w + self.b)

    def to_dict(self):
        return {
            "family": self.family,
            "lam": self.lam,
            "epochs": self.epochs,
            "w": self.w.tolist(),
            "b": self.b,
        }

    @classmethod
    def from_dict(cls, raw):
        model = cls(lam=raw["lam"], epochs=raw["epochs"])
        model.w = np.array(raw["w"], dtype=float)
        model.b = float(raw["b"])
        return model


class LinearSvm:
    """Hinge loss trained by averaged stochastic subgradient descent
    (Pegasos-style schedule); decision values calibrated to probabilities by
    a sigmoid fitted on the training decision values."""

    family = "linear_svm"

    def __init__(self, lam: float = 1e-3, epochs: int = 200, seed: int = 0):
        self.lam = lam
        self.epochs = epochs
        self.seed = seed
        self.w: np.ndarray | None = None
        self.b = 0.0
        self.cal_a = 1.0
        self.cal_b = 0.0

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        n, d = X.shape
        s = np.where(y > 0.5, 1.0, -1.0)
        rng = np.random.default_rng(self.seed)
        w = np.zeros(d)
        b = 0.0
        w_sum = np.zeros(d)
        b_sum = 0.0
        t = 0
        total_steps = self.epochs * n
        tail_start = total_steps // 2  # average the stable second half
        averaged = 0
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for i in order:
                t += 1
                eta = 1.0 / (self.lam * t)
                margin = s[i] * (X[i] @ w + b)
                w *= 1.0 - eta * self.lam
                if margin < 1.0:
                    w += eta * s[i] * X[i]
                    b += eta * s[i]
                if t > tail_start:
                    w_sum += w
                    b_sum += b
                    averaged += 1
        self.w = w_sum / averaged
        self.b = b_sum / averaged
        self._calibrate(X @ self.w + self.b, y)
        return self

    def _calibrate(self, scores, y, iters: int = 300):
        a, b = 1.0, 0.0
        lr = 1.0
        n = len(y)

        def loss(a_, b_):
            m = np.where(y > 0.5, a_ * scores + b_, -(a_ * scores + b_))
            return np.logaddexp(0.0, -m).mean()

        cur = loss(a, b)
        for _ in range(iters):
            p = _sigmoid(a * scores + b)
            ga = float(((p - y) * scores).sum() / n)
            gb = float((p - y).mean())
            ca, cb = a - lr * ga, b - lr * gb
            cl = loss(ca, cb)
            if cl > cur:
                lr *= 0.5
            else:
                a, b, cur = ca, cb, cl
        self.cal_a, self.cal_b = a, b

    def decision_function(self, X):
        return np.asarray(X, dtype=float) @ self.w + self.b

    def predict_proba(self, X):
        return _sigmoid(self.cal_a * self.decision_function(X) + self.cal_b)

    def to_dict(self):
        return {
            "family": self.family,
            "lam": self.lam,
            "epochs": self.epochs,
            "seed": self.seed,
            "w": self.w.tolist(),
            "b": self.b,
            "cal_a": self.cal_a,
            "cal_b": self.cal_b,
        }

    @classmethod
    def from_dict(cls, raw):
        model = cls(lam=raw["lam"], epochs=raw["epochs"], seed=raw["seed"])
        model.w = np.array(raw["w"], dtype=float)
        model.b = float(raw["b"])
        model.cal_a = float(raw["cal_a"])
        model.cal_b = float(raw["cal_b"])
        return model


class _Tree:
    """CART tree stored as flat arrays for vectorized routing.

    criterion "gini" grows a classifier on 0/1 labels (leaf value = class-1
    fraction); "variance" grows a regression tree (leaf value = mean).
    """

    def __init__(self, criterion: str, max_depth: int | None, max_features: int | None):
        self.criterion = criterion
        self.max_depth = max_depth
        self.max_features = max_features
        self.feature: np.ndarray | None = None
        self.threshold: np.ndarray | None = None
        self.left: np.ndarray | None = None
        self.right: np.ndarray | None = None
        self.value: np.ndarray | None = None

    def fit(self, X, y, rng: np.random.Generator):
        nodes_feature: list[int] = []
        nodes_threshold: list[float] = []
        nodes_left: list[int] = []
        nodes_right: list[int] = []
        nodes_value: list[float] = []

        def new_node():
            nodes_feature.append(-1)
            nodes_threshold.append(0.0)
            nodes_left.append(-1)
            nodes_right.append(-1)
            nodes_value.append(0.0)
            return len(nodes_feature) - 1

        max_depth = self.max_depth if self.max_depth is not None else 10**9
        root = new_node()
        stack = [(root, np.arange(len(y)), 0)]
        while stack:
            node, rows, depth = stack.pop()
            target = y[rows]
            nodes_value[node] = float(target.mean())
            if depth >= max_depth or len(rows) < 2 or target.min() == target.max():
                continue
            split = self._best_split(X, y, rows, rng)
            if split is None:
                continue
            feat, thr = split
            go_left = X[rows, feat] <= thr
            nodes_feature[node] = feat
            nodes_threshold[node] = thr
            left_id = new_node()
            right_id = new_node()
            nodes_left[node] = left_id
            nodes_right[node] = right_id
            stack.append((left_id, rows[go_left], depth + 1))
            stack.append((right_id, rows[~go_left], depth + 1))

        self.feature = np.array(nodes_feature, dtype=int)
        self.threshold = np.array(nodes_threshold, dtype=float)
        self.left = np.array(nodes_left, dtype=int)
        self.right = np.array(nodes_right, dtype=int)
        self.value = np.array(nodes_value, dtype=float)
        return self

    def _best_split(self, X, y, rows, rng):
        d = X.shape[1]
        if self.max_features is not None and self.max_features < d:
            feats = np.sort(rng.choice(d, size=self.max_features, replace=False))
        else:
            feats = np.arange(d)
        target = y[rows]
        n = len(rows)
        best_gain = 1e-12
        best = None
        if self.criterion == "gini":
            parent_imp = self._gini(target.sum(), n)
        else:
            parent_imp = float(target.var())
        for feat in feats:
            col = X[rows, feat]
            order = np.argsort(col, kind="stable")
            cs = col[order]
            ts = target[order]
            distinct = np.nonzero(cs[1:] > cs[:-1])[0]  # cut after position i
            if distinct.size == 0:
                continue
            csum = np.cumsum(ts)
            n_left = distinct + 1
            n_right = n - n_left
            if self.criterion == "gini":
                pos_left = csum[distinct]
                pos_right = csum[-1] - pos_left
                imp_left = self._gini_vec(pos_left, n_left)
                imp_right = self._gini_vec(pos_right, n_right)
            else:
                sqsum = np.cumsum(ts**2)
                s_left = csum[distinct]
                q_left = sqsum[distinct]
                s_right = csum[-1] - s_left
                q_right = sqsum[-1] - q_left
                imp_left = q_left / n_left - (s_left / n_left) ** 2
                imp_right = q_right / n_right - (s_right / n_right) ** 2
            gain = parent_imp - (n_left * imp_left + n_right * imp_right) / n
            k = int(np.argmax(gain))
            if gain[k] > best_gain:
                best_gain = float(gain[k])
                cut = distinct[k]
                best = (int(feat), float((cs[cut] + cs[cut + 1]) / 2.0))
        return best

    @staticmethod
    def _gini(pos: float, n: int) -> float:
        p = pos / n
        return 2.0 * p * (1.0 - p)

    @staticmethod
    def _gini_vec(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
        p = pos / n
        return 2.0 * p * (1.0 - p)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=int)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            rows = np.nonzero(internal)[0]
            cur = node[rows]
            go_left = X[rows, feat[rows]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])

    def predict_value(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, raw, criterion="gini", max_depth=None, max_features=None):
        tree = cls(criterion, max_depth, max_features)
        tree.feature = np.array(raw["feature"], dtype=int)
        tree.threshold = np.array(raw["threshold"], dtype=float)
        tree.left = np.array(raw["left"], dtype=int)
        tree.right = np.array(raw["right"], dtype=int)
        tree.value = np.array(raw["value"], dtype=float)
        return tree


class RandomForest:
    """Bagged Gini trees with sqrt(d) feature subsampling per split."""

    family = "random_forest"

    def __init__(self, n_trees: int = 100, max_depth: int | None = None, seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.seed = seed
        self.trees: list[_Tree] = []
        self._bootstraps: list[np.ndarray] = []
        self._n_train = 0

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        n, d = X.shape
        max_features = max(1, int(math.sqrt(d)))
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees = []
        self._bootstraps = []
        self._n_train = n
        for tree_seed in seeds:
            rng = np.random.default_rng(tree_seed)
            idx = rng.integers(0, n, size=n)
            tree = _Tree("gini", self.max_depth, max_features)
            tree.fit(X[idx], y[idx], rng)
            self.trees.append(tree)
            self._bootstraps.append(idx)
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=float)
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict_value(X)
        return total / len(self.trees)

    def oob_proba(self, X) -> np.ndarray:
        """Out-of-bag probability for the training rows: each row scored only
        by trees whose bootstrap missed it. Rows present in every bootstrap
        fall back to the full-forest probability."""
        X = np.asarray(X, dtype=float)
        if len(X) != self._n_train:
            raise ValueError("oob_proba expects the training matrix")
        total = np.zeros(len(X))
        counts = np.zeros(len(X))
        for tree, idx in zip(self.trees, self._bootstraps):
            out = np.ones(len(X), dtype=bool)
            out[idx] = False
            if out.any():
                total[out] += tree.predict_value(X[out])
                counts[out] += 1
        proba = self.predict_proba(X)
        covered = counts > 0
        proba[covered] = total[covered] / counts[covered]
        return proba

    def to_dict(self):
        return {
            "family": self.family,
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, raw):
        model = cls(n_trees=raw["n_trees"], max_depth=raw["max_depth"], seed=raw["seed"])
        model.trees = [_Tree.from_dict(t, "gini") for t in raw["trees"]]
        return model


class GradientBoosting:
    """Depth-limited regression trees fit to logistic-loss gradients with
    shrinkage; leaf values take a Newton step."""

    family = "gradient_boosting"

    def __init__(self, n_rounds: int = 100, max_depth: int = 3, shrinkage: float = 0.1, seed: int = 0):
        self.n_rounds = n_rounds
        self.max_depth = max_depth
        self.shrinkage = shrinkage
        self.seed = seed
        self.f0 = 0.0
        self.trees: list[_Tree] = []

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        rng = np.random.default_rng(self.seed)
        p0 = min(max(y.mean(), 1e-6), 1 - 1e-6)
        self.f0 = math.log(p0 / (1 - p0))
        f = np.full(len(y), self.f0)
        self.trees = []
        for _ in range(self.n_rounds):
            p = _sigmoid(f)
            residual = y - p
            tree = _Tree("variance", self.max_depth, None)
            tree.fit(X, residual, rng)
            leaves = tree.apply(X)
            hessian = p * (1 - p)
            for leaf in np.unique(leaves):
                in_leaf = leaves == leaf
                denom = hessian[in_leaf].sum()
                num = residual[in_leaf].sum()
                tree.value[leaf] = num / max(denom, 1e-12)
            f = f + self.shrinkage * tree.value[leaves]
            self.trees.append(tree)
        return self

    def _raw(self, X):
        X = np.asarray(X, dtype=float)
        f = np.full(len(X), self.f0)
        for tree in self.trees:
            f = f + self.shrinkage * tree.predict_value(X)
        return f

    def predict_proba(self, X):
        return _sigmoid(self._raw(X))

    def to_dict(self):
        return {
            "family": self.family,
            "n_rounds": self.n_rounds,
            "max_depth": self.max_depth,
            "shrinkage": self.shrinkage,
            "seed": self.seed,
            "f0": self.f0,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, raw):
        model = cls(
            n_rounds=raw["n_rounds"],
            max_depth=raw["max_depth"],
            shrinkage=raw["shrinkage"],
            seed=raw["seed"],
        )
        model.f0 = float(raw["f0"])
        model.trees = [_Tree.from_dict(t, "variance") for t in raw["trees"]]
        return model


class Mlp:
    """One or two hidden ReLU layers with a logistic output, trained by
    mini-batch stochastic gradient descent."""

    family = "mlp"

    def __init__(
        self,
        width: int = 64,
        layers: int = 1,
        lr: float = 0.01,
        epochs: int = 100,
        batch_size: int = 32,
        seed: int = 0,
    ):
        self.width = width
        self.layers = layers
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []

    def fit(self, X, y):
        X, y = _check_xy(X, y)
        n, d = X.shape
        rng = np.random.default_rng(self.seed)
        dims = [d] + [self.width] * self.layers + [1]
        self.weights = [
            rng.normal(0.0, math.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
            for i in range(len(dims) - 1)
        ]
        self.biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start : start + self.batch_size]
                self._step(X[batch], y[batch])
        return self

    def _forward(self, X):
        acts = [X]
        h = X
        for i in range(len(self.weights) - 1):
            h = np.maximum(h @ self.weights[i] + self.biases[i], 0.0)
            acts.append(h)
        z = h @ self.weights[-1] + self.biases[-1]
        return acts, z.ravel()

    def _step(self, X, y):
        acts, z = self._forward(X)
        m = len(y)
        delta = (_sigmoid(z) - y).reshape(-1, 1) / m
        for i in range(len(self.weights) - 1, -1, -1):
            gw = acts[i].T @ delta
            gb = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
            self.weights[i] -= self.lr * gw
            self.biases[i] -= self.lr * gb

    def predict_proba(self, X):
        X = np.asarray(X, dtype=float)
        _, z = self._forward(X)
        return _sigmoid(z)

    def to_dict(self):
        return {
            "family": self.family,
            "width": self.width,
            "layers": self.layers,
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, raw):
        model = cls(
            width=raw["width"],
            layers=raw["layers"],
            lr=raw["lr"],
            epochs=raw["epochs"],
            batch_size=raw["batch_size"],
            seed=raw["seed"],
        )
        model.weights = [np.array(w, dtype=float) for w in raw["weights"]]
        model.biases = [np.array(b, dtype=float) for b in raw["biases"]]
        return model


_FAMILIES = {
    cls.family: cls
    for cls in (LogisticRegressionGD, LinearSvm, RandomForest, GradientBoosting, Mlp)
}


def classifier_from_dict(raw: dict):
    try:
        cls = _FAMILIES[raw["family"]]
    except KeyError:
        raise ValueError(f"unknown classifier family {raw.get('family')!r}") from None
    return cls.from_dict(raw)
