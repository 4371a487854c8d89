"""RUSBoost with decision stumps, stratified cross-validation and paired tests.

Labels are class ids 1 (natural surface) and 2 (engraving); internally class
2 maps to +1 and class 1 to -1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SurfTopoError
from .features import LabeledDataset

DEFAULT_ROUNDS = 50
DEFAULT_FOLDS = 10
MAX_RETRIES = 10
EPS_FLOOR = 1e-10


class ClassifyError(SurfTopoError):
    pass


class SingleClassDataset(ClassifyError):
    pass


class NoUsefulSplit(ClassifyError):
    pass


class DimensionMismatch(ClassifyError):
    pass


class TooFewSamples(ClassifyError):
    pass


class LengthMismatch(ClassifyError):
    pass


class ZeroVariance(ClassifyError):
    pass


@dataclass(frozen=True)
class Stump:
    feature: int
    threshold: float
    polarity: int  # +1: class 2 when x > threshold; -1: class 2 when x < threshold

    def predict_sign(self, X: np.ndarray) -> np.ndarray:
        margin = self.polarity * (X[:, self.feature] - self.threshold)
        return np.where(margin > 0, 1, -1)


@dataclass
class BoostedModel:
    learners: list[Stump]
    alphas: list[float]
    n_rounds: int
    layout: list = field(default_factory=list)
    n_features: int = 0

    def to_dict(self) -> dict:
        return {
            "rounds": self.n_rounds,
            "n_features": self.n_features,
            "stumps": [
                {"feature": s.feature, "threshold": s.threshold, "polarity": s.polarity,
                 "alpha": a}
                for s, a in zip(self.learners, self.alphas)
            ],
            "layout": [list(item) for item in self.layout],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        learners = [Stump(int(s["feature"]), float(s["threshold"]), int(s["polarity"]))
                    for s in d["stumps"]]
        alphas = [float(s["alpha"]) for s in d["stumps"]]
        layout = [tuple(item) for item in d.get("layout", [])]
        return cls(learners, alphas, int(d["rounds"]), layout, int(d.get("n_features", 0)))


def save_model(path, model: BoostedModel) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)
        fh.write("\n")


def load_model(path) -> BoostedModel:
    with open(path) as fh:
        return BoostedModel.from_dict(json.load(fh))


# --- weak learner ------------------------------------------------------------

def fit_stump(X: np.ndarray, sign: np.ndarray, w: np.ndarray) -> Stump:
    """Exhaustive stump search minimising weighted error.

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties go to the lowest feature index, then the lowest threshold, then
    polarity +1.
    """
    n, f = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    w2 = np.where(sign > 0, w, 0.0)[order]
    w1 = np.where(sign > 0, 0.0, w)[order]
    c2 = np.cumsum(w2, axis=0)[:-1]
    c1 = np.cumsum(w1, axis=0)[:-1]
    total1 = w1.sum(axis=0)
    total = w.sum()
    # Polarity +1 predicts class 2 above the threshold.
    err_pos = c2 + (total1 - c1)
    err_neg = total - err_pos
    can_split = xs[1:] > xs[:-1]
    err_pos = np.where(can_split, err_pos, np.inf)
    err_neg = np.where(can_split, err_neg, np.inf)

    best = None  # (err, feature, threshold, polarity)
    for j in range(f):
        if not can_split[:, j].any():
            continue
        ip = int(np.argmin(err_pos[:, j]))
        ineg = int(np.argmin(err_neg[:, j]))
        if err_pos[ip, j] < err_neg[ineg, j] or (err_pos[ip, j] == err_neg[ineg, j] and ip <= ineg):
            i, pol, err = ip, 1, err_pos[ip, j]
        else:
            i, pol, err = ineg, -1, err_neg[ineg, j]
        if best is None or err < best[0]:
            lo, hi = xs[i, j], xs[i + 1, j]
            thr = 0.5 * (lo + hi)
            if not lo <= thr < hi:
                thr = lo
            best = (err, j, float(thr), pol)
    if best is None:
        # Every column is constant: predict class 1 everywhere.
        return Stump(0, float(X[:, 0].max()) if n else 0.0, 1)
    return Stump(best[1], best[2], best[3])


# --- boosting ----------------------------------------------------------------

def _signs(y: np.ndarray) -> np.ndarray:
    return np.where(y == 2, 1, -1)


def train_rusboost(data: LabeledDataset, n_rounds: int = DEFAULT_ROUNDS, seed: int = 0,
                   undersample: bool = True, history: list | None = None) -> BoostedModel:
    """Boost decision stumps, undersampling the majority class every round.

    Each round draws, without replacement and proportionally to the current
    weights, as many majority rows as there are minority rows; the stump is
    fit on that balanced sample and scored on the full weighted set. With
    ``undersample=False`` this is plain discrete AdaBoost. If ``history`` is
    a list, the sample weights after every accepted round are appended to it.
    """
    X, y = data.X, data.y
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2 or not set(classes.tolist()) <= {1, 2}:
        raise SingleClassDataset(f"need both classes 1 and 2, found {classes.tolist()}")
    if n_rounds < 1:
        raise ClassifyError("n_rounds must be >= 1")
    minority = int(classes[np.argmin(counts)]) if counts[0] != counts[1] else 2
    min_idx = np.flatnonzero(y == minority)
    maj_idx = np.flatnonzero(y != minority)

    rng = np.random.default_rng(seed)
    sign = _signs(y)
    n = len(y)
    w = np.full(n, 1.0 / n)
    learners, alphas = [], []
    for t in range(n_rounds):
        stump = None
        for _ in range(MAX_RETRIES + 1 if undersample else 1):
            if undersample:
                p = w[maj_idx] / w[maj_idx].sum()
                take = rng.choice(maj_idx, size=min(len(min_idx), len(maj_idx)),
                                  replace=False, p=p)
                idx = np.sort(np.concatenate([min_idx, take]))
            else:
                idx = np.arange(n)
            sw = w[idx] / w[idx].sum()
            cand = fit_stump(X[idx], sign[idx], sw)
            miss = cand.predict_sign(X) != sign
            eps = float(w[miss].sum())
            if eps < 0.5:
                stump = cand
                break
        if stump is None:
            if t == 0:
                raise NoUsefulSplit("no weak learner beat chance on the first round")
            break
        eps = max(eps, EPS_FLOOR)
        alpha = 0.5 * math.log((1.0 - eps) / eps)
        w = w * np.where(miss, math.exp(alpha), math.exp(-alpha))
        w /= w.sum()
        learners.append(stump)
        alphas.append(alpha)
        if history is not None:
            history.append(w.copy())
    return BoostedModel(learners, alphas, n_rounds, list(data.layout), X.shape[1])


def decision_scores(model: BoostedModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if model.n_features and X.shape[1] != model.n_features:
        raise DimensionMismatch(f"model expects {model.n_features} features, got {X.shape[1]}")
    score = np.zeros(X.shape[0])
    for stump, alpha in zip(model.learners, model.alphas):
        if stump.feature >= X.shape[1]:
            raise DimensionMismatch(f"stump uses feature {stump.feature}, row has {X.shape[1]}")
        score += alpha * stump.predict_sign(X)
    return score


def predict_batch(model: BoostedModel, X: np.ndarray) -> np.ndarray:
    return np.where(decision_scores(model, X) > 0, 2, 1)


def predict(model: BoostedModel, x) -> tuple[int, float]:
    """Weighted vote for one row; ties go to class 1."""
    score = float(decision_scores(model, np.asarray(x, dtype=np.float64)[None, :])[0])
    return (2 if score > 0 else 1), score


# --- evaluation --------------------------------------------------------------

@dataclass
class Metrics:
    precision: dict
    recall: dict
    f1: dict
    confusion: list  # confusion[i][j]: truth class i+1 predicted as class j+1
    minority_class: int
    f1_minority: float

    def to_dict(self) -> dict:
        return {
            "precision": {str(k): v for k, v in self.precision.items()},
            "recall": {str(k): v for k, v in self.recall.items()},
            "f1": {str(k): v for k, v in self.f1.items()},
            "confusion": self.confusion,
            "minority_class": self.minority_class,
            "f1_minority": self.f1_minority,
        }


def compute_metrics(predictions, truth) -> Metrics:
    pred = np.asarray(predictions)
    true = np.asarray(truth)
    if pred.shape != true.shape or pred.ndim != 1:
        raise LengthMismatch(f"{pred.shape} predictions vs {true.shape} labels")
    if len(true) == 0:
        raise LengthMismatch("no samples")
    conf = [[int(((true == a) & (pred == b)).sum()) for b in (1, 2)] for a in (1, 2)]
    precision, recall, f1 = {}, {}, {}
    for c in (1, 2):
        tp = conf[c - 1][c - 1]
        fp = conf[2 - c][c - 1]
        fn = conf[c - 1][2 - c]
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        precision[c], recall[c] = p, r
        f1[c] = 2 * p * r / (p + r) if p + r > 0 else 0.0
    n1, n2 = int((true == 1).sum()), int((true == 2).sum())
    minority = 1 if n1 < n2 else 2
    return Metrics(precision, recall, f1, conf, minority, f1[minority])


def fold_assignments(y, k: int, seed: int) -> np.ndarray:
    """Stratified folds: per-class shuffle, then round-robin dealing."""
    y = np.asarray(y)
    if k < 2:
        raise ClassifyError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    counter = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < k:
            raise TooFewSamples(f"class {c} has {len(idx)} samples, fewer than k={k}")
        perm = rng.permutation(idx)
        folds[perm] = (counter + np.arange(len(perm))) % k
        counter += len(perm)
    return folds


def fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def cross_val_predict(data: LabeledDataset, k: int = DEFAULT_FOLDS,
                      n_rounds: int = DEFAULT_ROUNDS, seed: int = 0,
                      undersample: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-fold predictions; returns ``(folds, predictions)``."""
    folds = fold_assignments(data.y, k, seed)
    pred = np.zeros(len(data), dtype=np.int64)
    for f in range(k):
        test = folds == f
        model = train_rusboost(data.subset(~test), n_rounds, fold_seed(seed, f), undersample)
        pred[test] = predict_batch(model, data.X[test])
    return folds, pred


def cross_validate(data: LabeledDataset, k: int = DEFAULT_FOLDS,
                   n_rounds: int = DEFAULT_ROUNDS, seed: int = 0) -> list[Metrics]:
    folds, pred = cross_val_predict(data, k, n_rounds, seed)
    return [compute_metrics(pred[folds == f], data.y[folds == f]) for f in range(k)]


# --- significance tests ------------------------------------------------------

def fisher_randomization_test(a, b, n_perm: int = 10000, seed: int = 0) -> float:
    """Two-sided paired sign-flip test on mean(a - b), with +1 smoothing."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if np.shape(a) != np.shape(b) or d.ndim != 1:
        raise LengthMismatch("paired samples must have equal length")
    if len(d) < 2:
        raise LengthMismatch("need at least 2 pairs")
    if n_perm < 1000:
        raise ClassifyError("n_perm must be >= 1000")
    obs = abs(d.mean())
    # Guard equality against rounding in the permuted means.
    bar = obs - 1e-12 * max(np.abs(d).max(), 1e-300)
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    chunk = max(1, min(n_perm, 2_000_000 // len(d)))
    while done < n_perm:
        m = min(chunk, n_perm - done)
        flips = rng.integers(0, 2, size=(m, len(d))) * 2 - 1
        stats = np.abs((flips * d).mean(axis=1))
        hits += int((stats >= bar).sum())
        done += m
    return (1 + hits) / (n_perm + 1)


def _betacf(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 1000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ClassifyError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    lbt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
           + a * math.log(x) + b * math.log1p(-x))
    bt = math.exp(lbt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if np.shape(a) != np.shape(b) or d.ndim != 1:
        raise LengthMismatch("paired samples must have equal length")
    n = len(d)
    if n < 2:
        raise LengthMismatch("need at least 2 pairs")
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise ZeroVariance("all paired differences are identical")
    t = d.mean() / (sd / math.sqrt(n))
    return t_two_sided_p(float(t), n - 1)
