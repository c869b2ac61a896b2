"""Posterior estimators for unvetted labels, and their fitting routines.

Three families produce p(z_i=1 | observations) for unvetted items:

* naive: trust the noisy label outright (p_i = y_i);
* learned tag: Bayes combination of fitted flip priors p(y|z) with a
  per-category logistic score calibrator p(z|s);
* learned match: logistic model on instance-pair geometry (noisy IoU, box
  areas, category) predicting whether a detection clears the IoU threshold.

The vetted-only baseline is not a posterior at all: it evaluates the exact
metric on the vetted subset and signals not-applicable when that subset is
too small, which callers must treat as distinct from a numeric zero.

All fits are deterministic: zero initialization, fixed iteration budget,
L2 penalty on non-bias weights, and no randomness anywhere.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EstimatorError, NotApplicable
from .metrics import AveragePrecision, MetricSpec, PosteriorEstimate, PrecAtK, average_precision, prec_at_k
from .pool import EvaluationPool

DEFAULT_L2 = 1e-3
DEFAULT_MIN_VETTED = 5
MAX_ITER = 500
GRAD_TOL = 1e-8


def sigmoid(z):
    z = np.clip(z, -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(-z))


def fit_logistic(X, y, l2: float = DEFAULT_L2, max_iter: int = MAX_ITER, tol: float = GRAD_TOL):
    """Penalized-likelihood logistic fit by damped Newton iterations.

    The L2 penalty applies to the weights only, never the bias, so the
    fitted base rate stays unshrunk. Perfect separation therefore caps the
    weights at a finite value instead of diverging. Returns
    (weights, bias, converged).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    X1 = np.hstack([X, np.ones((n, 1))])
    beta = np.zeros(d + 1)
    penalty = np.append(np.full(d, l2), 0.0)

    def objective(b):
        z = X1 @ b
        # log-likelihood with stable log1p(exp)
        ll = float(y @ z - np.logaddexp(0.0, z).sum())
        return -ll + 0.5 * float(penalty @ (b * b))

    converged = False
    for _ in range(max_iter):
        p = sigmoid(X1 @ beta)
        grad = X1.T @ (y - p) - penalty * beta
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        w = np.maximum(p * (1.0 - p), 1e-12)
        hess = (X1 * w[:, None]).T @ X1 + np.diag(penalty + 1e-10)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        current = objective(beta)
        scale = 1.0
        for _ in range(30):
            cand = beta + scale * step
            if objective(cand) <= current:
                break
            scale *= 0.5
        beta = beta + scale * step
    return beta[:d], float(beta[d]), converged


def _smoothed_rate(n_pos: int, n: int) -> float:
    return (n_pos + 1.0) / (n + 2.0)


# -- flip priors ---------------------------------------------------------


@dataclass(frozen=True)
class CategoryPriors:
    p_y1_given_z1: float
    p_y1_given_z0: float
    n_z1: int = 0
    n_z0: int = 0


@dataclass
class FlipPriors:
    """Per-category p(y|z) with a pooled fallback for thin categories."""

    per_category: dict[str, CategoryPriors]
    pooled: CategoryPriors
    min_count: int = DEFAULT_MIN_VETTED

    def for_category(self, category: str) -> CategoryPriors:
        pri = self.per_category.get(category)
        if pri is None or (pri.n_z1 + pri.n_z0) < self.min_count:
            return self.pooled
        return pri

    def to_json(self) -> dict:
        return {
            "min_count": self.min_count,
            "pooled": vars(self.pooled).copy(),
            "per_category": {c: vars(p).copy() for c, p in self.per_category.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FlipPriors":
        return cls(
            per_category={c: CategoryPriors(**p) for c, p in obj["per_category"].items()},
            pooled=CategoryPriors(**obj["pooled"]),
            min_count=int(obj["min_count"]),
        )


def fit_flip_priors(pool: EvaluationPool, min_count: int = DEFAULT_MIN_VETTED) -> FlipPriors:
    """Maximum-likelihood flip priors with add-one smoothing.

    p(y=1|z=1) = (#{y=1, truth=1} + 1) / (#{truth=1} + 2), same for z=0,
    counted over vetted items per category; the pooled estimate over all
    vetted items backs categories with fewer than ``min_count`` vetted.
    """
    vet = pool.vetted_mask

    def counts(mask) -> CategoryPriors:
        z = pool.truth[mask]
        y = pool.noisy[mask]
        n_z1 = int(np.count_nonzero(z == 1))
        n_z0 = int(np.count_nonzero(z == 0))
        n11 = int(np.count_nonzero((z == 1) & (y == 1)))
        n10 = int(np.count_nonzero((z == 0) & (y == 1)))
        return CategoryPriors(
            p_y1_given_z1=_smoothed_rate(n11, n_z1),
            p_y1_given_z0=_smoothed_rate(n10, n_z0),
            n_z1=n_z1,
            n_z0=n_z0,
        )

    per_category = {}
    for code, cat in enumerate(pool.categories):
        per_category[cat] = counts(vet & (pool.cat_codes == code))
    return FlipPriors(per_category=per_category, pooled=counts(vet), min_count=min_count)


# -- score calibrator ----------------------------------------------------


@dataclass(frozen=True)
class CategoryCalibrator:
    weight: float
    bias: float
    converged: bool
    n_fit: int = 0

    def predict(self, scores):
        return sigmoid(self.weight * np.asarray(scores, dtype=np.float64) + self.bias)


@dataclass
class ScoreCalibrator:
    """Per-category logistic p(z=1|s), pooled fallback below min_count."""

    per_category: dict[str, CategoryCalibrator]
    pooled: CategoryCalibrator
    min_count: int = DEFAULT_MIN_VETTED

    def for_category(self, category: str) -> CategoryCalibrator:
        cal = self.per_category.get(category)
        if cal is None or cal.n_fit < self.min_count:
            return self.pooled
        return cal

    def predict(self, category: str, scores):
        return self.for_category(category).predict(scores)

    def to_json(self) -> dict:
        return {
            "min_count": self.min_count,
            "pooled": vars(self.pooled).copy(),
            "per_category": {c: vars(m).copy() for c, m in self.per_category.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScoreCalibrator":
        return cls(
            per_category={c: CategoryCalibrator(**m) for c, m in obj["per_category"].items()},
            pooled=CategoryCalibrator(**obj["pooled"]),
            min_count=int(obj["min_count"]),
        )


def _fit_category_calibrator(scores, labels, l2: float) -> CategoryCalibrator:
    n = labels.shape[0]
    n_pos = int(labels.sum())
    if n == 0 or n_pos == 0 or n_pos == n:
        # single class (or nothing): prior-only model at the smoothed rate
        rate = _smoothed_rate(n_pos, n)
        return CategoryCalibrator(0.0, float(np.log(rate / (1.0 - rate))), False, n)
    mu, sd = float(scores.mean()), float(scores.std())
    if sd == 0.0:
        rate = _smoothed_rate(n_pos, n)
        return CategoryCalibrator(0.0, float(np.log(rate / (1.0 - rate))), False, n)
    std = (scores - mu) / sd
    w, b, converged = fit_logistic(std[:, None], labels, l2=l2)
    # fold standardization back into raw-score parameters
    return CategoryCalibrator(float(w[0] / sd), float(b - w[0] * mu / sd), converged, n)


def fit_score_calibrator(
    pool: EvaluationPool,
    min_count: int = DEFAULT_MIN_VETTED,
    l2: float = DEFAULT_L2,
) -> ScoreCalibrator:
    """Fit p(z=1|s) by logistic regression on the vetted items.

    Deterministic: zero init, fixed iteration budget, L2 cap against
    separation. Categories with fewer than ``min_count`` vetted items defer
    to the pooled model; single-class categories get a prior-only constant.
    """
    vet = pool.vetted_mask
    per_category = {}
    for code, cat in enumerate(pool.categories):
        mask = vet & (pool.cat_codes == code)
        per_category[cat] = _fit_category_calibrator(
            pool.scores[mask], pool.truth[mask].astype(np.float64), l2
        )
    pooled = _fit_category_calibrator(
        pool.scores[vet], pool.truth[vet].astype(np.float64), l2
    )
    return ScoreCalibrator(per_category=per_category, pooled=pooled, min_count=min_count)


# -- tag posterior ---------------------------------------------------------


def tag_posterior(item, priors: FlipPriors, calibrator: ScoreCalibrator) -> float:
    """Posterior p(z=1|s,y): flip priors reweight the calibrated score.

    p(z|s,y) = p(y|z) p(z|s) / sum_v p(y|z=v) p(z=v|s). A degenerate zero
    denominator (possible only with hard 0/1 priors) falls back to the
    calibrator value p(z=1|s) and warns.
    """
    if item.label.vetted:
        raise EstimatorError(f"item {item.item_id!r} is already vetted")
    pri = priors.for_category(item.category)
    p1 = float(calibrator.predict(item.category, item.score))
    if item.label.noisy == 1:
        like1, like0 = pri.p_y1_given_z1, pri.p_y1_given_z0
    else:
        like1, like0 = 1.0 - pri.p_y1_given_z1, 1.0 - pri.p_y1_given_z0
    num = like1 * p1
    den = num + like0 * (1.0 - p1)
    if den == 0.0:
        warnings.warn("degenerate tag posterior denominator; using p(z|s) only")
        return p1
    return num / den


def _tag_posterior_vector(noisy, scores, pri: CategoryPriors, cal: CategoryCalibrator):
    p1 = cal.predict(scores)
    like1 = np.where(noisy == 1, pri.p_y1_given_z1, 1.0 - pri.p_y1_given_z1)
    like0 = np.where(noisy == 1, pri.p_y1_given_z0, 1.0 - pri.p_y1_given_z0)
    num = like1 * p1
    den = num + like0 * (1.0 - p1)
    return np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), p1)


# -- baselines -------------------------------------------------------------


def naive_posterior(pool: EvaluationPool) -> PosteriorEstimate:
    """Trust every noisy label: p_i = y_i for each unvetted item."""
    unvet = ~pool.vetted_mask
    return PosteriorEstimate(
        {pool.ids[i]: float(pool.noisy[i]) for i in np.flatnonzero(unvet)}
    )


def vetted_only_metric(
    pool: EvaluationPool, spec: MetricSpec, category: str, fixed_np: float | None = None
) -> float:
    """Exact metric on the vetted subset of one category, re-sorted by score.

    Raises :class:`NotApplicable` until enough items are vetted: Prec@K
    needs at least K vetted items in the category, AP at least one vetted
    positive. For benchmarks whose positive count is fixed externally (the
    ground-truth instance count of a detection task), ``fixed_np`` scales
    with the vetted fraction so the subset is scored as its own benchmark;
    it is never allowed below the retrieved-positive count.
    """
    order = pool.per_category_order(category)
    vetted = [i for i in order if pool.truth[i] != -1]
    labels = [int(pool.truth[i]) for i in vetted]
    if isinstance(spec, PrecAtK):
        if len(labels) < spec.k:
            raise NotApplicable(
                f"{category}: only {len(labels)} vetted items, Prec@{spec.k} needs {spec.k}"
            )
        return prec_at_k(labels, spec.k)
    if isinstance(spec, AveragePrecision):
        n_p: float = float(sum(labels))
        if fixed_np is not None and order.shape[0]:
            n_p = max(fixed_np * len(labels) / order.shape[0], n_p)
        if n_p == 0:
            raise NotApplicable(f"{category}: no vetted positives yet")
        return average_precision(labels, n_p)
    raise EstimatorError(f"vetted-only does not support {spec!r}")


# -- instance match predictor ----------------------------------------------


@dataclass
class MatchPredictor:
    """Logistic match-probability model on instance-pair geometry.

    Feature vector: noisy IoU, detection and ground-truth box areas
    (normalized by image area) plus their logs, then a category one-hot.
    Numeric features are standardized with constants frozen at fit time.
    A degenerate training set collapses to a constant predictor.
    """

    categories: tuple[str, ...]
    feature_means: np.ndarray
    feature_scales: np.ndarray
    weights: np.ndarray
    bias: float
    converged: bool
    constant_rate: float | None = None
    n_fit: int = 0

    NUMERIC = ("noisy_iou", "det_area", "gt_area", "log_det_area", "log_gt_area")

    def features(self, pair, image_area: float) -> np.ndarray:
        det_area = pair.det.box.area / image_area
        gt_area = pair.gt.box.area / image_area
        numeric = np.array(
            [
                pair.noisy_iou,
                det_area,
                gt_area,
                math.log(det_area + 1e-9),
                math.log(gt_area + 1e-9),
            ]
        )
        onehot = np.zeros(len(self.categories))
        if pair.det.category in self.categories:
            onehot[self.categories.index(pair.det.category)] = 1.0
        return np.concatenate([numeric, onehot])

    def predict_row(self, row: np.ndarray) -> float:
        if self.constant_rate is not None:
            return self.constant_rate
        k = len(self.NUMERIC)
        if np.any(self.feature_scales[:k] == 0.0):
            raise EstimatorError("match predictor has a zero feature scale")
        std = (row[:k] - self.feature_means[:k]) / self.feature_scales[:k]
        x = np.concatenate([std, row[k:]])
        return float(sigmoid(x @ self.weights + self.bias))

    def to_json(self) -> dict:
        return {
            "categories": list(self.categories),
            "feature_means": self.feature_means.tolist(),
            "feature_scales": self.feature_scales.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "converged": self.converged,
            "constant_rate": self.constant_rate,
            "n_fit": self.n_fit,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MatchPredictor":
        return cls(
            categories=tuple(obj["categories"]),
            feature_means=np.asarray(obj["feature_means"], dtype=np.float64),
            feature_scales=np.asarray(obj["feature_scales"], dtype=np.float64),
            weights=np.asarray(obj["weights"], dtype=np.float64),
            bias=float(obj["bias"]),
            converged=bool(obj["converged"]),
            constant_rate=obj["constant_rate"],
            n_fit=int(obj["n_fit"]),
        )


def fit_match_predictor(
    rows: np.ndarray,
    labels: np.ndarray,
    categories: tuple[str, ...],
    l2: float = DEFAULT_L2,
    min_pairs: int = 10,
) -> MatchPredictor:
    """Fit the match predictor on precomputed feature rows and labels.

    ``rows`` come from :meth:`MatchPredictor.features`. Fewer than
    ``min_pairs`` rows or a single-class label set gives a constant
    predictor at the smoothed observed rate, flagged unconverged.
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = labels.shape[0]
    n_pos = int(labels.sum())
    k = len(MatchPredictor.NUMERIC)
    blank = MatchPredictor(
        categories=categories,
        feature_means=np.zeros(k + len(categories)),
        feature_scales=np.ones(k + len(categories)),
        weights=np.zeros(k + len(categories)),
        bias=0.0,
        converged=False,
        constant_rate=_smoothed_rate(n_pos, n),
        n_fit=n,
    )
    if n < min_pairs or n_pos == 0 or n_pos == n:
        return blank

    means = np.zeros(k + len(categories))
    scales = np.ones(k + len(categories))
    means[:k] = rows[:, :k].mean(axis=0)
    scales[:k] = rows[:, :k].std(axis=0)
    live = scales[:k] > 1e-12  # features span bounded ranges, so absolute is fine
    if not live.any() and rows[:, k:].std(axis=0).max(initial=0.0) <= 1e-12:
        return blank  # every pair identical
    scales[:k][~live] = 1.0  # constant feature: weight carries no signal

    X = rows.copy()
    X[:, :k] = (X[:, :k] - means[:k]) / scales[:k]
    w, b, converged = fit_logistic(X, labels, l2=l2)
    return MatchPredictor(
        categories=categories,
        feature_means=means,
        feature_scales=scales,
        weights=w,
        bias=b,
        converged=converged,
        constant_rate=None,
        n_fit=n,
    )


def match_probability(pair, model: MatchPredictor, image_area: float) -> float:
    """Match probability for an unvetted pair; vetted pairs must not call this."""
    if pair.gt is None:
        return 0.0
    if pair.gt.mask is not None:
        raise EstimatorError(
            f"pair for {pair.det.det_id!r} has a vetted ground truth; "
            "use its exact mask IoU instead"
        )
    return model.predict_row(model.features(pair, image_area))
