"""
Equal error rate, z-normalization and logistic-regression score fusion.

Scores follow the detection convention "higher means more genuine": a trial
is accepted as genuine when ``score >= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .errors import ConvergenceError, DataError

GENUINE, SPOOF = 1, 0
LABEL_NAMES = {"genuine": GENUINE, "spoof": SPOOF}


@dataclass
class ScoreSet:
    """Scores of one system on one partition, with optional labels (1 = genuine)."""

    ids: list[str]
    scores: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.ids = list(self.ids)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.ids),):
            raise DataError("one score per trial id is required")
        if not np.isfinite(self.scores).all():
            raise DataError("scores must be finite")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate trial ids")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.scores.shape:
                raise DataError("one label per trial is required")

    def __len__(self) -> int:
        return len(self.ids)

    def aligned_to(self, ids: list[str]) -> "ScoreSet":
        """Reorder to ``ids``; every id must be present and no extra ids allowed."""
        pos = {u: i for i, u in enumerate(self.ids)}
        missing = [u for u in ids if u not in pos]
        if missing or len(ids) != len(self.ids):
            raise DataError(f"trial ids differ between score sets (e.g. missing {missing[:3]})")
        order = np.array([pos[u] for u in ids], dtype=np.int64)
        labels = None if self.labels is None else self.labels[order]
        return ScoreSet(list(ids), self.scores[order], labels)

    def with_labels(self, key: dict[str, int]) -> "ScoreSet":
        try:
            labels = np.array([key[u] for u in self.ids])
        except KeyError as exc:
            raise DataError(f"no label for trial {exc.args[0]!r}") from None
        return ScoreSet(self.ids, self.scores, labels)


# ---------------------------------------------------------------------------
# EER


def _check_binary(labels: np.ndarray) -> None:
    if not np.isin(labels, (GENUINE, SPOOF)).all():
        raise DataError("labels must be 0 (spoof) or 1 (genuine)")
    if labels.min() == labels.max():
        raise DataError("EER needs both genuine and spoof trials")


def compute_eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and its threshold.

    With ``FAR(t) = #{spoof >= t} / n_spoof`` and ``FRR(t) = #{genuine < t} /
    n_genuine`` evaluated at every distinct score and at ``+inf``, the crossing
    threshold is the first (smallest) ``t`` with ``FRR(t) >= FAR(t)``, and the
    EER is the midpoint ``(FAR(t) + FRR(t)) / 2`` there.  Values above 0.5
    mean the scores are polarity-inverted.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_binary(labels)
    n_gen = int((labels == GENUINE).sum())
    n_spf = labels.size - n_gen

    thresholds = np.append(np.unique(scores), np.inf)
    gen = np.sort(scores[labels == GENUINE])
    spf = np.sort(scores[labels == SPOOF])
    rejected = np.searchsorted(gen, thresholds, side="left")
    accepted = n_spf - np.searchsorted(spf, thresholds, side="left")
    far = accepted / n_spf
    frr = rejected / n_gen
    k = int(np.argmax(frr >= far))
    return (far[k] + frr[k]) / 2, float(thresholds[k])


# ---------------------------------------------------------------------------
# z-normalization


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float


def znorm_fit(scores) -> NormStats:
    """Mean and population standard deviation of dev scores."""
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    if s.size == 0:
        raise DataError("cannot fit normalization on an empty score set")
    std = float(s.std())
    if not std > 0:
        raise DataError("cannot z-normalize scores with zero variance")
    return NormStats(float(s.mean()), std)


def znorm_apply(scores, stats: NormStats):
    """``(s - mean) / std``; accepts a :class:`ScoreSet` or an array."""
    if isinstance(scores, ScoreSet):
        return ScoreSet(scores.ids, (scores.scores - stats.mean) / stats.std, scores.labels)
    return (np.asarray(scores, dtype=np.float64) - stats.mean) / stats.std


# ---------------------------------------------------------------------------
# logistic regression


@dataclass
class LogisticFit:
    weights: np.ndarray
    bias: float
    loss: float
    grad_norm: float
    n_iter: int


def logistic_objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean logistic loss plus ``l2/2 * ||w||^2`` and its gradient in ``(w, b)``."""
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    loss = -log_expit((2 * y - 1) * z).mean() + 0.5 * l2 * (w @ w)
    r = expit(z) - y
    grad = np.append(X.T @ r / y.size + l2 * w, r.mean())
    return float(loss), grad


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    l2: float = 1e-4,
    init: np.ndarray | None = None,
    tol: float = 1e-6,
    max_iter: int = 1_000_000,
) -> LogisticFit:
    """Full-batch gradient descent with Armijo backtracking.

    The step grows by 2x after each accepted step and halves until the
    sufficient-decrease condition holds.  Stops when the gradient norm drops
    below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    theta = np.zeros(X.shape[1] + 1) if init is None else np.array(init, dtype=np.float64)
    step = 1.0
    loss, grad = logistic_objective(theta, X, y, l2)
    for it in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            return LogisticFit(theta[:-1].copy(), float(theta[-1]), loss, gnorm, it)
        step = min(2 * step, 1e6)
        while True:
            cand = theta - step * grad
            cand_loss, cand_grad = logistic_objective(cand, X, y, l2)
            if cand_loss <= loss - 0.5 * step * (grad @ grad) or step < 1e-16:
                break
            step *= 0.5
        theta, loss, grad = cand, cand_loss, cand_grad
    raise ConvergenceError(f"logistic regression did not converge in {max_iter} iterations")


# ---------------------------------------------------------------------------
# fusion


@dataclass
class FusionModel:
    """Per-system dev normalization plus affine fusion weights."""

    norm: list[NormStats]
    weights: np.ndarray
    bias: float
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.norm),):
            raise ValueError("one weight per system is required")

    def to_dict(self) -> dict:
        return {
            "systems": [{"mean": s.mean, "std": s.std} for s in self.norm],
            "weights": [float(w) for w in self.weights],
            "bias": float(self.bias),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionModel":
        try:
            norm = [NormStats(float(s["mean"]), float(s["std"])) for s in d["systems"]]
            return cls(norm, np.array(d["weights"], dtype=np.float64), float(d["bias"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed fusion model ({exc})") from exc


def _stack(score_sets: list[ScoreSet], norm: list[NormStats]) -> tuple[list[str], np.ndarray]:
    ids = score_sets[0].ids
    cols = [znorm_apply(s.aligned_to(ids).scores, st) for s, st in zip(score_sets, norm)]
    return ids, np.stack(cols, axis=1)


def fit_fusion(
    dev_sets: list[ScoreSet],
    labels=None,
    l2: float = 1e-4,
    init: np.ndarray | None = None,
    tol: float = 1e-6,
) -> FusionModel:
    """Z-normalize each system on dev, then fit logistic-regression weights.

    ``labels`` (0/1, aligned to the first set's ids) may be omitted when the
    first score set carries labels.
    """
    if not dev_sets:
        raise DataError("no score sets to fuse")
    if labels is None:
        labels = dev_sets[0].labels
    if labels is None:
        raise DataError("fusion needs trial labels")
    labels = np.asarray(labels)
    _check_binary(labels)
    norm = [znorm_fit(s) for s in dev_sets]
    _, X = _stack(dev_sets, norm)
    fit = fit_logistic(X, labels, l2=l2, init=init, tol=tol)
    info = {"loss": fit.loss, "grad_norm": fit.grad_norm, "n_iter": fit.n_iter}
    return FusionModel(norm, fit.weights, fit.bias, info)


def apply_fusion(eval_sets: list[ScoreSet], model: FusionModel) -> ScoreSet:
    """Fused score ``w . z(s) + b`` per trial, in the first set's trial order."""
    if len(eval_sets) != len(model.norm):
        raise DataError(f"fusion model expects {len(model.norm)} systems, got {len(eval_sets)}")
    ids, Z = _stack(eval_sets, model.norm)
    return ScoreSet(ids, Z @ model.weights + model.bias, eval_sets[0].labels)
