"""Prediction harness: preprocessing, estimators, metrics, and the
subject-disjoint nested cross-validation protocol.

Every fit is logged with the subject sets that fed it and the subject
sets it was evaluated on, so leakage is something the test suite can
prove about executed fits rather than trust from the fold plan.

Estimators are deliberately small and closed over: ridge by its normal
equations, the linear SVM by sequential minimal optimization on the
dual. Inner-loop selection uses R^2 for regression and balanced
accuracy for classification; Pearson r is always recorded as the
headline regression metric.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats

from .corpus import LabelHierarchy
from .errors import ConfigError, ValidationError

# ---------------------------------------------------------------------------
# Preprocessing


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    sd: np.ndarray
    constant_columns: tuple[int, ...]


def zscore_fit(X) -> Scaler:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValidationError(f"need a nonempty 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("non-finite entries in feature matrix")
    mean = X.mean(axis=0)
    sd = X.std(axis=0)  # population SD
    constant = tuple(int(i) for i in np.flatnonzero(sd == 0.0))
    return Scaler(mean=mean, sd=sd, constant_columns=constant)


def zscore_apply(scaler: Scaler, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    safe_sd = np.where(scaler.sd == 0.0, 1.0, scaler.sd)
    out = (X - scaler.mean) / safe_sd
    if scaler.constant_columns:
        out[:, list(scaler.constant_columns)] = 0.0
    return out


@dataclass(frozen=True)
class PcaModel:
    mode: object  # "passthrough" or variance-fraction threshold
    mean: np.ndarray | None = None
    components: np.ndarray | None = None  # k x d
    explained_ratio: np.ndarray | None = None

    @property
    def passthrough(self) -> bool:
        return self.mode == "passthrough"


def pca_fit(X, mode) -> PcaModel:
    """mode: "passthrough", or a cumulative explained-variance threshold.
    Keeps the smallest k reaching the threshold, never fewer than one."""
    if mode == "passthrough":
        return PcaModel(mode=mode)
    threshold = float(mode)
    if not (0.0 < threshold <= 1.0):
        raise ConfigError(f"variance threshold must be in (0, 1], got {mode}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValidationError(f"need >= 2 rows for PCA, got shape {X.shape}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s ** 2
    total = var.sum()
    if total <= 0.0:
        # degenerate: all rows identical; keep one arbitrary axis
        comp = np.zeros((1, X.shape[1]))
        comp[0, 0] = 1.0
        return PcaModel(mode=threshold, mean=mean, components=comp,
                        explained_ratio=np.array([1.0]))
    ratio = var / total
    k = int(np.searchsorted(np.cumsum(ratio), threshold - 1e-12) + 1)
    k = max(1, min(k, len(s)))
    comp = vt[:k]
    # deterministic orientation: largest-|loading| entry positive
    for row in comp:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0
    return PcaModel(mode=threshold, mean=mean, components=comp,
                    explained_ratio=ratio[:k])


def pca_apply(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if model.passthrough:
        return X.copy()
    return (X - model.mean) @ model.components.T


# ---------------------------------------------------------------------------
# Estimators


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    lam: float


def ridge_fit(X, y, lam: float) -> RidgeModel:
    """min ||y - Xw - b||^2 + lam ||w||^2, intercept unpenalized; closed
    form on centered data."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < 2:
        raise ValidationError("need at least 2 rows")
    if lam < 0:
        raise ConfigError(f"lam must be >= 0, got {lam}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite inputs")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    d = X.shape[1]
    gram = Xc.T @ Xc + lam * np.eye(d)
    try:
        w = np.linalg.solve(gram, Xc.T @ yc)
    except np.linalg.LinAlgError:
        w = np.linalg.lstsq(gram, Xc.T @ yc, rcond=None)[0]
    b = y_mean - float(x_mean @ w)
    return RidgeModel(weights=w, intercept=b, lam=lam)


def predict_ridge(model: RidgeModel, X) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) @ model.weights + model.intercept


@dataclass(frozen=True)
class SvmModel:
    weights: np.ndarray
    bias: float
    C: float
    class_weighting: str
    iterations: int
    converged: bool


def svm_fit(X, y, C: float, class_weighting: str = "balanced",
            tol: float = 1e-6, max_iter: int | None = None) -> SvmModel:
    """Linear soft-margin SVM via SMO on the dual.

    Working pair by maximal KKT violation; per-sample box caps C_i carry
    the class weights (n / (2 * n_class) under "balanced"). Stops when
    the violation gap falls below tol.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ValidationError("labels must be -1/+1")
    if len(np.unique(y)) < 2:
        raise ValidationError("single-class training labels")
    if C <= 0:
        raise ConfigError(f"C must be > 0, got {C}")
    if class_weighting not in ("balanced", "none"):
        raise ConfigError(f"class_weighting must be 'balanced' or 'none'")
    n = X.shape[0]
    if class_weighting == "balanced":
        n_pos = int(np.sum(y > 0))
        n_neg = n - n_pos
        scale = np.where(y > 0, n / (2.0 * n_pos), n / (2.0 * n_neg))
    else:
        scale = np.ones(n)
    cap = C * scale

    K = X @ X.T
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of the dual objective
    if max_iter is None:
        max_iter = max(20000, 200 * n)

    it = 0
    converged = False
    while it < max_iter:
        it += 1
        yG = -y * G
        up = ((y > 0) & (alpha < cap - 1e-14)) | ((y < 0) & (alpha > 1e-14))
        low = ((y < 0) & (alpha < cap - 1e-14)) | ((y > 0) & (alpha > 1e-14))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(yG[up])])
        j = int(np.flatnonzero(low)[np.argmin(yG[low])])
        m, M = yG[i], yG[j]
        if m - M <= tol:
            converged = True
            break
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 1e-12:
            quad = 1e-12
        t = (m - M) / quad
        bound_i = cap[i] - alpha[i] if y[i] > 0 else alpha[i]
        bound_j = alpha[j] if y[j] > 0 else cap[j] - alpha[j]
        t = min(t, bound_i, bound_j)
        if t <= 0:
            converged = True
            break
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        G += t * y * (K[:, i] - K[:, j])

    w = X.T @ (alpha * y)
    free = (alpha > 1e-10) & (alpha < cap - 1e-10)
    if free.any():
        b = float(np.mean(-y[free] * G[free]))
    else:
        yG = -y * G
        up = ((y > 0) & (alpha < cap - 1e-14)) | ((y < 0) & (alpha > 1e-14))
        low = ((y < 0) & (alpha < cap - 1e-14)) | ((y > 0) & (alpha > 1e-14))
        hi = yG[up].max() if up.any() else 0.0
        lo = yG[low].min() if low.any() else 0.0
        b = float((hi + lo) / 2.0)
    return SvmModel(weights=w, bias=b, C=C, class_weighting=class_weighting,
                    iterations=it, converged=converged)


def svm_decision(model: SvmModel, X) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) @ model.weights + model.bias


def svm_predict(model: SvmModel, X) -> np.ndarray:
    return np.where(svm_decision(model, X) >= 0.0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# Metrics and group statistics


def pearson_r(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValidationError("length mismatch")
    yc = y - y.mean()
    pc = yhat - yhat.mean()
    denom = math.sqrt(float(yc @ yc) * float(pc @ pc))
    if denom == 0.0:
        return float("nan")
    return float(yc @ pc / denom)


def r2(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValidationError("length mismatch")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    ss_res = float(np.sum((y - yhat) ** 2))
    return 1.0 - ss_res / ss_tot


def balanced_accuracy(y, yhat) -> float:
    y = np.asarray(y)
    yhat = np.asarray(yhat)
    if y.shape != yhat.shape:
        raise ValidationError("length mismatch")
    recalls = []
    for cls in np.unique(y):
        sel = y == cls
        recalls.append(float(np.mean(yhat[sel] == cls)))
    return float(np.mean(recalls))


def welch_t(a, b) -> tuple[float, float]:
    """Unequal-variance t with Welch-Satterthwaite df; two-sided p."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValidationError("need n >= 2 per sample")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    na, nb = len(a), len(b)
    se2 = va / na + vb / nb
    if se2 == 0.0:
        return 0.0, 1.0  # identical constants
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = float(2.0 * sstats.t.sf(abs(t), df))
    return t, p


def chi_square_2x2(counts) -> tuple[float, float]:
    """Pearson chi-square on a 2x2 table, no continuity correction."""
    table = np.asarray(counts, dtype=np.float64)
    if table.shape != (2, 2):
        raise ValidationError(f"need a 2x2 table, got shape {table.shape}")
    if np.any(table < 0):
        raise ValidationError("negative counts")
    total = table.sum()
    if total <= 0:
        raise ValidationError("empty table")
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / total
    if np.any(expected == 0.0):
        raise ValidationError("zero expected count")
    stat = float(np.sum((table - expected) ** 2 / expected))
    p = float(sstats.chi2.sf(stat, df=1))
    return stat, p


# ---------------------------------------------------------------------------
# Targets and datasets


@dataclass(frozen=True)
class TargetSpec:
    level: int
    name: str
    kind: str  # "regression" | "classification"

    def __post_init__(self):
        if self.level not in (1, 2, 3):
            raise ConfigError(f"level must be 1, 2, or 3, got {self.level}")
        if self.kind not in ("regression", "classification"):
            raise ConfigError(f"kind must be regression or classification")


def _ci_get(mapping: dict, name: str):
    # task/domain ids are acronyms; accept any case on lookup
    wanted = name.lower()
    for key, value in mapping.items():
        if key.lower() == wanted:
            return value
    return None


def extract_target(labels: LabelHierarchy, spec: TargetSpec):
    """Target value for one session, or None when the label is absent.
    Classification targets come back as -1/+1 (positive = impaired)."""
    if spec.level == 1:
        value = _ci_get(labels.level1, spec.name)
    elif spec.level == 2:
        value = _ci_get(labels.level2, spec.name)
    else:
        if spec.name == "cerad_total":
            value = labels.cerad_total
        elif spec.name == "cerad_binary":
            value = labels.cerad_binary
        elif spec.name == "mci":
            value = labels.mci
        else:
            raise ConfigError(f"unknown level-3 target {spec.name!r}")
    if value is None:
        return None
    if spec.kind == "classification":
        return 1.0 if float(value) >= 0.5 else -1.0
    return float(value)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    subject_ids: tuple[str, ...]
    session_ids: tuple[str, ...]
    feature_names: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.X) == len(self.y) == len(self.subject_ids)
                == len(self.session_ids)):
            raise ValidationError("dataset rows misaligned")

    @property
    def subjects(self) -> frozenset:
        return frozenset(self.subject_ids)

    def rows_for(self, subjects) -> np.ndarray:
        subjects = set(subjects)
        return np.array([s in subjects for s in self.subject_ids])


# ---------------------------------------------------------------------------
# Fold plan


@dataclass(frozen=True)
class FoldPlan:
    outer: tuple[tuple[str, ...], ...]
    inner: tuple[tuple[tuple[str, ...], ...], ...]
    seed: int

    def outer_train_subjects(self, fold: int) -> frozenset:
        test = set(self.outer[fold])
        return frozenset(s for grp in self.outer for s in grp) - test


def _deal(subjects, k: int, rng, labels=None) -> list[list[str]]:
    """Round-robin deal, within-class when labels are given, so folds are
    balanced by subject count first and class ratio second."""
    folds: list[list[str]] = [[] for _ in range(k)]
    order = sorted(subjects)
    if labels is None:
        rng.shuffle(order)
        for pos, s in enumerate(order):
            folds[pos % k].append(s)
        return folds
    pos = 0
    for cls in sorted({labels[s] for s in order}, key=repr):
        members = [s for s in order if labels[s] == cls]
        rng.shuffle(members)
        for s in members:
            folds[pos % k].append(s)
            pos += 1
    return folds


def make_fold_plan(subject_ids, k_outer: int = 5, k_inner: int = 3,
                   seed: int = 0, labels=None) -> FoldPlan:
    """Subject-level fold construction; all of a subject's sessions stay
    together because membership is decided per subject."""
    subjects = sorted(set(subject_ids))
    if len(subjects) < k_outer:
        raise ValidationError(f"{len(subjects)} subjects cannot fill "
                              f"{k_outer} outer folds")
    rng = np.random.default_rng(seed)
    outer = _deal(subjects, k_outer, rng, labels)
    inner_all = []
    for f, test_grp in enumerate(outer):
        train = sorted(set(subjects) - set(test_grp))
        if len(train) < k_inner:
            raise ValidationError(f"outer fold {f} leaves {len(train)} "
                                  f"subjects for {k_inner} inner folds")
        inner_rng = np.random.default_rng([seed, f])
        inner = _deal(train, k_inner, inner_rng, labels)
        inner_all.append(tuple(tuple(g) for g in inner))
    return FoldPlan(outer=tuple(tuple(g) for g in outer),
                    inner=tuple(inner_all), seed=seed)


# ---------------------------------------------------------------------------
# Pipeline configs


PCA_MODES = ("passthrough", 0.95, 0.99)
RIDGE_LAMBDAS = (0.01, 0.1, 1.0, 10.0, 100.0)
SVM_CS = (0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class PipelineConfig:
    estimator: str  # "ridge" | "linear_svm"
    pca: object = "passthrough"
    lam: float | None = None
    C: float | None = None
    class_weighting: str = "balanced"

    def __post_init__(self):
        if self.estimator == "ridge":
            if self.lam is None or self.lam < 0 or self.C is not None:
                raise ConfigError("ridge config needs lam >= 0 and no C")
        elif self.estimator == "linear_svm":
            if self.C is None or self.C <= 0 or self.lam is not None:
                raise ConfigError("linear_svm config needs C > 0 and no lam")
        else:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.pca != "passthrough" and not isinstance(self.pca, float):
            raise ConfigError(f"pca must be 'passthrough' or a fraction")

    def describe(self) -> str:
        if self.estimator == "ridge":
            head = f"ridge(lam={self.lam})"
        else:
            head = f"linear_svm(C={self.C}, weighting={self.class_weighting})"
        return f"{head}, pca={self.pca}"


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {"estimator": cfg.estimator, "pca": cfg.pca, "lam": cfg.lam,
            "C": cfg.C, "class_weighting": cfg.class_weighting}


def config_from_dict(d: dict) -> PipelineConfig:
    pca = d.get("pca", "passthrough")
    if pca != "passthrough":
        pca = float(pca)
    return PipelineConfig(estimator=d["estimator"], pca=pca,
                          lam=d.get("lam"), C=d.get("C"),
                          class_weighting=d.get("class_weighting", "balanced"))


def default_grid(kind: str) -> list[PipelineConfig]:
    configs = []
    if kind == "regression":
        for pca in PCA_MODES:
            for lam in RIDGE_LAMBDAS:
                configs.append(PipelineConfig(estimator="ridge", pca=pca,
                                              lam=lam))
    else:
        for pca in PCA_MODES:
            for c in SVM_CS:
                for weighting in ("balanced", "none"):
                    configs.append(PipelineConfig(estimator="linear_svm",
                                                  pca=pca, C=c,
                                                  class_weighting=weighting))
    return configs


@dataclass(frozen=True)
class FittedPipeline:
    config: PipelineConfig
    scaler: Scaler
    pca: PcaModel
    model: object  # RidgeModel | SvmModel

    def transform(self, X) -> np.ndarray:
        return pca_apply(self.pca, zscore_apply(self.scaler, X))

    def predict(self, X) -> np.ndarray:
        Z = self.transform(X)
        if self.config.estimator == "ridge":
            return predict_ridge(self.model, Z)
        return svm_predict(self.model, Z)


def fit_pipeline(X, y, config: PipelineConfig) -> FittedPipeline:
    scaler = zscore_fit(X)
    Z = zscore_apply(scaler, X)
    pca = pca_fit(Z, config.pca)
    Zp = pca_apply(pca, Z)
    if config.estimator == "ridge":
        model = ridge_fit(Zp, y, config.lam)
    else:
        model = svm_fit(Zp, y, config.C, config.class_weighting)
    return FittedPipeline(config=config, scaler=scaler, pca=pca, model=model)


# ---------------------------------------------------------------------------
# Nested cross-validation


@dataclass(frozen=True)
class FitRecord:
    """Provenance of one executed fit: which subjects trained it, which
    subjects it was scored on."""

    stage: str  # "inner" | "outer" | "holdout"
    outer_fold: int
    inner_fold: int | None
    config_index: int | None
    train_subjects: frozenset
    eval_subjects: frozenset


@dataclass(frozen=True)
class FoldOutcome:
    fold: int
    best_config_index: int
    best_config: PipelineConfig
    test_metrics: dict
    inner_scores: tuple  # per config: mean inner metric (nan if invalid)


@dataclass(frozen=True)
class CvReport:
    target: TargetSpec
    folds: tuple[FoldOutcome, ...]
    summary: dict  # metric -> {"mean": float, "sd": float}
    majority_vote_index: int
    majority_vote_config: PipelineConfig
    warnings: tuple[str, ...]
    seed: int

    def to_dict(self) -> dict:
        return {
            "target": {"level": self.target.level, "name": self.target.name,
                       "kind": self.target.kind},
            "seed": self.seed,
            "folds": [
                {"fold": f.fold, "best_config_index": f.best_config_index,
                 "best_config": f.best_config.describe(),
                 "test_metrics": {k: v for k, v in f.test_metrics.items()},
                 "inner_scores": list(f.inner_scores)}
                for f in self.folds
            ],
            "summary": self.summary,
            "majority_vote_index": self.majority_vote_index,
            "majority_vote_config": self.majority_vote_config.describe(),
            "majority_vote_config_params": config_to_dict(
                self.majority_vote_config),
            "warnings": list(self.warnings),
        }


def _eval_metrics(kind: str, y_true, y_pred) -> dict:
    if kind == "regression":
        return {"r": pearson_r(y_true, y_pred), "r2": r2(y_true, y_pred)}
    return {"balanced_accuracy": balanced_accuracy(y_true, y_pred)}


def _inner_metric(kind: str, metrics: dict) -> float:
    return metrics["r2"] if kind == "regression" else metrics["balanced_accuracy"]


def _simplicity_key(index: int, config: PipelineConfig):
    return (0 if config.pca == "passthrough" else 1, index)


def nested_cv(data: Dataset, target: TargetSpec, grid=None,
              plan: FoldPlan | None = None, seed: int = 0, jobs: int = 1
              ) -> tuple[CvReport, list[FitRecord]]:
    """Outer loop for assessment, inner loop for config selection.

    Scaler and PCA fits happen inside each inner/outer training set only.
    Inner config-fold pairs that cannot be scored (single-class inner
    training data) are excluded from that config's mean with a warning.
    Results are reduced by (fold, config, inner) index, so the report is
    identical for any jobs value.
    """
    if grid is None:
        grid = default_grid(target.kind)
    grid = list(grid)
    if not grid:
        raise ConfigError("empty config grid")
    for cfg in grid:
        wants = "regression" if cfg.estimator == "ridge" else "classification"
        if wants != target.kind:
            raise ConfigError(f"config {cfg.describe()} does not fit a "
                              f"{target.kind} target")
    if plan is None:
        labels = None
        if target.kind == "classification":
            labels = {s: float(v) for s, v in zip(data.subject_ids, data.y)}
        plan = make_fold_plan(data.subject_ids, seed=seed, labels=labels)

    fit_log: list[FitRecord] = []
    notes: list[str] = []

    def run_unit(fold: int, cfg_idx: int, inner_idx: int):
        """Fit grid[cfg_idx] on (outer-train minus inner fold), score on
        the inner fold. Returns (metric, FitRecord) or (None, reason)."""
        val_subjects = frozenset(plan.inner[fold][inner_idx])
        train_subjects = plan.outer_train_subjects(fold) - val_subjects
        tr = data.rows_for(train_subjects)
        va = data.rows_for(val_subjects)
        record = FitRecord(stage="inner", outer_fold=fold, inner_fold=inner_idx,
                           config_index=cfg_idx, train_subjects=train_subjects,
                           eval_subjects=val_subjects)
        if not tr.any() or not va.any():
            return None, "empty side", record
        try:
            pipe = fit_pipeline(data.X[tr], data.y[tr], grid[cfg_idx])
        except ValidationError as exc:
            return None, str(exc), record
        metrics = _eval_metrics(target.kind, data.y[va], pipe.predict(data.X[va]))
        return _inner_metric(target.kind, metrics), None, record

    n_outer = len(plan.outer)
    n_inner = len(plan.inner[0])
    units = [(f, c, i) for f in range(n_outer)
             for c in range(len(grid)) for i in range(n_inner)]
    scores = np.full((n_outer, len(grid), n_inner), np.nan)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda u: run_unit(*u), units))
    else:
        outcomes = [run_unit(*u) for u in units]
    for (f, c, i), (metric, reason, record) in zip(units, outcomes):
        fit_log.append(record)
        if metric is None:
            notes.append(f"fold {f} config {c} inner {i} skipped: {reason}")
        else:
            scores[f, c, i] = metric

    folds = []
    for f in range(n_outer):
        config_means = np.full(len(grid), -np.inf)
        for c in range(len(grid)):
            vals = scores[f, c][~np.isnan(scores[f, c])]
            if vals.size:
                config_means[c] = float(vals.mean())
        best = int(np.argmax(config_means))  # ties: lowest index
        if not np.isfinite(config_means[best]):
            raise ValidationError(f"outer fold {f}: no config could be scored")
        test_subjects = frozenset(plan.outer[f])
        train_subjects = plan.outer_train_subjects(f)
        tr = data.rows_for(train_subjects)
        te = data.rows_for(test_subjects)
        pipe = fit_pipeline(data.X[tr], data.y[tr], grid[best])
        fit_log.append(FitRecord(stage="outer", outer_fold=f, inner_fold=None,
                                 config_index=best,
                                 train_subjects=train_subjects,
                                 eval_subjects=test_subjects))
        metrics = _eval_metrics(target.kind, data.y[te], pipe.predict(data.X[te]))
        folds.append(FoldOutcome(fold=f, best_config_index=best,
                                 best_config=grid[best], test_metrics=metrics,
                                 inner_scores=tuple(float(v) if np.isfinite(v)
                                                    else float("nan")
                                                    for v in config_means)))

    summary = {}
    for key in folds[0].test_metrics:
        vals = np.array([f.test_metrics[key] for f in folds])
        summary[key] = {"mean": float(np.mean(vals)), "sd": float(np.std(vals))}

    votes = Counter(f.best_config_index for f in folds)
    top_count = max(votes.values())
    tied = [idx for idx, cnt in votes.items() if cnt == top_count]
    winner = min(tied, key=lambda idx: _simplicity_key(idx, grid[idx]))
    report = CvReport(target=target, folds=tuple(folds), summary=summary,
                      majority_vote_index=winner,
                      majority_vote_config=grid[winner],
                      warnings=tuple(notes), seed=plan.seed)
    return report, fit_log


def holdout_eval(dev: Dataset, holdout: Dataset, config: PipelineConfig,
                 target: TargetSpec) -> tuple[dict, FitRecord]:
    """Refit on all development data, score once on the holdout set."""
    overlap = dev.subjects & holdout.subjects
    if overlap:
        raise ValidationError(f"subject overlap between development and "
                              f"holdout: {sorted(overlap)}")
    if tuple(dev.feature_names) != tuple(holdout.feature_names):
        raise ValidationError("feature name mismatch between sets")
    pipe = fit_pipeline(dev.X, dev.y, config)
    record = FitRecord(stage="holdout", outer_fold=-1, inner_fold=None,
                       config_index=None, train_subjects=dev.subjects,
                       eval_subjects=holdout.subjects)
    metrics = _eval_metrics(target.kind, holdout.y, pipe.predict(holdout.X))
    result = {
        "target": {"level": target.level, "name": target.name,
                   "kind": target.kind},
        "config": config.describe(),
        "n_dev_sessions": len(dev.y),
        "n_holdout_sessions": len(holdout.y),
        "metrics": metrics,
    }
    return result, record


def svm_feature_importance(pipe: FittedPipeline, feature_names
                           ) -> list[tuple[str, float]]:
    """Features ranked by |weight|; positive weights point toward the
    positive (impaired) class. Needs PCA passthrough so weights align
    with named features."""
    if not isinstance(pipe.model, SvmModel):
        raise ConfigError("importance ranking needs a linear SVM pipeline")
    if not pipe.pca.passthrough:
        raise ConfigError("PCA is active; refit with pca='passthrough' so "
                          "weights map to named features")
    names = list(feature_names)
    w = pipe.model.weights
    if len(names) != len(w):
        raise ValidationError(f"{len(names)} names for {len(w)} weights")
    if np.all(w == 0.0):
        warnings.warn("all SVM weights are zero; empty ranking")
        return []
    order = sorted(range(len(w)), key=lambda i: (-abs(w[i]), names[i]))
    return [(names[i], float(w[i])) for i in order]


def assert_no_leakage(fit_log) -> None:
    """Raise if any executed fit saw an evaluation subject in training."""
    for rec in fit_log:
        shared = rec.train_subjects & rec.eval_subjects
        if shared:
            raise ValidationError(f"leakage in {rec.stage} fit (outer fold "
                                  f"{rec.outer_fold}): {sorted(shared)}")
