"""Scoring discovered models: term matching, predictions and R-squared.

Term matching is exact canonical-key equality; the intercept is never
counted on either side.  Predictions use the posterior-mode
coefficients of the median probability model fitted on the training
split only; evaluation rows where a feature hits a domain guard are
excluded and tallied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bgsindy.features import evaluate_rows, parse


@dataclass(frozen=True)
class PosteriorSummary:
    """Aggregated posterior for one equation.

    mpm_keys are exactly the features with inclusion probability
    strictly above 0.5; mpm_betas come from the training-split
    posterior-mode fit, aligned with mpm_keys; the intercept is carried
    separately (always fitted, never selected against).
    """

    equation: int
    inclusion_probs: dict[str, float]
    mpm_keys: tuple[str, ...]
    mpm_betas: np.ndarray
    intercept: float


def match_terms(selected, truth) -> tuple[float, float]:
    """(power, fdr) of a selected term set against the ground truth.

    power = |selected & truth| / |truth|; fdr = |selected - truth| /
    max(|selected|, 1), so an empty selection has fdr 0.
    """
    selected = set(selected)
    truth = set(truth)
    if not truth:
        raise ValueError("truth term set is empty")
    power = len(selected & truth) / len(truth)
    fdr = len(selected - truth) / max(len(selected), 1)
    return power, fdr


def predict(summary: PosteriorSummary, dataset, split: str):
    """Median-probability-model predictions on one split.

    Returns (yhat, y, excluded): predictions and responses on the rows
    where every MPM feature is evaluable, plus the count of excluded
    rows.  No refitting happens here; coefficients are the training fit.
    """
    states = dataset.split_states(split)
    y = dataset.split_responses(split, summary.equation)
    n = states.shape[0]
    valid = np.ones(n, dtype=bool)
    cols = []
    for k in summary.mpm_keys:
        col, ok = evaluate_rows(parse(k), states)
        valid &= ok
        cols.append(col)
    yhat = np.full(n, summary.intercept)
    for col, beta in zip(cols, summary.mpm_betas):
        yhat = yhat + beta * col
    excluded = int((~valid).sum())
    return yhat[valid], y[valid], excluded


def r_squared(y, yhat, baseline_mean: float) -> float:
    """1 - SS_res / SS_base with a fixed baseline mean.

    The baseline is the training-split response mean for every split,
    which keeps the three splits comparable; values can be negative off
    the training data.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if len(y) < 2:
        raise ValueError("need at least 2 rows")
    ss_base = float(((y - baseline_mean) ** 2).sum())
    if ss_base == 0.0:
        raise ValueError("baseline variance is zero")
    ss_res = float(((y - yhat) ** 2).sum())
    return 1.0 - ss_res / ss_base


@dataclass(frozen=True)
class MetricsRow:
    system: str
    noise_sd: float
    replicate: int
    equation: int
    power: float
    fdr: float
    r2_train: float
    r2_insample: float
    r2_oos: float
    excluded_rows_train: int
    excluded_rows_insample: int
    excluded_rows_oos: int


def evaluate_equation(
    summary: PosteriorSummary,
    dataset,
    truth_terms,
    replicate: int,
) -> MetricsRow:
    """Assemble one metrics row: Power/FDR plus R2 on the three splits."""
    power, fdr = match_terms(summary.mpm_keys, truth_terms)
    baseline = float(dataset.split_responses("train", summary.equation).mean())
    r2 = {}
    excluded = {}
    for split in ("train", "insample", "oos"):
        yhat, y, exc = predict(summary, dataset, split)
        r2[split] = r_squared(y, yhat, baseline)
        excluded[split] = exc
    return MetricsRow(
        system=dataset.system,
        noise_sd=dataset.noise_sd,
        replicate=replicate,
        equation=summary.equation,
        power=power,
        fdr=fdr,
        r2_train=r2["train"],
        r2_insample=r2["insample"],
        r2_oos=r2["oos"],
        excluded_rows_train=excluded["train"],
        excluded_rows_insample=excluded["insample"],
        excluded_rows_oos=excluded["oos"],
    )
