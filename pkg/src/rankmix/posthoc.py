"""Latent-class analytics computed after a fit.

Class shares, hard assignment of respondents to classes, cross-tabs of
class membership against external covariates (expected or hard counts),
observed log-odds ratios from those tables, and worth tables per
(covariate set, class) for plotting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import AggregatedData, DataError
from .fitting import FitResult
from .inference import StandardErrorReport
from .model import worths


@dataclass
class ClassSummary:
    """Class shares at both levels plus offsets and optional intervals.

    ``pattern_shares`` averages the posterior weights over observed cells
    (each distinct pattern-set combination counts once);
    ``respondent_shares`` weights by cell counts and equals the fitted
    mixing weights at convergence.
    """

    pattern_shares: np.ndarray
    respondent_shares: np.ndarray
    offsets: np.ndarray  # (J, R)
    offset_lower: np.ndarray | None = None
    offset_upper: np.ndarray | None = None


def class_summary(
    fit: FitResult,
    data: AggregatedData,
    se_report: StandardErrorReport | None = None,
    z_value: float = 1.96,
) -> ClassSummary:
    w = fit.posteriors
    observed = data.counts > 0
    pattern_shares = w[observed].mean(axis=0)
    respondent_shares = (
        (data.counts[:, :, None] * w).sum(axis=(0, 1)) / data.counts.sum()
    )
    offsets = fit.design.class_offsets(fit.params.coefficients)
    lower = upper = None
    if se_report is not None:
        lower = np.full_like(offsets, np.nan)
        upper = np.full_like(offsets, np.nan)
        for idx, coef in enumerate(fit.design.coefficients):
            if coef.kind != "class":
                continue
            row = se_report.rows[idx]
            se = row.se_corrected if row.se_corrected is not None else row.se_raw
            if se is None:
                continue
            est = offsets[coef.item, coef.class_index]
            lower[coef.item, coef.class_index] = est - z_value * se
            upper[coef.item, coef.class_index] = est + z_value * se
        ref = fit.design.n_classes - 1
        lower[:, ref] = upper[:, ref] = 0.0
        lower[fit.design.n_items - 1, :] = upper[fit.design.n_items - 1, :] = 0.0
    return ClassSummary(
        pattern_shares=pattern_shares,
        respondent_shares=respondent_shares,
        offsets=offsets,
        offset_lower=lower,
        offset_upper=upper,
    )


@dataclass
class AssignmentTable:
    """Hard class assignment per respondent row.

    ``assigned`` holds 1-based class labels; argmax ties break to the
    lowest class index. Respondents sharing a (set, pattern) cell share
    an assignment by construction.
    """

    set_index: np.ndarray
    pattern_index: np.ndarray
    assigned: np.ndarray
    posterior: np.ndarray


def assign_classes(fit: FitResult, data: AggregatedData) -> AssignmentTable:
    if data.row_cells is None:
        raise DataError("aggregated data has no per-respondent rows to assign")
    w = fit.posteriors
    cell_best = np.argmax(w, axis=2)  # argmax takes the first max: lowest class
    cell_top = np.max(w, axis=2)
    k = data.row_cells[:, 0]
    l = data.row_cells[:, 1]
    return AssignmentTable(
        set_index=k.copy(),
        pattern_index=l.copy(),
        assigned=cell_best[k, l] + 1,
        posterior=cell_top[k, l],
    )


@dataclass
class CrossTab:
    """Class membership by an external category; expected or hard counts."""

    row_labels: list[str]
    table: np.ndarray  # (n_categories, R)
    mode: str


def crosstab(
    fit: FitResult,
    data: AggregatedData,
    categories,
    mode: str = "expected",
) -> CrossTab:
    """Cross-classify class membership with an external covariate.

    ``categories`` must align with the accepted respondent rows. Expected
    mode sums posterior weights, so row totals match category sizes up to
    rounding; hard mode counts argmax assignments and matches exactly.
    """
    if data.row_cells is None:
        raise DataError("aggregated data has no per-respondent rows")
    categories = list(categories)
    if len(categories) != data.row_cells.shape[0]:
        raise DataError(
            f"external column has {len(categories)} values for "
            f"{data.row_cells.shape[0]} respondents"
        )
    if mode not in ("expected", "hard"):
        raise ValueError(f"unknown crosstab mode {mode!r}")
    labels = sorted(set(str(c) for c in categories))
    label_pos = {lab: i for i, lab in enumerate(labels)}
    R = fit.design.n_classes
    table = np.zeros((len(labels), R))
    k = data.row_cells[:, 0]
    l = data.row_cells[:, 1]
    if mode == "expected":
        w = fit.posteriors[k, l]  # (N, R)
        for i, cat in enumerate(categories):
            table[label_pos[str(cat)]] += w[i]
    else:
        assigned = assign_classes(fit, data).assigned - 1
        for i, cat in enumerate(categories):
            table[label_pos[str(cat)], assigned[i]] += 1.0
    return CrossTab(row_labels=labels, table=table, mode=mode)


def log_odds_ratio(
    tab: CrossTab,
    class_a: int,
    class_b: int,
    row_a: int,
    row_b: int,
    continuity: bool = False,
) -> float:
    """Observed log-odds ratio of class_a vs class_b between two rows.

    Classes and rows are 0-based indices into the table. ``continuity``
    adds 0.5 to each referenced cell, which sparse hard-count tables may
    need; without it a zero cell raises.
    """
    cells = np.array(
        [
            tab.table[row_a, class_a],
            tab.table[row_b, class_b],
            tab.table[row_a, class_b],
            tab.table[row_b, class_a],
        ],
        dtype=np.float64,
    )
    if continuity:
        cells = cells + 0.5
    if np.any(cells <= 0):
        raise DataError(
            "zero cell in log-odds ratio; rerun with the continuity correction"
        )
    return float(np.log(cells[0] * cells[1] / (cells[2] * cells[3])))


def odds_vs_reference(offset: float) -> float:
    """Pairwise odds multiplier against the reference implied by one offset.

    Effects act on the half-log-odds scale, so an offset d multiplies the
    odds of beating the reference item by exp(2 d) relative to the
    reference class.
    """
    return float(np.exp(2.0 * offset))


def worth_table(fit: FitResult, data: AggregatedData) -> list[dict]:
    """Long-format worths per (covariate set, class, item).

    Every (set, class) block is a full worth vector summing to one; the
    reference class reflects the covariate effects alone.
    """
    design = fit.design
    effects = design.item_effects(fit.params.coefficients)  # (J, K, R)
    factor_names = [d.name for d in data.declarations if d.kind == "factor"]
    cont_names = [d.name for d in data.declarations if d.kind == "continuous"]
    rows = []
    for k, cset in enumerate(data.covariate_sets):
        covs = dict(zip(factor_names, cset.factor_levels))
        covs.update(zip(cont_names, cset.continuous_values))
        for r in range(design.n_classes):
            pi = worths(effects[:, k, r])
            for j, label in enumerate(design.spec.item_labels):
                rows.append(
                    {
                        "class": r + 1,
                        "set": k,
                        **covs,
                        "item": label,
                        "worth": float(pi[j]),
                    }
                )
    return rows
