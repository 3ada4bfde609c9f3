"""Pattern-model structure: linear predictor, probabilities, likelihood.

The probability that item i beats item j is pi_i / (pi_i + pi_j) with
worths pi_i = exp(2 a_i); a_i is the item effect. A whole ranking pattern
l gets probability proportional to exp(eta_l) with

    eta_l = sum_{i<j} y_ij,l (a_i - a_j) = sum_i s_li a_i,

where s_li is net wins of item i in pattern l, and the normalization runs
over the transitive patterns only. Item effects expand over covariate
sets k and latent classes r as

    a_ikr = lambda_i + factor effects(k) + x_k * slope_i + offset_ir,

with the last item as reference (all its coefficients fixed at 0), the
first factor level as reference, and the last class as reference
(offset 0). Class r carries mixing weight q_r; the observed-data
likelihood multiplies sum_r q_r P_lkr over cells to the power n_lk.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from .data import AggregatedData, DataError


@dataclass(frozen=True)
class ModelSpec:
    """Items, covariate terms, and number of latent classes.

    Terms name declared covariates; "A:B" is a factor-by-factor
    interaction. Every term acts item-wise (an item by covariate
    interaction in the underlying log-linear model).
    """

    item_labels: tuple[str, ...]
    terms: tuple[str, ...] = ()
    n_classes: int = 1

    def __post_init__(self):
        if len(self.item_labels) < 2:
            raise ValueError("need at least two items")
        if len(set(self.item_labels)) != len(self.item_labels):
            raise ValueError("item labels must be distinct")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")

    @property
    def n_items(self) -> int:
        return len(self.item_labels)

    @property
    def reference_item(self) -> int:
        return self.n_items - 1

    def with_classes(self, n_classes: int) -> "ModelSpec":
        return replace(self, n_classes=n_classes)


@dataclass(frozen=True)
class Coefficient:
    """One free structural coefficient in the design."""

    name: str
    kind: str  # "item", "factor", "continuous", "class"
    item: int
    term: str | None = None
    levels: tuple[str, ...] | None = None
    class_index: int | None = None  # 0-based, < R-1


@dataclass
class Parameters:
    """Structural coefficients plus mixing weights.

    ``coefficients`` follows the design's coefficient order (item mains,
    covariate terms, class offsets); ``mixing`` holds all R weights.
    """

    coefficients: np.ndarray
    mixing: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        self.mixing = np.asarray(self.mixing, dtype=np.float64)
        if self.mixing.ndim != 1 or self.mixing.size < 1:
            raise ValueError("mixing must be a nonempty vector")
        if np.any(self.mixing <= 0) or abs(self.mixing.sum() - 1.0) > 1e-8:
            raise ValueError("mixing weights must be positive and sum to 1")

    @property
    def n_classes(self) -> int:
        return self.mixing.size

    def copy(self) -> "Parameters":
        return Parameters(self.coefficients.copy(), self.mixing.copy())


class Design:
    """Resolved design linking a ModelSpec to an aggregated data set.

    Builds the coefficient list and the (J, K, R, p) tensor mapping the
    coefficient vector to per-(item, covariate set, class) effects.
    """

    def __init__(self, spec: ModelSpec, data: AggregatedData):
        if spec.n_items != data.space.n_items:
            raise DataError(
                f"model has {spec.n_items} items but data has {data.space.n_items}"
            )
        self.spec = spec
        self.data = data
        self.S = data.space.score_matrix()  # (L, J)
        self.coefficients: list[Coefficient] = []
        J, K, R = spec.n_items, data.n_sets, spec.n_classes
        blocks: list[np.ndarray] = []

        factor_names = [d.name for d in data.declarations if d.kind == "factor"]
        cont_names = [d.name for d in data.declarations if d.kind == "continuous"]

        def item_block(set_profile: np.ndarray, class_profile: np.ndarray, item: int):
            b = np.zeros((J, K, R))
            b[item] = np.outer(set_profile, class_profile)
            return b

        ones_k = np.ones(K)
        ones_r = np.ones(R)
        for j in range(J - 1):
            self.coefficients.append(
                Coefficient(name=spec.item_labels[j], kind="item", item=j)
            )
            blocks.append(item_block(ones_k, ones_r, j))

        for term in spec.terms:
            parts = term.split(":")
            kinds = []
            for part in parts:
                if part in factor_names:
                    kinds.append("factor")
                elif part in cont_names:
                    kinds.append("continuous")
                else:
                    raise DataError(f"term {term!r}: no covariate named {part!r}")
            if kinds == ["continuous"]:
                z = data.standardized_continuous(parts[0])
                for j in range(J - 1):
                    self.coefficients.append(
                        Coefficient(
                            name=f"{spec.item_labels[j]}:{parts[0]}",
                            kind="continuous",
                            item=j,
                            term=term,
                        )
                    )
                    blocks.append(item_block(z, ones_r, j))
            elif all(k == "factor" for k in kinds):
                level_orders = [data.factor_level_order(p) for p in parts]
                positions = [factor_names.index(p) for p in parts]
                for combo in itertools.product(*(lo[1:] for lo in level_orders)):
                    mask = np.ones(K)
                    for pos, lev in zip(positions, combo):
                        mask *= np.array(
                            [1.0 if s.factor_levels[pos] == lev else 0.0
                             for s in data.covariate_sets]
                        )
                    label = ":".join(
                        f"{p}={lev}" for p, lev in zip(parts, combo)
                    )
                    for j in range(J - 1):
                        self.coefficients.append(
                            Coefficient(
                                name=f"{spec.item_labels[j]}:{label}",
                                kind="factor",
                                item=j,
                                term=term,
                                levels=combo,
                            )
                        )
                        blocks.append(item_block(mask, ones_r, j))
            else:
                raise DataError(
                    f"term {term!r}: interactions may only combine factors"
                )

        for r in range(R - 1):
            for j in range(J - 1):
                self.coefficients.append(
                    Coefficient(
                        name=f"{spec.item_labels[j]}:class{r + 1}",
                        kind="class",
                        item=j,
                        class_index=r,
                    )
                )
                blocks.append(item_block(ones_k, np.eye(R)[r], j))

        self.A = (
            np.stack(blocks, axis=-1)
            if blocks
            else np.zeros((J, K, R, 0))
        )
        self.name_to_index = {c.name: i for i, c in enumerate(self.coefficients)}

    @property
    def n_coefficients(self) -> int:
        return len(self.coefficients)

    @property
    def n_items(self) -> int:
        return self.spec.n_items

    @property
    def n_sets(self) -> int:
        return self.data.n_sets

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes

    @property
    def n_patterns(self) -> int:
        return self.data.space.size

    def zero_parameters(self) -> Parameters:
        R = self.n_classes
        return Parameters(np.zeros(self.n_coefficients), np.full(R, 1.0 / R))

    def item_effects(self, coefficients: np.ndarray) -> np.ndarray:
        """Per-(item, covariate set, class) effects a_ikr, reference rows 0."""
        return np.einsum("jkrc,c->jkr", self.A, coefficients)

    def eta(self, coefficients: np.ndarray) -> np.ndarray:
        """Linear predictors for all cells, shaped (K, L, R)."""
        a = self.item_effects(coefficients)
        return np.einsum("lj,jkr->klr", self.S, a)

    def linear_predictor(
        self, coefficients: np.ndarray, pattern: int, covariate_set: int, cls: int
    ) -> float:
        return float(self.eta(coefficients)[covariate_set, pattern, cls])

    def log_pattern_probs(self, coefficients: np.ndarray) -> np.ndarray:
        """log P_lkr, normalized over patterns within each (k, r); (K, L, R)."""
        e = self.eta(coefficients)
        return e - logsumexp(e, axis=1, keepdims=True)

    def pattern_probs(
        self, coefficients: np.ndarray, covariate_set: int, cls: int
    ) -> np.ndarray:
        return np.exp(self.log_pattern_probs(coefficients)[covariate_set, :, cls])

    def class_offsets(self, coefficients: np.ndarray) -> np.ndarray:
        """Offset matrix (J, R); reference item row and reference class column are 0."""
        out = np.zeros((self.n_items, self.n_classes))
        for idx, coef in enumerate(self.coefficients):
            if coef.kind == "class":
                out[coef.item, coef.class_index] = coefficients[idx]
        return out

    def structural_indices(self, kinds=("item", "factor", "continuous")) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.coefficients) if c.kind in kinds],
            dtype=np.int64,
        )


def pairwise_win_prob(effect_i: float, effect_j: float) -> float:
    """Probability that the first item beats the second in one comparison."""
    if not (np.isfinite(effect_i) and np.isfinite(effect_j)):
        raise ValueError("item effects must be finite")
    hi = max(2.0 * effect_i, 2.0 * effect_j)
    num = np.exp(2.0 * effect_i - hi)
    return float(num / (num + np.exp(2.0 * effect_j - hi)))


def worths(item_effects) -> np.ndarray:
    """Normalized worths from item effects: exp(2a) scaled to sum to 1."""
    a = np.asarray(item_effects, dtype=np.float64)
    z = 2.0 * a - np.max(2.0 * a)
    w = np.exp(z)
    return w / w.sum()


def log_mixture_probs(params: Parameters, design: Design) -> np.ndarray:
    """log sum_r q_r P_lkr per cell, shaped (K, L)."""
    logp = design.log_pattern_probs(params.coefficients)
    return logsumexp(logp + np.log(params.mixing)[None, None, :], axis=2)


def posterior_weights(params: Parameters, design: Design) -> np.ndarray:
    """Posterior class probabilities per cell, shaped (K, L, R)."""
    logp = design.log_pattern_probs(params.coefficients)
    joint = logp + np.log(params.mixing)[None, None, :]
    return np.exp(joint - logsumexp(joint, axis=2, keepdims=True))


def saturated_loglik(data: AggregatedData) -> float:
    """Log-likelihood of the saturated multinomial (one probability per cell)."""
    counts = data.counts.astype(np.float64)
    totals = counts.sum(axis=1)
    if np.any(totals <= 0):
        empty = np.nonzero(totals <= 0)[0]
        raise DataError(f"covariate sets with no respondents: {empty.tolist()}")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = counts * np.log(counts / totals[:, None])
    return float(np.where(counts > 0, terms, 0.0).sum())


def mixture_loglik(
    params: Parameters, design: Design, data: AggregatedData
) -> tuple[float, float]:
    """Observed-data log-likelihood and saturated-relative deviance.

    With one class this is the plain fixed-effects multinomial pattern
    likelihood. The deviance matches the residual deviance of the
    equivalent Poisson log-linear fit, so differences between models are
    likelihood-ratio statistics.
    """
    log_mix = log_mixture_probs(params, design)
    loglik = float(np.sum(data.counts * log_mix))
    deviance = 2.0 * (saturated_loglik(data) - loglik)
    return loglik, deviance


def mixture_score(
    params: Parameters, design: Design, data: AggregatedData
) -> np.ndarray:
    """Analytic gradient of the mixture log-likelihood.

    Returns the score over (structural coefficients, free log-mass
    parameters), where the mass parameterization is q_r = softmax with the
    last class pinned at 0. The coefficient block is the posterior-weighted
    multinomial score; the mass block is N * (posterior share - q).
    """
    w = posterior_weights(params, design)
    counts = data.counts.astype(np.float64)
    m = counts[:, :, None] * w
    m_plus = m.sum(axis=1)  # (K, R)
    logp = design.log_pattern_probs(params.coefficients)
    p = np.exp(logp)
    resid = m - m_plus[:, None, :] * p
    g_items = np.einsum("klr,lj->jkr", resid, design.S)
    score_coef = np.einsum("jkr,jkrc->c", g_items, design.A)
    share = m.sum(axis=(0, 1))
    score_mass = share[:-1] - counts.sum() * params.mixing[:-1]
    return np.concatenate([score_coef, score_mass])


def count_parameters(design: Design, count_masses: bool = False) -> int:
    """Parameter count for BIC.

    Free structural coefficients (including class offsets) plus one
    nuisance total per covariate set. Mixing weights are excluded by
    default; ``count_masses`` adds R - 1 for them.
    """
    p = design.n_coefficients + design.n_sets
    if count_masses:
        p += design.n_classes - 1
    return p


def bic(minus_two_loglik: float, n_params: int, n_cells: int) -> float:
    """Bayesian information criterion with the pattern-by-set cell count."""
    if n_cells <= 0:
        raise ValueError("n_cells must be positive")
    return float(minus_two_loglik + n_params * np.log(n_cells))
