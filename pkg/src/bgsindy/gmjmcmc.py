"""Generational evolution of the feature population.

Each generation runs MJMCMC on the current population, folds the
visited models into a chain-global map keyed by feature-key sets (so
the same model rediscovered later is counted once), filters weakly
supported features out and generates replacements by random transform
application or pairwise multiplication.  Original state variables are
protected from filtration.  Multiple independent chains are aggregated
by renormalizing over the union of all visited models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bgsindy import linmodel
from bgsindy.evaluate import PosteriorSummary
from bgsindy.features import (
    DEFAULT_ALPHABET,
    DEFAULT_MAX_COMPLEXITY,
    DEFAULT_MAX_DEPTH,
    Feature,
    GenerationRejected,
    Variable,
    complexity,
    key,
    mutate_modify,
    mutate_multiply,
    parse,
    pow_kind,
    variables,
)
from bgsindy.linmodel import GaussianEvidence
from bgsindy.mjmcmc import MjmcmcTuning, PopulationScorer, run_mjmcmc

GENERATION_RETRIES = 50


@dataclass
class GmjmcmcTuning:
    pop_size: int = 15
    generations: int = 20
    mjmcmc: MjmcmcTuning = field(default_factory=MjmcmcTuning)
    filtration_threshold: float = 0.2
    chains: int = 10
    operator_weights: tuple[float, float] = (0.5, 0.5)  # (modify, multiply)
    keep_originals: bool = True
    max_depth: int = DEFAULT_MAX_DEPTH
    max_complexity: int = DEFAULT_MAX_COMPLEXITY
    alphabet: tuple = DEFAULT_ALPHABET

    def validate(self) -> None:
        if self.pop_size < 1:
            raise ValueError("pop_size must be >= 1")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if not 0.0 < self.filtration_threshold < 1.0:
            raise ValueError("filtration_threshold must lie in (0, 1)")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if min(self.operator_weights) < 0 or sum(self.operator_weights) <= 0:
            raise ValueError("operator_weights must be non-negative and not all zero")
        self.mjmcmc.validate()


@dataclass
class ChainResult:
    """Everything one chain learned: visited models keyed by feature-key
    set, plus per-generation inclusion probabilities for diagnostics."""

    visited: dict[frozenset, float]
    history: list[dict[str, float]]


def filtration(population, protected, inclusion_probs, threshold: float):
    """Survivors: protected features unconditionally, others iff their
    within-generation inclusion probability is >= threshold."""
    survivors = []
    survivor_flags = []
    for f, prot in zip(population, protected):
        if prot or inclusion_probs.get(key(f), 0.0) >= threshold:
            survivors.append(f)
            survivor_flags.append(prot)
    return survivors, survivor_flags


def generate_features(
    survivors,
    slots: int,
    rng: np.random.Generator,
    *,
    alphabet=DEFAULT_ALPHABET,
    operator_weights=(0.5, 0.5),
    max_depth: int = DEFAULT_MAX_DEPTH,
    max_complexity: int = DEFAULT_MAX_COMPLEXITY,
    existing_keys: set[str],
    is_valid=None,
) -> list[Feature]:
    """Best-effort fill of open population slots with novel features.

    Each slot tries up to 50 times: draw an operator (modify or
    multiply), draw parents uniformly from the survivors, and keep the
    candidate if it is structurally admissible, new to the population
    and evaluable on the training states.  A self-multiply (both parents
    identical) is rewritten to the pow2 transform so squares have a
    single canonical representative.
    """
    if slots <= 0 or not survivors:
        return []
    w_mod, w_mul = operator_weights
    if not alphabet:
        w_mod = 0.0
    total = w_mod + w_mul
    if total <= 0:
        return []
    p_mod = w_mod / total
    out: list[Feature] = []
    for _ in range(slots):
        for _ in range(GENERATION_RETRIES):
            if rng.random() < p_mod:
                parent = survivors[int(rng.integers(len(survivors)))]
                kind = alphabet[int(rng.integers(len(alphabet)))]
                try:
                    cand = mutate_modify(parent, kind, max_depth)
                except GenerationRejected:
                    continue
            else:
                a = survivors[int(rng.integers(len(survivors)))]
                b = survivors[int(rng.integers(len(survivors)))]
                try:
                    if key(a) == key(b):
                        cand = mutate_modify(a, pow_kind(2), max_depth)
                    else:
                        cand = mutate_multiply(a, b, max_depth)
                except GenerationRejected:
                    continue
            k = key(cand)
            if complexity(cand) > max_complexity or k in existing_keys:
                continue
            if is_valid is not None and not is_valid(cand):
                continue
            out.append(cand)
            existing_keys.add(k)
            break
    return out


def _within_generation_inclusion(visited: dict[int, float], keys) -> dict[str, float]:
    masks = np.fromiter(visited.keys(), dtype=np.int64, count=len(visited))
    lps = np.fromiter(visited.values(), dtype=float, count=len(visited))
    finite = np.isfinite(lps)
    if not finite.any():
        return {k: 0.0 for k in keys}
    m = lps[finite].max()
    w = np.where(finite, np.exp(np.where(finite, lps, m) - m), 0.0)
    w /= w.sum()
    return {
        k: float(w[(masks >> i) & 1 == 1].sum()) for i, k in enumerate(keys)
    }


def run_chain(
    evidence: GaussianEvidence,
    n_vars: int,
    tuning: GmjmcmcTuning,
    seed,
) -> ChainResult:
    """One GMJMCMC chain: evolve the population across generations.

    Deterministic given the seed; each generation's sampler starts at
    the configuration with the original variables on and everything
    else off.
    """
    tuning.validate()
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = ss.spawn(tuning.generations + 1)
    evo_rng = np.random.default_rng(children[0])

    population: list[Feature] = list(variables(n_vars))
    protected = [tuning.keep_originals] * len(population)
    existing = {key(f) for f in population}
    fresh = generate_features(
        population,
        tuning.pop_size - len(population),
        evo_rng,
        alphabet=tuning.alphabet,
        operator_weights=tuning.operator_weights,
        max_depth=tuning.max_depth,
        max_complexity=tuning.max_complexity,
        existing_keys=existing,
        is_valid=evidence.feature_valid,
    )
    population += fresh
    protected += [False] * len(fresh)

    visited_global: dict[frozenset, float] = {}
    history: list[dict[str, float]] = []
    for g in range(tuning.generations):
        scorer = PopulationScorer(evidence, population)
        init_mask = 0
        for i, f in enumerate(population):
            if isinstance(f, Variable):
                init_mask |= 1 << i
        state = run_mjmcmc(scorer, tuning.mjmcmc, children[g + 1], init_mask)
        for mask, lp in state.visited.items():
            ks = scorer.keyset(mask)
            if ks not in visited_global:
                visited_global[ks] = lp
        inclusion = _within_generation_inclusion(state.visited, scorer.keys)
        history.append(inclusion)
        if g + 1 < tuning.generations:
            survivors, survivor_flags = filtration(
                population, protected, inclusion, tuning.filtration_threshold
            )
            existing = {key(f) for f in survivors}
            fresh = generate_features(
                survivors,
                tuning.pop_size - len(survivors),
                evo_rng,
                alphabet=tuning.alphabet,
                operator_weights=tuning.operator_weights,
                max_depth=tuning.max_depth,
                max_complexity=tuning.max_complexity,
                existing_keys=existing,
                is_valid=evidence.feature_valid,
            )
            population = survivors + fresh
            protected = survivor_flags + [False] * len(fresh)
    return ChainResult(visited=visited_global, history=history)


def aggregate_visited(results) -> dict[frozenset, float]:
    """Union of the chains' visited maps (scores are deterministic, so
    the first value for a key set is kept)."""
    union: dict[frozenset, float] = {}
    for res in results:
        for ks, lp in res.visited.items():
            if ks not in union:
                union[ks] = lp
    return union


def posterior_inclusion(visited: dict[frozenset, float]) -> dict[str, float]:
    """Renormalize unnormalized posteriors over distinct visited models
    and sum model probabilities per included feature key."""
    if not visited:
        raise ValueError("no visited models")
    lps = np.fromiter(visited.values(), dtype=float, count=len(visited))
    finite = np.isfinite(lps)
    if not finite.any():
        raise ValueError("all visited models have -inf posterior")
    m = lps[finite].max()
    w = np.where(finite, np.exp(np.where(finite, lps, m) - m), 0.0)
    w /= w.sum()
    probs: dict[str, float] = {}
    for weight, ks in zip(w, visited.keys()):
        if weight == 0.0:
            continue
        for k in ks:
            probs[k] = probs.get(k, 0.0) + float(weight)
    return probs


def median_probability_model(inclusion_probs: dict[str, float]) -> tuple[str, ...]:
    """Keys with inclusion probability strictly above one half, sorted."""
    return tuple(sorted(k for k, p in inclusion_probs.items() if p > 0.5))


def aggregate_chains(
    results,
    evidence: GaussianEvidence,
    equation: int,
) -> PosteriorSummary:
    """Posterior summary over >= 1 chains: inclusion probabilities,
    median probability model and its training-split posterior-mode fit."""
    if not results:
        raise ValueError("need at least one chain result")
    union = aggregate_visited(results)
    probs = posterior_inclusion(union)
    mpm = median_probability_model(probs)
    feats = [parse(k) for k in mpm]
    cols = [evidence.column(f) for f in feats]
    if any(c is None for c in cols):
        raise ValueError("median probability model contains an invalid feature")
    X = np.column_stack([np.ones(evidence.n)] + cols)
    try:
        fit = linmodel.fit_posterior_mode(X, evidence.y)
        beta = fit.beta
    except linmodel.RankDeficientError:
        # exactly collinear survivors (e.g. algebraically equal keys from
        # different generations): fall back to the minimum-norm solution
        beta = np.linalg.lstsq(X, evidence.y, rcond=None)[0]
    return PosteriorSummary(
        equation=equation,
        inclusion_probs=probs,
        mpm_keys=mpm,
        mpm_betas=beta[1:],
        intercept=float(beta[0]),
    )
