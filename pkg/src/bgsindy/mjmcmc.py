"""Mode-jumping Metropolis-Hastings over inclusion masks.

One sampler run explores the 2^q configurations of a fixed feature
population.  Steps are either a single-indicator flip (symmetric local
proposal) or a mode jump: flip a random subset, greedily ascend single
flips to a local mode, then randomize each coordinate independently.
The reverse path (mirror jump from the proposal, identical greedy
ascent) supplies the backward kernel for the acceptance ratio.

Every model scored along the way is recorded in the run's visited map
(mask -> log unnormalized posterior); posterior summaries are later
built by renormalizing over distinct visited models, not from visit
frequencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bgsindy import kernels, linmodel
from bgsindy.features import Feature, complexity, key
from bgsindy.linmodel import LOG_2PI, NEG_INF, RANK_RTOL, GaussianEvidence


@dataclass
class MjmcmcTuning:
    iterations: int = 500
    jump_size_min: int = 2
    jump_size_max: int = 6
    local_opt_steps: int = 20
    mode_jump_prob: float = 0.25
    randomization_prob: float = 0.1

    def validate(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not (1 <= self.jump_size_min <= self.jump_size_max):
            raise ValueError("jump size range must satisfy 1 <= min <= max")
        if self.local_opt_steps < 0:
            raise ValueError("local_opt_steps must be >= 0")
        if not 0.0 < self.mode_jump_prob < 1.0:
            raise ValueError("mode_jump_prob must lie in (0, 1)")
        if not 0.0 < self.randomization_prob < 1.0:
            raise ValueError("randomization_prob must lie in (0, 1)")


class PopulationScorer:
    """Scores inclusion masks over a fixed feature list via the Gram trick.

    The design Gram matrix is assembled once; each model then costs one
    small Cholesky on the selected submatrix.  Scores are memoized per
    mask (this map doubles as the run's visited map) and shared across
    populations through the evidence's key-set cache.
    """

    def __init__(self, evidence: GaussianEvidence, features: list[Feature]):
        self.evidence = evidence
        self.features = list(features)
        self.keys = tuple(key(f) for f in self.features)
        self.q = len(self.features)
        n = evidence.n
        cols = []
        invalid_bits = 0
        for i, f in enumerate(self.features):
            col = evidence.column(f)
            if col is None:
                invalid_bits |= 1 << i
                cols.append(np.zeros(n))
            else:
                cols.append(col)
        Z = np.column_stack([np.ones(n)] + cols)
        self.gram = np.ascontiguousarray(Z.T @ Z)
        self.xty = np.ascontiguousarray(Z.T @ evidence.y)
        self.invalid_bits = invalid_bits
        self.penalties = tuple(-evidence.psi * complexity(f) for f in self.features)
        self.visited: dict[int, float] = {}
        self._colbuf = np.empty(self.q + 1, dtype=np.int64)

    def keyset(self, mask: int) -> frozenset:
        return frozenset(k for i, k in enumerate(self.keys) if mask >> i & 1)

    def score(self, mask: int) -> float:
        lp = self.visited.get(mask)
        if lp is not None:
            return lp
        lp = self._compute(mask)
        self.visited[mask] = lp
        return lp

    def _compute(self, mask: int) -> float:
        buf = self._colbuf
        buf[0] = 0
        p = 1
        log_prior = 0.0
        for i in range(self.q):
            if mask >> i & 1:
                buf[p] = i + 1
                p += 1
                log_prior += self.penalties[i]
        if mask & self.invalid_bits:
            return NEG_INF
        keyset = self.keyset(mask)
        cached = self.evidence.cached_score(keyset)
        if cached is not None:
            log_ml = cached[0]
        else:
            ev = self.evidence
            status, logdet, rss = kernels.subset_score(
                self.gram, self.xty, ev.yty, ev.n, buf[:p], RANK_RTOL
            )
            if status == kernels.STATUS_TOO_LARGE:
                from bgsindy import _gausscore_py

                status, logdet, rss = _gausscore_py.subset_score(
                    self.gram, self.xty, ev.yty, ev.n, buf[:p], RANK_RTOL
                )
            if status != kernels.STATUS_OK:
                log_ml = NEG_INF
            else:
                log_ml = -0.5 * (ev.n - p) * LOG_2PI - 0.5 * logdet - 0.5 * rss
            self.evidence.store_score(keyset, log_ml, log_prior)
        if log_ml == NEG_INF:
            return NEG_INF
        return log_ml + log_prior

    def model(self, mask: int) -> linmodel.ModelGamma:
        m = linmodel.ModelGamma(feature_keys=self.keys, gamma=mask)
        lp = self.score(mask)
        m.log_prior = linmodel.log_model_prior(
            mask, [complexity(f) for f in self.features], self.evidence.psi
        )
        m.log_marginal = lp - m.log_prior if lp > NEG_INF else NEG_INF
        return m


@dataclass
class MjmcmcState:
    scorer: PopulationScorer
    current: int
    logpost: float
    visited: dict[int, float]
    n_local: int = 0
    n_local_accepted: int = 0
    n_jump: int = 0
    n_jump_accepted: int = 0

    def current_model(self) -> linmodel.ModelGamma:
        return self.scorer.model(self.current)


def _log_q(target: int, center: int, q: int, phi: float) -> float:
    """Log density of independent per-coordinate randomization flips."""
    d = (target ^ center).bit_count()
    return d * math.log(phi) + (q - d) * math.log1p(-phi)


def _greedy_ascent(scorer: PopulationScorer, mask: int, max_steps: int) -> int:
    """Steepest-ascent single flips; ties go to the lowest feature index."""
    cur = mask
    cur_lp = scorer.score(cur)
    for _ in range(max_steps):
        best_lp = cur_lp
        best_k = -1
        for k in range(scorer.q):
            lp = scorer.score(cur ^ (1 << k))
            if lp > best_lp:
                best_lp = lp
                best_k = k
        if best_k < 0:
            break
        cur ^= 1 << best_k
        cur_lp = best_lp
    return cur


def local_step(state: MjmcmcState, rng: np.random.Generator) -> None:
    """Flip one uniformly chosen indicator; MH accept (symmetric proposal)."""
    scorer = state.scorer
    k = int(rng.integers(scorer.q))
    prop = state.current ^ (1 << k)
    lp = scorer.score(prop)
    state.n_local += 1
    if lp == NEG_INF:
        return
    delta = lp - state.logpost
    if delta >= 0 or rng.random() < math.exp(delta):
        state.current = prop
        state.logpost = lp
        state.n_local_accepted += 1


def mode_jump_step(state: MjmcmcState, tuning: MjmcmcTuning, rng: np.random.Generator) -> None:
    """Large jump + greedy ascent + randomization, with the mirror-jump
    backward kernel in the acceptance ratio."""
    scorer = state.scorer
    q = scorer.q
    lo = min(tuning.jump_size_min, q)
    hi = min(tuning.jump_size_max, q)
    s = int(rng.integers(lo, hi + 1))
    jump_bits = 0
    for k in rng.choice(q, size=s, replace=False):
        jump_bits |= 1 << int(k)

    chi0 = state.current ^ jump_bits
    chi_star = _greedy_ascent(scorer, chi0, tuning.local_opt_steps)
    flips = rng.random(q) < tuning.randomization_prob
    proposal = chi_star
    for k in range(q):
        if flips[k]:
            proposal ^= 1 << k

    # mirror jump from the proposal, then the identical deterministic ascent
    chi_star_b = _greedy_ascent(scorer, proposal ^ jump_bits, tuning.local_opt_steps)

    lp_prop = scorer.score(proposal)
    state.n_jump += 1
    if lp_prop == NEG_INF:
        return
    phi = tuning.randomization_prob
    log_ratio = (lp_prop + _log_q(state.current, chi_star_b, q, phi)) - (
        state.logpost + _log_q(proposal, chi_star, q, phi)
    )
    if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
        state.current = proposal
        state.logpost = lp_prop
        state.n_jump_accepted += 1


def run_mjmcmc(
    scorer: PopulationScorer,
    tuning: MjmcmcTuning,
    seed,
    initial_mask: int = 0,
) -> MjmcmcState:
    """Run the sampler for tuning.iterations steps; deterministic per seed.

    Each step is a mode jump with probability mode_jump_prob (when the
    population is at least the minimum jump size), otherwise a local
    flip.  The returned state carries the full visited map.
    """
    tuning.validate()
    if scorer.q == 0:
        raise ValueError("population is empty")
    rng = np.random.default_rng(seed)
    state = MjmcmcState(
        scorer=scorer,
        current=initial_mask,
        logpost=scorer.score(initial_mask),
        visited=scorer.visited,
    )
    can_jump = scorer.q >= tuning.jump_size_min
    for _ in range(tuning.iterations):
        if can_jump and rng.random() < tuning.mode_jump_prob:
            mode_jump_step(state, tuning, rng)
        else:
            local_step(state, rng)
    return state
