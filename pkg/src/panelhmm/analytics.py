"""Scientific outputs computed from a fitted chain set.

Average predictive comparisons follow the hold-others-at-observed-values
scheme: the quantity of interest is evaluated at a high and a low value
of one input while every other input keeps its observed per-(subject,
day) value, and the difference is averaged over all observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import inference
from .dataset import DesignMatrix, ObservationPanel
from .errors import InputError, NumericalError
from .model import HmmParams, MarkovParams, simulate_hmm, simulate_markov, softmax_rows


@dataclass(frozen=True)
class PredictiveComparisonRequest:
    """One average-predictive-comparison query.

    ``target`` is ("transition", j, m) for the row-j-to-m transition
    probability or ("stationary", s) for the long-run probability of
    state s (all 1-based values).  ``u_hi`` and ``u_lo`` are on the
    standardized scale.
    """

    input_name: str
    u_hi: float
    u_lo: float
    target: tuple

    def __post_init__(self):
        if self.u_hi == self.u_lo:
            raise InputError("u_hi and u_lo must differ")
        if self.target[0] not in ("transition", "stationary"):
            raise InputError(f"unknown comparison target {self.target!r}")


@dataclass(frozen=True)
class PpcResult:
    """One posterior-predictive check: the observed statistic, its
    replicate distribution, and the observed quantile within it."""

    name: str
    observed: float
    replicates: np.ndarray
    quantile: float


@dataclass(frozen=True)
class RelapseEpisode:
    """Maximal run of decoded days spent in a designated relapse state.
    Days are 1-based and inclusive; ``state`` is the modal decoded state
    of the run."""

    subject: int
    start_day: int
    end_day: int
    state: int


def default_comparison_levels(design: DesignMatrix, name: str) -> tuple:
    """(u_hi, u_lo) convention: binary inputs use their two standardized
    codes; continuous inputs use mean +/- 1 sd of the standardized values
    (which have mean 0 and sd 1/2)."""
    col = design.column_index(name)
    values = np.unique(np.round(design.values[:, :, col], 12))
    if values.size == 2:
        return float(values.max()), float(values.min())
    return 0.5, -0.5


def _row_probs(alpha_block, beta_block, X):
    """Softmax rows for one from-state: alpha (N, K), beta (K, p),
    X (N, T, p) -> (N, T, R)."""
    eta = alpha_block[:, None, :] + X @ beta_block.T
    return softmax_rows(eta)


def average_transition_difference(chain_set, design: DesignMatrix,
                                  request: PredictiveComparisonRequest) -> np.ndarray:
    """Posterior draws of the average transition-probability difference.

    For each draw, the row-j transition probability into m is evaluated
    for every (subject, day) pair at u_hi and at u_lo, holding the other
    inputs at their observed values, and the differences are averaged.
    """
    kind, j, m = request.target
    if kind != "transition":
        raise InputError("request target must be transition(j, m)")
    col = design.column_index(request.input_name)
    X = design.values[:, :-1, :]
    X_hi = X.copy()
    X_hi[:, :, col] = request.u_hi
    X_lo = X.copy()
    X_lo[:, :, col] = request.u_lo
    G = chain_set.n_chains * chain_set.n_kept
    alpha = chain_set.per_chain("alpha")
    beta = chain_set.per_chain("beta")
    out = np.empty(G)
    g = 0
    for c in range(chain_set.n_chains):
        for i in range(chain_set.n_kept):
            a = alpha[c, i][:, j - 1]
            b = beta[c, i][j - 1]
            hi = _row_probs(a, b, X_hi)[:, :, m - 1]
            lo = _row_probs(a, b, X_lo)[:, :, m - 1]
            out[g] = float((hi - lo).mean())
            g += 1
    return out


def stationary_distribution(Q: np.ndarray) -> np.ndarray:
    """Stationary vector of a row-stochastic matrix via a linear solve.

    Requires an irreducible, aperiodic chain; reducibility/periodicity is
    detected through the eigenvalue gap (a second eigenvalue of modulus 1)
    and through the residual of the solution.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise InputError("Q must be square")
    if np.any(Q < 0) or np.any(np.abs(Q.sum(axis=1) - 1.0) > 1e-9):
        raise InputError("Q must be row-stochastic")
    S = Q.shape[0]
    moduli = np.sort(np.abs(np.linalg.eigvals(Q)))
    if S > 1 and moduli[-2] >= 1.0 - 1e-12:
        raise NumericalError("chain is reducible or periodic: no unique "
                             "stationary distribution")
    A = (Q - np.eye(S)).T
    A[-1, :] = 1.0
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    pi = np.linalg.solve(A, rhs)
    residual = np.max(np.abs(pi @ Q - pi))
    if residual > 1e-12 or np.any(pi < -1e-12):
        raise NumericalError(f"stationary solve failed (residual {residual:.2e})")
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def average_stationary_difference(chain_set, design: DesignMatrix,
                                  request: PredictiveComparisonRequest) -> np.ndarray:
    """Posterior draws of average stationary-probability differences.

    Per draw and subject, the stationary distribution of that subject's
    last-day transition matrix is computed at u_hi and u_lo (time held at
    its last-day value) and the state-s difference is averaged over
    subjects.
    """
    kind, s = request.target
    if kind != "stationary":
        raise InputError("request target must be stationary(state)")
    col = design.column_index(request.input_name)
    x_last = design.values[:, -1, :]  # (N, p)
    x_hi = x_last.copy()
    x_hi[:, col] = request.u_hi
    x_lo = x_last.copy()
    x_lo[:, col] = request.u_lo
    N = design.n_subjects
    G = chain_set.n_chains * chain_set.n_kept
    out = np.empty(G)
    for g in range(G):
        params = chain_set.params_at(g)
        diff = 0.0
        for i in range(N):
            Q_hi = softmax_rows(params.alpha[i] + params.beta @ x_hi[i])
            Q_lo = softmax_rows(params.alpha[i] + params.beta @ x_lo[i])
            diff += (stationary_distribution(Q_hi)[s - 1]
                     - stationary_distribution(Q_lo)[s - 1])
        out[g] = diff / N
    return out


def posterior_mean_transitions(chain_set, design: DesignMatrix, subject: int,
                               day: int) -> np.ndarray:
    """Posterior mean of the subject's day-``day`` transition matrix
    (mean of per-draw matrices; rows of the mean still sum to 1)."""
    x = design.vector(subject, day)
    alpha = chain_set.stacked("alpha")[:, subject]  # (G, R, K)
    beta = chain_set.stacked("beta")
    eta = alpha + np.einsum("grkp,p->grk", beta, x)
    return softmax_rows(eta).mean(axis=0)


def ppc_replicates(chain_set, design: DesignMatrix, mode: str = "new_subjects",
                   mask: np.ndarray | None = None, rng=None, draw_indices=None):
    """Yield one replicate panel per posterior draw.

    ``new_subjects`` draws fresh random intercepts from N(mu, sigma^2) per
    draw; ``same_subjects`` reuses the draw's own intercepts.  The mask
    (typically the observed missingness pattern) is applied to every
    replicate so statistics ignore the same cells as the observed data.
    """
    if mode not in ("new_subjects", "same_subjects"):
        raise InputError(f"unknown replicate mode {mode!r}")
    rng = np.random.default_rng(rng)
    n = design.n_subjects
    t = design.n_days
    if draw_indices is None:
        draw_indices = range(chain_set.n_chains * chain_set.n_kept)
    for g in draw_indices:
        params = chain_set.params_at(g)
        if mode == "new_subjects":
            params.alpha = (params.mu[None]
                            + params.sigma[None]
                            * rng.standard_normal(params.alpha.shape))
        seed = rng.integers(2 ** 63)
        if chain_set.model_kind == "hmm":
            yield simulate_hmm(params, design, n, t, mask=mask, seed=seed)
        else:
            yield simulate_markov(params, design, n, t, mask=mask, seed=seed)


def ppc_statistics(panel: ObservationPanel, block_length: int = 28) -> dict:
    """Named goodness-of-fit statistics over non-missing cells.

    Includes: mean/variance across subjects of moderate- and heavy-day
    counts; first-drinking-day (first observed day with level >= 2,
    1-based) mean and sd over subjects with at least one drinking day;
    the Never-Drinker count; and per-block (4-week) mean and sd of
    abstinent/moderate/heavy day counts.
    """
    obs = ~panel.mask
    codes = panel.codes
    moderate = ((codes == 2) & obs).sum(axis=1).astype(float)
    heavy = ((codes == 3) & obs).sum(axis=1).astype(float)
    stats = {
        "mean_moderate_days": float(moderate.mean()),
        "var_moderate_days": float(moderate.var(ddof=1)),
        "mean_heavy_days": float(heavy.mean()),
        "var_heavy_days": float(heavy.var(ddof=1)),
    }
    drinking = (codes >= 2) & obs
    any_drink = drinking.any(axis=1)
    stats["never_drinkers"] = float((~any_drink).sum())
    if any_drink.any():
        fdd = drinking[any_drink].argmax(axis=1) + 1.0  # 1-based day
        stats["fdd_mean"] = float(fdd.mean())
        stats["fdd_sd"] = float(fdd.std(ddof=1)) if fdd.size > 1 else 0.0
    else:
        stats["fdd_mean"] = float("nan")
        stats["fdd_sd"] = float("nan")
    level_names = {1: "abstinent", 2: "moderate", 3: "heavy"}
    n_blocks = (panel.n_days + block_length - 1) // block_length
    for b in range(n_blocks):
        sl = slice(b * block_length, min((b + 1) * block_length, panel.n_days))
        for level in range(1, panel.m_levels + 1):
            days = ((codes[:, sl] == level) & obs[:, sl]).sum(axis=1).astype(float)
            name = level_names.get(level, f"level{level}")
            stats[f"block{b + 1}_{name}_mean"] = float(days.mean())
            stats[f"block{b + 1}_{name}_sd"] = (
                float(days.std(ddof=1)) if days.size > 1 else 0.0
            )
    return stats


def ppc_quantile(observed: float, replicates) -> float:
    """Fraction of replicates strictly below the observed value, counting
    ties as one half."""
    replicates = np.asarray(replicates, dtype=float)
    if replicates.size == 0:
        raise InputError("need at least one replicate")
    less = np.sum(replicates < observed)
    ties = np.sum(replicates == observed)
    return float((less + 0.5 * ties) / replicates.size)


def ppc_check(chain_set, design: DesignMatrix, panel: ObservationPanel,
              mode: str = "new_subjects", rng=None, draw_indices=None,
              statistics=ppc_statistics) -> list:
    """Full posterior-predictive check: observed statistics against their
    replicate distributions, one :class:`PpcResult` per statistic."""
    observed = statistics(panel)
    reps = {name: [] for name in observed}
    for sim in ppc_replicates(chain_set, design, mode=mode, mask=panel.mask,
                              rng=rng, draw_indices=draw_indices):
        for name, value in statistics(sim.observed).items():
            reps[name].append(value)
    results = []
    for name, value in observed.items():
        r = np.array(reps[name])
        finite = r[np.isfinite(r)]
        q = ppc_quantile(value, finite) if finite.size and np.isfinite(value) else float("nan")
        results.append(PpcResult(name=name, observed=value, replicates=r, quantile=q))
    return results


def serial_dependence_table(panel: ObservationPanel, design: DesignMatrix,
                            chain_set_hmm, chain_set_markov) -> list:
    """Motif-level comparison of the two models' predictive fit.

    Scans for observed consecutive triplets (i, j, i) ("return") and
    (i, j, j) ("stay") with i != j, and reports the mean predictive
    probability of the third element under each model, evaluated at each
    model's posterior-mean parameters.
    """
    prob_hmm = inference.pointwise_predictive(
        panel, design, chain_set_hmm.posterior_mean_params(), mode="one_step")
    prob_markov = inference.pointwise_predictive(
        panel, design, chain_set_markov.posterior_mean_params(), mode="markov")
    codes, obs = panel.codes, ~panel.mask
    rows = []
    M = panel.m_levels
    for i in range(1, M + 1):
        for j in range(1, M + 1):
            if i == j:
                continue
            for pattern, third in (("return", i), ("stay", j)):
                hits = []
                for subj in range(panel.n_subjects):
                    for t in range(panel.n_days - 2):
                        if (obs[subj, t] and obs[subj, t + 1] and obs[subj, t + 2]
                                and codes[subj, t] == i and codes[subj, t + 1] == j
                                and codes[subj, t + 2] == third):
                            hits.append((subj, t + 2))
                if not hits:
                    continue
                idx = tuple(np.array(hits).T)
                rows.append({
                    "first": i,
                    "second": j,
                    "third": third,
                    "pattern": pattern,
                    "count": len(hits),
                    "hmm_mean_prob": float(prob_hmm[idx].mean()),
                    "markov_mean_prob": float(prob_markov[idx].mean()),
                })
    return rows


def relapse_segments(viterbi_paths, relapse_states) -> list:
    """Maximal runs of decoded days in the relapse-state set, one
    :class:`RelapseEpisode` per run per subject."""
    relapse_states = set(int(s) for s in relapse_states)
    episodes = []
    for subject, path in enumerate(viterbi_paths):
        states = np.asarray(path.states)
        in_set = np.isin(states, sorted(relapse_states))
        t = 0
        T = states.size
        while t < T:
            if not in_set[t]:
                t += 1
                continue
            start = t
            while t < T and in_set[t]:
                t += 1
            run = states[start:t]
            values, counts = np.unique(run, return_counts=True)
            episodes.append(RelapseEpisode(
                subject=subject, start_day=start + 1, end_day=t,
                state=int(values[counts.argmax()]),
            ))
    return episodes
