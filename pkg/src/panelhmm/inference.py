"""Exact likelihoods, smoothing, sampling, and decoding.

Missing observations are handled by propagating the forward vector
through the per-day transition matrices across the gap, which is exactly
the multi-step-transition marginalization: no likelihood factor is
applied on missing days.  Both models run through the same recursions;
the Markov model is the special case whose "states" are the observed
levels and whose likelihood factors are indicators on observed cells.

The forward recursion normalizes per day and accumulates log scaling
factors, so filtered vectors are proper distributions and the backward
pass stays in probability space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DesignMatrix, ObservationPanel
from .model import HmmParams, MarkovParams, transition_matrices


@dataclass(frozen=True)
class ForwardBackwardResult:
    """Per-subject filtered/smoothed distributions and the log-likelihood.

    ``scaling[i, t]`` is the day-t normalizer; its logs sum to subject i's
    log-likelihood contribution.
    """

    log_likelihood: float
    filtered: np.ndarray
    smoothed: np.ndarray
    scaling: np.ndarray


@dataclass(frozen=True)
class ViterbiPath:
    """Most likely hidden path for one subject and its log joint
    probability with the observed data."""

    states: np.ndarray
    log_joint: float


def _hmm_factors(panel: ObservationPanel, params: HmmParams) -> np.ndarray:
    """Likelihood factors L[i, t, s] = p(y_it | H_it = s), 1 on missing days."""
    L = params.P.T[np.clip(panel.codes, 1, None) - 1]  # (N, T, S)
    L = np.where(panel.mask[:, :, None], 1.0, L)
    return L


def _markov_factors(panel: ObservationPanel, m_levels: int) -> np.ndarray:
    """Indicator factors over observed levels, 1 on missing days."""
    N, T = panel.codes.shape
    L = np.ones((N, T, m_levels))
    obs = ~panel.mask
    eye = np.eye(m_levels)
    L[obs] = eye[panel.codes[obs] - 1]
    return L


def _filter_all(L: np.ndarray, Q: np.ndarray, pi: np.ndarray):
    """Scaled forward pass vectorized over subjects.

    Returns (filtered (N, T, R), scaling (N, T)).  A subject whose factors
    are all ones (all data missing) gets scaling 1 on every day and hence
    contributes zero log-likelihood.
    """
    N, T, R = L.shape
    filtered = np.empty((N, T, R))
    scaling = np.empty((N, T))
    f = pi[None, :] * L[:, 0]
    c = f.sum(axis=1)
    safe = np.where(c > 0, c, 1.0)
    filtered[:, 0] = f / safe[:, None]
    scaling[:, 0] = c
    for t in range(1, T):
        f = np.einsum("nr,nrs->ns", filtered[:, t - 1], Q[:, t - 1]) * L[:, t]
        c = f.sum(axis=1)
        safe = np.where(c > 0, c, 1.0)
        filtered[:, t] = f / safe[:, None]
        scaling[:, t] = c
    return filtered, scaling


def _backward_smooth(L: np.ndarray, Q: np.ndarray, filtered: np.ndarray) -> np.ndarray:
    """Smoothed marginals from the filtered pass (normalized per day)."""
    N, T, R = L.shape
    smoothed = np.empty_like(filtered)
    b = np.ones((N, R))
    smoothed[:, T - 1] = filtered[:, T - 1]
    for t in range(T - 2, -1, -1):
        b = np.einsum("nrs,ns->nr", Q[:, t], L[:, t + 1] * b)
        b_sum = b.sum(axis=1, keepdims=True)
        b = b / np.where(b_sum > 0, b_sum, 1.0)
        s = filtered[:, t] * b
        s_sum = s.sum(axis=1, keepdims=True)
        smoothed[:, t] = s / np.where(s_sum > 0, s_sum, 1.0)
    return smoothed


def _backward_sample_all(filtered: np.ndarray, Q: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
    """Exact joint draw of the chain from its full conditional, one path
    per subject, vectorized over subjects.  Returns 1-based values."""
    N, T, R = filtered.shape
    states = np.empty((N, T), dtype=np.int64)
    rows = np.arange(N)
    u = rng.random((N, T))
    cum = np.cumsum(filtered[:, T - 1], axis=1)
    states[:, T - 1] = (u[:, T - 1, None] > cum).sum(axis=1) + 1
    for t in range(T - 2, -1, -1):
        w = filtered[:, t] * Q[rows, t, :, states[:, t + 1] - 1]
        w /= w.sum(axis=1, keepdims=True)
        cum = np.cumsum(w, axis=1)
        states[:, t] = (u[:, t, None] > cum).sum(axis=1) + 1
    return states


def _log_scaling(scaling: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(scaling > 0, np.log(np.where(scaling > 0, scaling, 1.0)),
                        -np.inf)


def forward_backward(panel: ObservationPanel, design: DesignMatrix,
                     params: HmmParams) -> ForwardBackwardResult:
    """Full filtering/smoothing pass for the HMM."""
    L = _hmm_factors(panel, params)
    Q = transition_matrices(params, design)
    filtered, scaling = _filter_all(L, Q, params.pi)
    smoothed = _backward_smooth(L, Q, filtered)
    ll = float(_log_scaling(scaling).sum())
    return ForwardBackwardResult(
        log_likelihood=ll, filtered=filtered, smoothed=smoothed, scaling=scaling
    )


def log_likelihood_hmm(panel: ObservationPanel, design: DesignMatrix,
                       params: HmmParams) -> float:
    """log p(Y_obs | theta), hidden states marginalized exactly."""
    L = _hmm_factors(panel, params)
    Q = transition_matrices(params, design)
    _, scaling = _filter_all(L, Q, params.pi)
    return float(_log_scaling(scaling).sum())


def log_likelihood_markov(panel: ObservationPanel, design: DesignMatrix,
                          params: MarkovParams,
                          imputed: np.ndarray | None = None) -> float:
    """Markov-model log-likelihood.

    Without ``imputed``, missing runs are marginalized exactly via the
    multi-step transition structure (the initial distribution enters at
    day 1 and is propagated to the first observed cell).  With a complete
    panel supplied, returns the complete-data log-likelihood.
    """
    if imputed is None:
        L = _markov_factors(panel, params.m_levels)
        Q = transition_matrices(params, design)
        _, scaling = _filter_all(L, Q, params.pi)
        return float(_log_scaling(scaling).sum())
    y = np.asarray(imputed, dtype=np.int64)
    Q = transition_matrices(params, design)
    N, T = y.shape
    rows = np.arange(N)[:, None]
    days = np.arange(T - 1)[None, :]
    with np.errstate(divide="ignore"):
        ll = np.log(params.pi[y[:, 0] - 1]).sum()
        steps = Q[rows, days, y[:, :-1] - 1, y[:, 1:] - 1]
        ll += np.log(steps).sum()
    return float(ll)


def ffbs_sample_hidden(panel: ObservationPanel, design: DesignMatrix,
                       params: HmmParams, rng: np.random.Generator) -> np.ndarray:
    """Draw the hidden-state grid from p(H | Y_obs, theta).

    States are drawn for every day, including days with missing
    observations.  Returns an (N, T) array of 1-based states.
    """
    L = _hmm_factors(panel, params)
    Q = transition_matrices(params, design)
    filtered, _ = _filter_all(L, Q, params.pi)
    return _backward_sample_all(filtered, Q, rng)


def smoothed_marginals(panel: ObservationPanel, design: DesignMatrix,
                       params: HmmParams) -> np.ndarray:
    """Exact p(H_it = s | Y_obs, theta), shape (N, T, S)."""
    return forward_backward(panel, design, params).smoothed


def viterbi(panel: ObservationPanel, design: DesignMatrix,
            params: HmmParams) -> list[ViterbiPath]:
    """Most likely hidden path per subject (max-product DP).

    Missing days contribute transition terms only.  Ties are broken toward
    the lower state index.
    """
    L = _hmm_factors(panel, params)
    Q = transition_matrices(params, design)
    N, T, S = L.shape
    with np.errstate(divide="ignore"):
        logL = np.log(L)
        logQ = np.log(Q)
        logpi = np.log(params.pi)
    paths = []
    for i in range(N):
        delta = logpi + logL[i, 0]
        back = np.zeros((T, S), dtype=np.int64)
        for t in range(1, T):
            cand = delta[:, None] + logQ[i, t - 1]  # (from, to)
            back[t] = cand.argmax(axis=0)  # first max: lower-state tie break
            delta = cand[back[t], np.arange(S)] + logL[i, t]
        states = np.empty(T, dtype=np.int64)
        states[T - 1] = int(delta.argmax())
        for t in range(T - 1, 0, -1):
            states[t - 1] = back[t, states[t]]
        paths.append(ViterbiPath(states=states + 1, log_joint=float(delta.max())))
    return paths


def log_joint_hmm(panel: ObservationPanel, design: DesignMatrix,
                  params: HmmParams, hidden: np.ndarray) -> float:
    """log p(H, Y_obs | theta) for a given hidden grid (checking aid for
    decoded paths; emissions count only on observed cells)."""
    h = np.asarray(hidden, dtype=np.int64)
    Q = transition_matrices(params, design)
    N, T = h.shape
    rows = np.arange(N)[:, None]
    days = np.arange(T - 1)[None, :]
    with np.errstate(divide="ignore"):
        ll = np.log(params.pi[h[:, 0] - 1]).sum()
        ll += np.log(Q[rows, days, h[:, :-1] - 1, h[:, 1:] - 1]).sum()
        obs = ~panel.mask
        ll += np.log(params.P[h[obs] - 1, panel.codes[obs] - 1]).sum()
    return float(ll)


def pointwise_predictive(panel: ObservationPanel, design: DesignMatrix,
                         params, mode: str = "one_step") -> np.ndarray:
    """Per-cell predictive probability of each observed value.

    ``one_step`` (HMM parameters): p(y_t | y_{1..t-1}, theta) from the
    forward recursion.  ``markov`` (Markov parameters): p(y_t | previous
    observed value, theta), with multi-step transitions across gaps.
    Missing cells are reported as NaN.
    """
    if mode == "one_step":
        if not isinstance(params, HmmParams):
            raise TypeError("one_step mode requires HMM parameters")
        L = _hmm_factors(panel, params)
    elif mode == "markov":
        if not isinstance(params, MarkovParams):
            raise TypeError("markov mode requires Markov parameters")
        L = _markov_factors(panel, params.m_levels)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    Q = transition_matrices(params, design)
    N, T, R = L.shape
    out = np.full((N, T), np.nan)
    pred = np.broadcast_to(params.pi, (N, R)).copy()
    filtered, _ = _filter_all(L, Q, params.pi)
    obs = ~panel.mask
    out[obs[:, 0], 0] = (pred * L[:, 0]).sum(axis=1)[obs[:, 0]]
    for t in range(1, T):
        pred = np.einsum("nr,nrs->ns", filtered[:, t - 1], Q[:, t - 1])
        prob = (pred * L[:, t]).sum(axis=1)
        out[obs[:, t], t] = prob[obs[:, t]]
    return out
