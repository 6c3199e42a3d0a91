"""Parameter containers and generative probability kernels.

Both models share one transition structure: each row of the transition
matrix is a multinomial logit with per-subject random intercepts and
fixed covariate effects, with category 1 as the baseline (its logit is
identically zero).  For the hidden Markov model rows are indexed by the
previous hidden state; for the first-order Markov model they are indexed
by the previous observation and there is no emission matrix.

Array layouts (N subjects, R rows, K = R - 1 non-baseline targets,
p covariates, M observed levels):

* ``alpha``: (N, R, K) random intercepts, ``alpha[i, r-1, s-2]`` for a
  transition from row value r into target value s (2-based targets).
* ``beta``:  (R, K, p) fixed effects.
* ``mu``, ``sigma``: (R, K) random-intercept means and sds.
* ``pi``: (R,) initial distribution; ``P``: (S, M) emissions (HMM only).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import DesignMatrix, ObservationPanel
from .errors import InputError, NumericalError

_PROB_TOL = 1e-12


def _check_simplex(v: np.ndarray, what: str) -> None:
    v = np.atleast_2d(v)
    if np.any(v < 0):
        raise InputError(f"{what} has negative entries")
    if np.any(np.abs(v.sum(axis=-1) - 1.0) > _PROB_TOL):
        raise InputError(f"{what} rows do not sum to 1")


@dataclass
class HmmParams:
    """Complete parameter state of the mixed-effects HMM."""

    alpha: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pi: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.pi = np.asarray(self.pi, dtype=float)
        self.P = np.asarray(self.P, dtype=float)
        self.validate()

    @property
    def n_states(self) -> int:
        return self.pi.size

    @property
    def m_levels(self) -> int:
        return self.P.shape[1]

    @property
    def n_subjects(self) -> int:
        return self.alpha.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[2]

    def validate(self) -> None:
        S = self.n_states
        K = S - 1
        if self.alpha.ndim != 3 or self.alpha.shape[1:] != (S, K):
            raise InputError(f"alpha must have shape (N, {S}, {K})")
        if self.beta.ndim != 3 or self.beta.shape[:2] != (S, K):
            raise InputError(f"beta must have shape ({S}, {K}, p)")
        if self.mu.shape != (S, K) or self.sigma.shape != (S, K):
            raise InputError(f"mu and sigma must have shape ({S}, {K})")
        if np.any(self.sigma <= 0):
            raise InputError("sigma entries must be strictly positive")
        if self.P.ndim != 2 or self.P.shape[0] != S:
            raise InputError(f"P must have shape ({S}, M)")
        _check_simplex(self.pi, "pi")
        _check_simplex(self.P, "P")

    def copy(self) -> "HmmParams":
        return HmmParams(
            alpha=self.alpha.copy(),
            beta=self.beta.copy(),
            mu=self.mu.copy(),
            sigma=self.sigma.copy(),
            pi=self.pi.copy(),
            P=self.P.copy(),
        )


@dataclass
class MarkovParams:
    """Parameter state of the first-order Markov model.

    Transition rows are indexed by the previous observed level; there is
    no emission matrix.
    """

    alpha: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.pi = np.asarray(self.pi, dtype=float)
        self.validate()

    @property
    def m_levels(self) -> int:
        return self.pi.size

    # The transition structure is identical to the HMM's with rows indexed
    # by observed levels, so shared kernels can treat M as the state count.
    @property
    def n_states(self) -> int:
        return self.pi.size

    @property
    def n_subjects(self) -> int:
        return self.alpha.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[2]

    def validate(self) -> None:
        M = self.m_levels
        K = M - 1
        if self.alpha.ndim != 3 or self.alpha.shape[1:] != (M, K):
            raise InputError(f"alpha must have shape (N, {M}, {K})")
        if self.beta.ndim != 3 or self.beta.shape[:2] != (M, K):
            raise InputError(f"beta must have shape ({M}, {K}, p)")
        if self.mu.shape != (M, K) or self.sigma.shape != (M, K):
            raise InputError(f"mu and sigma must have shape ({M}, {K})")
        if np.any(self.sigma <= 0):
            raise InputError("sigma entries must be strictly positive")
        _check_simplex(self.pi, "pi")

    def copy(self) -> "MarkovParams":
        return MarkovParams(
            alpha=self.alpha.copy(),
            beta=self.beta.copy(),
            mu=self.mu.copy(),
            sigma=self.sigma.copy(),
            pi=self.pi.copy(),
        )


@dataclass(frozen=True)
class SimulatedPanel:
    """Output of a forward simulation.

    ``hidden`` is None for the Markov model.  Cells masked as missing in
    ``observed`` still have hidden states (and latent observations)
    simulated beneath them.
    """

    observed: ObservationPanel
    hidden: np.ndarray | None
    seed: object


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with a prepended baseline logit of 0.

    ``logits[..., k]`` is the logit of target category k + 2; the implied
    logit of category 1 is exactly 0.  Computed stably by subtracting the
    running maximum before exponentiation.
    """
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite linear predictor in transition logits")
    full = np.concatenate(
        [np.zeros(logits.shape[:-1] + (1,)), logits], axis=-1
    )
    full -= full.max(axis=-1, keepdims=True)
    e = np.exp(full)
    return e / e.sum(axis=-1, keepdims=True)


def inverse_softmax(row: np.ndarray, clamp: float = 1e-6) -> np.ndarray:
    """Logits (relative to category 1) reproducing a probability row.

    Entries below ``clamp`` are clamped before taking log ratios, since
    upstream estimates may contain exact zeros.
    """
    row = np.asarray(row, dtype=float)
    row = np.clip(row, clamp, None)
    row = row / row.sum()
    return np.log(row[1:] / row[0])


def transition_row(from_state: int, alpha_i: np.ndarray, beta: np.ndarray,
                   x: np.ndarray) -> np.ndarray:
    """One row of a subject-day transition matrix.

    Parameters
    ----------
    from_state : int
        Row value (1-based state or level).
    alpha_i : ndarray, shape (R, K)
        The subject's random-intercept block.
    beta : ndarray, shape (R, K, p)
        Fixed effects.
    x : ndarray, shape (p,)
        Design vector for the day of the transition.
    """
    r = from_state - 1
    eta = alpha_i[r] + beta[r] @ np.asarray(x, dtype=float)
    return softmax_rows(eta)


def transition_matrix(subject: int, day: int, params, design: DesignMatrix) -> np.ndarray:
    """Full transition matrix for one subject-day; row r is
    :func:`transition_row` evaluated at that day's design vector."""
    x = design.vector(subject, day)
    eta = params.alpha[subject] + params.beta @ x
    return softmax_rows(eta)


def transition_matrices(params, design: DesignMatrix) -> np.ndarray:
    """All per-day transition matrices, shape (N, T-1, R, R).

    Entry ``[i, t]`` governs the transition from day t to day t + 1 and is
    evaluated at the design vector of day t.
    """
    X = design.values[:, :-1, :]  # (N, T-1, p)
    eta = params.alpha[:, None, :, :] + np.einsum("rkp,ntp->ntrk", params.beta, X)
    return softmax_rows(eta)


def multi_step_matrix(subject: int, start_day: int, gap: int, params,
                      design: DesignMatrix) -> np.ndarray:
    """Ordered product of the gap + 1 per-day matrices starting at
    ``start_day``; the (r, s) entry is the probability of being in s at
    day ``start_day + gap + 1`` given r at ``start_day``."""
    if gap < 0:
        raise InputError("gap must be nonnegative")
    if start_day < 0 or start_day + gap + 1 > design.n_days - 1:
        raise IndexError("multi-step window extends past the last day")
    out = transition_matrix(subject, start_day, params, design)
    for d in range(start_day + 1, start_day + gap + 1):
        out = out @ transition_matrix(subject, d, params, design)
    return out


def emission_prob(state: int, level: int, params: HmmParams) -> float:
    """P(Y = level | H = state); both arguments 1-based."""
    return float(params.P[state - 1, level - 1])


def _sample_categorical_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized categorical draw: one draw per row of ``probs`` using the
    uniforms ``u``.  Returns 1-based values."""
    cum = np.cumsum(probs, axis=-1)
    return (u[..., None] > cum).sum(axis=-1) + 1


def _simulate_chain(params, design: DesignMatrix, n_subjects: int, n_days: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Simulate the row-indexed chain (hidden states for the HMM, observed
    levels for the Markov model) for all subjects, shape (N, T)."""
    if n_subjects > params.n_subjects or n_subjects > design.n_subjects:
        raise InputError("n_subjects exceeds the parameter/design population")
    if n_days > design.n_days:
        raise InputError("n_days exceeds the design horizon")
    R = params.n_states
    states = np.zeros((n_subjects, n_days), dtype=np.int64)
    states[:, 0] = _sample_categorical_rows(
        np.broadcast_to(params.pi, (n_subjects, R)), rng.random(n_subjects)
    )
    Q = transition_matrices(params, design)[:n_subjects]
    for t in range(n_days - 1):
        rows = Q[np.arange(n_subjects), t, states[:, t] - 1]
        states[:, t + 1] = _sample_categorical_rows(rows, rng.random(n_subjects))
    return states


def simulate_hmm(params: HmmParams, design: DesignMatrix, n_subjects: int,
                 n_days: int, mask: np.ndarray | None = None,
                 seed=None) -> SimulatedPanel:
    """Forward-simulate hidden states and observations.

    Hidden states and observations are simulated for every cell; cells
    under ``mask`` are reported missing in the observed panel but their
    hidden states are kept.  Fully reproducible from ``seed``.
    """
    rng = np.random.default_rng(seed)
    hidden = _simulate_chain(params, design, n_subjects, n_days, rng)
    obs = _sample_categorical_rows(
        params.P[hidden - 1], rng.random(hidden.shape)
    )
    if mask is None:
        mask = np.zeros_like(obs, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != obs.shape:
            raise InputError("mask shape must match the simulated panel")
    panel = ObservationPanel(codes=obs, mask=mask, m_levels=params.m_levels)
    return SimulatedPanel(observed=panel, hidden=hidden, seed=seed)


def simulate_markov(params: MarkovParams, design: DesignMatrix, n_subjects: int,
                    n_days: int, mask: np.ndarray | None = None,
                    seed=None) -> SimulatedPanel:
    """Forward-simulate the observation-level Markov chain."""
    rng = np.random.default_rng(seed)
    obs = _simulate_chain(params, design, n_subjects, n_days, rng)
    if mask is None:
        mask = np.zeros_like(obs, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != obs.shape:
            raise InputError("mask shape must match the simulated panel")
    panel = ObservationPanel(codes=obs, mask=mask, m_levels=params.m_levels)
    return SimulatedPanel(observed=panel, hidden=None, seed=seed)


# -- flat key-value parameter serialization ---------------------------------
#
# One line per scalar: "<path> <value>".  Paths use 0-based subject indices
# and 1-based state/level values, e.g. alpha[0,2,3] is subject 0, from-state
# 2, to-state 3.  Ordering is deterministic (C order per array, arrays in
# the order alpha, beta, mu, sigma, pi, P).

def _emit_array(lines: list, name: str, a: np.ndarray, index_offsets) -> None:
    for idx in np.ndindex(a.shape):
        shown = ",".join(str(i + off) for i, off in zip(idx, index_offsets))
        lines.append(f"{name}[{shown}] {float(a[idx])!r}")


def params_to_text(params) -> str:
    """Serialize parameters to flat key-value text."""
    lines = [f"# panelhmm-params 1 kind={'hmm' if isinstance(params, HmmParams) else 'markov'}"]
    _emit_array(lines, "alpha", params.alpha, (0, 1, 2))
    _emit_array(lines, "beta", params.beta, (1, 2, 0))
    _emit_array(lines, "mu", params.mu, (1, 2))
    _emit_array(lines, "sigma", params.sigma, (1, 2))
    _emit_array(lines, "pi", params.pi, (1,))
    if isinstance(params, HmmParams):
        _emit_array(lines, "P", params.P, (1, 1))
    return "\n".join(lines) + "\n"


def params_from_text(text: str):
    """Inverse of :func:`params_to_text`."""
    kind = None
    entries = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "kind=" in line:
                kind = line.split("kind=")[1].split()[0]
            continue
        try:
            path, value = line.split()
            name, idx = path[:-1].split("[")
            entries.setdefault(name, []).append(
                (tuple(int(k) for k in idx.split(",")), float(value))
            )
        except ValueError:
            raise InputError(f"malformed params line {line!r}") from None
    if kind not in ("hmm", "markov"):
        raise InputError("missing or invalid params header line")
    offsets = {
        "alpha": (0, 1, 2), "beta": (1, 2, 0), "mu": (1, 2),
        "sigma": (1, 2), "pi": (1,), "P": (1, 1),
    }
    arrays = {}
    for name, items in entries.items():
        off = offsets[name]
        shape = tuple(
            max(idx[d] - off[d] for idx, _ in items) + 1 for d in range(len(off))
        )
        a = np.zeros(shape)
        for idx, value in items:
            a[tuple(i - o for i, o in zip(idx, off))] = value
        arrays[name] = a
    cls = HmmParams if kind == "hmm" else MarkovParams
    return cls(**arrays)


def save_params(params, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(params_to_text(params))


def load_params(path):
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_text(fh.read())
