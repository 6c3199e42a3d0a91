"""Metropolis-within-Gibbs samplers for both models.

Each iteration alternates a data-augmentation draw (hidden states for the
HMM, imputed observations for the Markov model) with parameter updates:
random-walk Metropolis on the random intercepts and fixed effects, and
exact conjugate draws for the intercept means/sds, the initial
distribution, and the emission rows.

Sigma prior note: the default prior is flat on sigma (not sigma^2).  With
n intercepts and sum of squares SS around mu, the induced full
conditional is sigma^2 ~ SS / chi^2_{n-1}; flat-on-sigma^2 gives n-2
degrees of freedom, and a proper scaled-inverse-chi-squared(nu0, s0^2)
prior gives nu0 + n degrees of freedom with scale sum nu0*s0^2 + SS.
All three run through the same draw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import inference
from .dataset import DesignMatrix, ObservationPanel
from .errors import InputError, NumericalError
from .model import (
    HmmParams,
    MarkovParams,
    inverse_softmax,
    transition_matrices,
)

TARGET_ACCEPTANCE = 0.44  # optimal for univariate random-walk proposals
_ADAPT_BATCH = 50


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters.

    ``sigma_prior`` is one of ``"flat-sigma"`` (default), ``"flat-sigma-sq"``,
    or ``"inv-chisq"``; the latter requires ``sigma_nu0`` and
    ``sigma_s0sq`` and is the only proper choice (used by sampler
    validation, which needs to draw from the prior).
    """

    beta_sd: float = 10.0
    mu_sd: float = 10.0
    sigma_prior: str = "flat-sigma"
    sigma_nu0: float | None = None
    sigma_s0sq: float | None = None
    dirichlet_concentration: float = 1.0

    def __post_init__(self):
        if self.beta_sd <= 0 or self.mu_sd <= 0 or self.dirichlet_concentration <= 0:
            raise InputError("prior scales must be positive")
        if self.sigma_prior not in ("flat-sigma", "flat-sigma-sq", "inv-chisq"):
            raise InputError(f"unknown sigma prior {self.sigma_prior!r}")
        if self.sigma_prior == "inv-chisq":
            if not (self.sigma_nu0 and self.sigma_nu0 > 0
                    and self.sigma_s0sq and self.sigma_s0sq > 0):
                raise InputError("inv-chisq sigma prior needs positive nu0 and s0sq")

    def sigma_conditional(self, n: int, ss: float) -> tuple:
        """(degrees of freedom, scale sum) of the sigma^2 full conditional."""
        if self.sigma_prior == "flat-sigma":
            nu, scale_sum = n - 1, ss
        elif self.sigma_prior == "flat-sigma-sq":
            nu, scale_sum = n - 2, ss
        else:
            nu, scale_sum = self.sigma_nu0 + n, self.sigma_nu0 * self.sigma_s0sq + ss
        if nu < 1:
            raise InputError(
                f"sigma full conditional undefined: {n} subjects with "
                f"{self.sigma_prior} prior"
            )
        return nu, scale_sum


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 3
    n_burnin: int = 10_000
    n_keep: int = 10_000
    rw_step_alpha: float = 0.4
    rw_step_beta: float = 0.1
    adapt_during_burnin: bool = True
    jitter_scale: float = 0.1
    seed: int = 0
    store_hidden: bool = False

    def __post_init__(self):
        if self.n_chains < 1 or self.n_keep < 1 or self.n_burnin < 0:
            raise InputError("chain and iteration counts must be positive")
        if self.rw_step_alpha <= 0 or self.rw_step_beta <= 0:
            raise InputError("random-walk step sizes must be positive")


@dataclass
class Chain:
    """Post-burn-in draws of one chain, stacked along the first axis."""

    model_kind: str
    chain_index: int
    draws: dict
    deviance: np.ndarray
    acceptance: dict
    final_hidden: np.ndarray | None = None
    hidden_occupancy: np.ndarray | None = None
    hidden_trace: np.ndarray | None = None

    @property
    def n_kept(self) -> int:
        return self.deviance.size

    def params_at(self, g: int):
        """Reconstruct the full parameter object of draw g."""
        d = self.draws
        if self.model_kind == "hmm":
            return HmmParams(alpha=d["alpha"][g], beta=d["beta"][g], mu=d["mu"][g],
                             sigma=d["sigma"][g], pi=d["pi"][g], P=d["P"][g])
        return MarkovParams(alpha=d["alpha"][g], beta=d["beta"][g], mu=d["mu"][g],
                            sigma=d["sigma"][g], pi=d["pi"][g])


@dataclass
class ChainSet:
    """Merged multi-chain posterior sample."""

    model_kind: str
    chains: list

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def n_kept(self) -> int:
        return self.chains[0].n_kept

    def per_chain(self, name: str) -> np.ndarray:
        """Draws of one parameter array, shape (n_chains, n_kept, ...)."""
        if name == "deviance":
            return np.stack([c.deviance for c in self.chains])
        return np.stack([c.draws[name] for c in self.chains])

    def stacked(self, name: str) -> np.ndarray:
        """Draws pooled across chains, shape (n_chains * n_kept, ...)."""
        a = self.per_chain(name)
        return a.reshape((-1,) + a.shape[2:])

    def params_at(self, g: int):
        """Parameter object for pooled draw index g (chain-major order)."""
        chain, local = divmod(g, self.n_kept)
        return self.chains[chain].params_at(local)

    def posterior_mean_params(self, average: str = "probability"):
        """Element-wise posterior mean parameters.

        Probability vectors are averaged either in probability space and
        renormalized (default) or via mean logits (``average="logit"``).
        """
        def prob_mean(name):
            a = self.stacked(name)
            if average == "probability":
                m = a.mean(axis=0)
                return m / m.sum(axis=-1, keepdims=True)
            if average == "logit":
                logit = np.log(np.clip(a, 1e-300, None))
                m = np.exp(logit.mean(axis=0))
                return m / m.sum(axis=-1, keepdims=True)
            raise InputError(f"unknown averaging space {average!r}")

        common = dict(
            alpha=self.stacked("alpha").mean(axis=0),
            beta=self.stacked("beta").mean(axis=0),
            mu=self.stacked("mu").mean(axis=0),
            sigma=self.stacked("sigma").mean(axis=0),
            pi=prob_mean("pi"),
        )
        if self.model_kind == "hmm":
            return HmmParams(P=prob_mean("P"), **common)
        return MarkovParams(**common)


# -- EM initialization ------------------------------------------------------

@dataclass(frozen=True)
class EmFit:
    """Pooled homogeneous fit used to anchor chain starting points."""

    transition: np.ndarray
    emissions: np.ndarray | None
    initial: np.ndarray
    log_likelihoods: tuple


def _em_start(S: int, M: int) -> tuple:
    # Deterministic, mildly state-anchored start: state s leans toward
    # level round(1 + (s-1)(M-1)/(S-1)).  Breaks symmetry without an RNG.
    A = np.full((S, S), 0.2 / S) + 0.8 * np.eye(S)
    A /= A.sum(axis=1, keepdims=True)
    P = np.ones((S, M))
    for s in range(S):
        anchor = 0 if S == 1 else round(s * (M - 1) / (S - 1))
        P[s, anchor] += 2.0
    P /= P.sum(axis=1, keepdims=True)
    pi = np.full(S, 1.0 / S)
    return A, P, pi


def em_initialize(panel: ObservationPanel, S: int, tol: float = 1e-8,
                  max_iter: int = 500) -> EmFit:
    """Baum-Welch MLE of a homogeneous HMM pooled over all subjects.

    Missing cells are marginalized.  The log-likelihood sequence is
    monotone nondecreasing; iteration stops when the improvement drops
    below ``tol`` or after ``max_iter`` iterations.
    """
    if panel.n_subjects == 0 or panel.n_days == 0:
        raise InputError("cannot run EM on an empty panel")
    M = panel.m_levels
    obs = ~panel.mask
    if S == 1:
        counts = np.bincount(panel.codes[obs] - 1, minlength=M).astype(float)
        total = counts.sum()
        P = (counts / total if total > 0 else np.full(M, 1.0 / M))[None, :]
        ll = float(np.sum(counts * np.log(np.clip(P[0], 1e-300, None))))
        return EmFit(transition=np.ones((1, 1)), emissions=P,
                     initial=np.ones(1), log_likelihoods=(ll,))
    A, P, pi = _em_start(S, M)
    N, T = panel.codes.shape
    eye = np.eye(M)
    obs_onehot = np.zeros((N, T, M))
    obs_onehot[obs] = eye[panel.codes[obs] - 1]
    lls = []
    for _ in range(max_iter):
        L = P.T[np.clip(panel.codes, 1, None) - 1]
        L = np.where(panel.mask[:, :, None], 1.0, L)
        Q = np.broadcast_to(A, (N, T - 1, S, S))
        filtered, scaling = inference._filter_all(L, Q, pi)
        ll = float(inference._log_scaling(scaling).sum())
        lls.append(ll)
        # backward pass storing normalized b for gamma and xi
        b = np.empty((N, T, S))
        b[:, T - 1] = 1.0 / S
        for t in range(T - 2, -1, -1):
            w = np.einsum("rs,ns->nr", A, L[:, t + 1] * b[:, t + 1])
            b[:, t] = w / w.sum(axis=1, keepdims=True)
        gamma = filtered * b
        gamma /= gamma.sum(axis=2, keepdims=True)
        xi_sum = np.zeros((S, S))
        for t in range(T - 1):
            xi = filtered[:, t, :, None] * A[None] * (L[:, t + 1] * b[:, t + 1])[:, None, :]
            xi /= xi.sum(axis=(1, 2), keepdims=True)
            xi_sum += xi.sum(axis=0)
        A = xi_sum / gamma[:, :-1].sum(axis=(0, 1))[:, None]
        A /= A.sum(axis=1, keepdims=True)
        num = np.einsum("nts,ntm->sm", gamma * obs[:, :, None], obs_onehot)
        P = num / np.clip(num.sum(axis=1, keepdims=True), 1e-300, None)
        pi = gamma[:, 0].mean(axis=0)
        pi /= pi.sum()
        if len(lls) > 1 and lls[-1] - lls[-2] < tol:
            break
    return EmFit(transition=A, emissions=P, initial=pi, log_likelihoods=tuple(lls))


def empirical_markov_fit(panel: ObservationPanel) -> EmFit:
    """Pooled empirical transition frequencies over adjacent observed
    pairs, add-one smoothed; the Markov-model analogue of the EM anchor."""
    M = panel.m_levels
    counts = np.ones((M, M))
    prev, nxt = panel.codes[:, :-1], panel.codes[:, 1:]
    both = ~panel.mask[:, :-1] & ~panel.mask[:, 1:]
    np.add.at(counts, (prev[both] - 1, nxt[both] - 1), 1.0)
    A = counts / counts.sum(axis=1, keepdims=True)
    first = panel.codes[:, 0][~panel.mask[:, 0]]
    pi = np.bincount(first - 1, minlength=M) + 1.0
    pi /= pi.sum()
    return EmFit(transition=A, emissions=None, initial=pi, log_likelihoods=())


def init_chain(em_fit: EmFit, n_subjects: int, n_covariates: int,
               chain_index: int = 0, jitter_scale: float = 0.1,
               model_kind: str = "hmm", seed: int = 0):
    """Starting parameters anchored at the pooled fit.

    beta starts at zero, mu at the softmax inverse of the pooled
    transition rows (so the implied matrix at alpha = mu, x = 0 equals the
    pooled matrix), alpha at mu plus a small per-chain jitter, sigma at 1.
    """
    A = em_fit.transition
    R = A.shape[0]
    K = R - 1
    mu = np.stack([inverse_softmax(A[r]) for r in range(R)])
    rng = np.random.default_rng(np.random.SeedSequence((seed, 977, chain_index)))
    alpha = mu[None, :, :] + jitter_scale * rng.standard_normal((n_subjects, R, K))
    beta = np.zeros((R, K, n_covariates))
    sigma = np.ones((R, K))
    pi = np.clip(em_fit.initial, 1e-6, None)
    pi = pi / pi.sum()
    if model_kind == "hmm":
        P = np.clip(em_fit.emissions, 1e-6, None)
        P = P / P.sum(axis=1, keepdims=True)
        return HmmParams(alpha=alpha, beta=beta, mu=mu, sigma=sigma, pi=pi, P=P)
    if model_kind == "markov":
        return MarkovParams(alpha=alpha, beta=beta, mu=mu, sigma=sigma, pi=pi)
    raise InputError(f"unknown model kind {model_kind!r}")


# -- complete-data multinomial-logit machinery ------------------------------

class _RowData:
    """Sufficient structure for one transition row given complete sequences:
    the points (subject, day) whose row value matches, their design
    vectors, targets, and current logits."""

    def __init__(self, params, seq: np.ndarray, design: DesignMatrix, row: int):
        self.row = row
        i_arr, t_arr = np.nonzero(seq[:, :-1] == row)
        self.i_arr = i_arr
        self.X = design.values[i_arr, t_arr]          # (n_pts, p)
        self.target = seq[i_arr, t_arr + 1]           # 1-based
        r = row - 1
        self.eta = params.alpha[i_arr, r] + self.X @ params.beta[r].T  # (n_pts, K)
        self.log_denom = self._full_log_denom(self.eta)

    @staticmethod
    def _full_log_denom(eta: np.ndarray) -> np.ndarray:
        out = np.zeros(eta.shape[0])
        for k in range(eta.shape[1]):
            out = np.logaddexp(out, eta[:, k])
        return out

    def log_denom_with(self, k: int, eta_k_new: np.ndarray) -> np.ndarray:
        out = eta_k_new.copy()
        for j in range(self.eta.shape[1]):
            if j == k:
                continue
            out = np.logaddexp(out, self.eta[:, j])
        return np.logaddexp(out, 0.0)


def _check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite posterior quantity in {name} update")


def update_alpha(params, seq: np.ndarray, design: DesignMatrix, prior: PriorSpec,
                 rng: np.random.Generator, steps=None) -> np.ndarray:
    """Random-walk Metropolis update of every random intercept.

    ``seq`` is the complete (N, T) grid of row values (hidden states for
    the HMM, complete observations for the Markov model).  Proposals for a
    given (row, target) block are made jointly across subjects, which is
    valid because the intercepts are conditionally independent given the
    fixed effects.  Returns the (R, K) acceptance fractions.
    """
    N, R, K = params.alpha.shape
    if steps is None:
        steps = np.full((R, K), 0.4)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), (R, K))
    acc = np.zeros((R, K))
    for row in range(1, R + 1):
        data = _RowData(params, seq, design, row)
        r = row - 1
        for k in range(K):
            target_state = k + 2
            d = steps[r, k] * rng.standard_normal(N)
            eta_new = data.eta[:, k] + d[data.i_arr]
            ld_new = data.log_denom_with(k, eta_new)
            dll_pts = np.where(data.target == target_state, d[data.i_arr], 0.0)
            dll_pts = dll_pts - ld_new + data.log_denom
            dll = np.bincount(data.i_arr, weights=dll_pts, minlength=N)
            a_old = params.alpha[:, r, k]
            a_new = a_old + d
            sig2 = params.sigma[r, k] ** 2
            dprior = ((a_old - params.mu[r, k]) ** 2
                      - (a_new - params.mu[r, k]) ** 2) / (2.0 * sig2)
            log_ratio = dll + dprior
            _check_finite("alpha", log_ratio)
            accept = np.log(rng.random(N)) < log_ratio
            params.alpha[accept, r, k] = a_new[accept]
            acc_pts = accept[data.i_arr]
            data.eta[acc_pts, k] = eta_new[acc_pts]
            data.log_denom[acc_pts] = ld_new[acc_pts]
            acc[r, k] = accept.mean()
    return acc


def update_beta(params, seq: np.ndarray, design: DesignMatrix, prior: PriorSpec,
                rng: np.random.Generator, steps=None) -> np.ndarray:
    """Univariate random-walk Metropolis update of every fixed effect.
    Returns the (R, K, p) acceptance indicators (0 or 1 per scalar)."""
    R, K, p = params.beta.shape
    if steps is None:
        steps = np.full((R, K, p), 0.1)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), (R, K, p))
    acc = np.zeros((R, K, p))
    for row in range(1, R + 1):
        data = _RowData(params, seq, design, row)
        r = row - 1
        for k in range(K):
            target_state = k + 2
            is_target = data.target == target_state
            for j in range(p):
                db = steps[r, k, j] * rng.standard_normal()
                xcol = data.X[:, j]
                eta_new = data.eta[:, k] + xcol * db
                ld_new = data.log_denom_with(k, eta_new)
                dll = float(np.sum(np.where(is_target, xcol * db, 0.0)
                                   - ld_new + data.log_denom))
                b_old = params.beta[r, k, j]
                b_new = b_old + db
                dprior = (b_old ** 2 - b_new ** 2) / (2.0 * prior.beta_sd ** 2)
                log_ratio = dll + dprior
                _check_finite("beta", log_ratio)
                if np.log(rng.random()) < log_ratio:
                    params.beta[r, k, j] = b_new
                    data.eta[:, k] = eta_new
                    data.log_denom = ld_new
                    acc[r, k, j] = 1.0
    return acc


def update_mu(params, prior: PriorSpec, rng: np.random.Generator) -> None:
    """Exact conjugate normal draw of every random-intercept mean."""
    N = params.alpha.shape[0]
    sig2 = params.sigma ** 2
    prec = N / sig2 + 1.0 / prior.mu_sd ** 2
    mean = (params.alpha.sum(axis=0) / sig2) / prec
    params.mu[...] = mean + rng.standard_normal(params.mu.shape) / np.sqrt(prec)


def update_sigma(params, prior: PriorSpec, rng: np.random.Generator) -> None:
    """Exact scaled-inverse-chi-squared draw of every intercept variance."""
    N = params.alpha.shape[0]
    if N < 2 and prior.sigma_prior != "inv-chisq":
        raise InputError("sigma update needs at least 2 subjects")
    ss = ((params.alpha - params.mu[None]) ** 2).sum(axis=0)
    R, K = params.mu.shape
    for r in range(R):
        for k in range(K):
            nu, scale_sum = prior.sigma_conditional(N, float(ss[r, k]))
            draw = scale_sum / rng.chisquare(nu)
            params.sigma[r, k] = np.sqrt(max(draw, 1e-300))


def _log_prior_sigma(prior: PriorSpec, sigma: float) -> float:
    """Unnormalized log prior density on the sigma scale."""
    if prior.sigma_prior == "flat-sigma":
        return 0.0
    if prior.sigma_prior == "flat-sigma-sq":
        return float(np.log(sigma))
    return float(-(prior.sigma_nu0 + 1.0) * np.log(sigma)
                 - prior.sigma_nu0 * prior.sigma_s0sq / (2.0 * sigma ** 2))


def update_scale_joint(params, seq: np.ndarray, design: DesignMatrix,
                       prior: PriorSpec, rng: np.random.Generator,
                       step: float = 0.3) -> np.ndarray:
    """Joint rescaling of each (row, target) intercept block with its sd.

    Proposes sigma' = sigma * e^eps and moves every deviation alpha_i - mu
    by the same factor.  The hierarchical prior terms cancel against the
    transform Jacobian, leaving the complete-data likelihood ratio times
    p(sigma') * sigma' / (p(sigma) * sigma).  This move travels the
    narrow-sigma funnel that coordinatewise updates cross only slowly.
    Returns the (R, K) acceptance indicators.
    """
    N, R, K = params.alpha.shape
    acc = np.zeros((R, K))
    for row in range(1, R + 1):
        data = _RowData(params, seq, design, row)
        r = row - 1
        for k in range(K):
            target_state = k + 2
            sigma_old = params.sigma[r, k]
            factor = float(np.exp(step * rng.standard_normal()))
            sigma_new = sigma_old * factor
            d = (factor - 1.0) * (params.alpha[:, r, k] - params.mu[r, k])
            eta_new = data.eta[:, k] + d[data.i_arr]
            ld_new = data.log_denom_with(k, eta_new)
            dll = float(np.sum(
                np.where(data.target == target_state, d[data.i_arr], 0.0)
                - ld_new + data.log_denom))
            log_ratio = (dll
                         + _log_prior_sigma(prior, sigma_new)
                         - _log_prior_sigma(prior, sigma_old)
                         + np.log(factor))
            _check_finite("scale", log_ratio)
            if np.log(rng.random()) < log_ratio:
                params.sigma[r, k] = sigma_new
                params.alpha[:, r, k] += d
                data.eta[:, k] = eta_new
                data.log_denom = ld_new
                acc[r, k] = 1.0
    return acc


def update_location_joint(params, seq: np.ndarray, design: DesignMatrix,
                          prior: PriorSpec, rng: np.random.Generator,
                          step: float = 0.15) -> np.ndarray:
    """Joint translation of each (row, target) block: mu and every
    intercept shift by the same amount, so the hierarchical prior terms
    are unchanged and only the likelihood and the mu prior enter.
    Returns the (R, K) acceptance indicators."""
    N, R, K = params.alpha.shape
    acc = np.zeros((R, K))
    for row in range(1, R + 1):
        data = _RowData(params, seq, design, row)
        r = row - 1
        for k in range(K):
            target_state = k + 2
            d = step * rng.standard_normal()
            eta_new = data.eta[:, k] + d
            ld_new = data.log_denom_with(k, eta_new)
            dll = float(np.sum(
                np.where(data.target == target_state, d, 0.0)
                - ld_new + data.log_denom))
            mu_old = params.mu[r, k]
            mu_new = mu_old + d
            dprior = (mu_old ** 2 - mu_new ** 2) / (2.0 * prior.mu_sd ** 2)
            log_ratio = dll + dprior
            _check_finite("location", log_ratio)
            if np.log(rng.random()) < log_ratio:
                params.mu[r, k] = mu_new
                params.alpha[:, r, k] += d
                data.eta[:, k] = eta_new
                data.log_denom = ld_new
                acc[r, k] = 1.0
    return acc


def update_pi(params, first_values: np.ndarray, prior: PriorSpec,
              rng: np.random.Generator) -> None:
    """Dirichlet draw of the initial distribution from day-1 counts."""
    R = params.pi.size
    counts = np.bincount(np.asarray(first_values, dtype=np.int64) - 1, minlength=R)
    params.pi[...] = rng.dirichlet(prior.dirichlet_concentration + counts)


def update_emissions(params: HmmParams, hidden: np.ndarray,
                     panel: ObservationPanel, prior: PriorSpec,
                     rng: np.random.Generator) -> None:
    """Dirichlet draw of each emission row from (hidden, observed-level)
    co-occurrence counts over observed cells only."""
    S, M = params.P.shape
    obs = ~panel.mask
    counts = np.zeros((S, M))
    np.add.at(counts, (hidden[obs] - 1, panel.codes[obs] - 1), 1.0)
    for s in range(S):
        params.P[s] = rng.dirichlet(prior.dirichlet_concentration + counts[s])


def sample_missing_y(params: MarkovParams, panel: ObservationPanel,
                     design: DesignMatrix, rng: np.random.Generator) -> np.ndarray:
    """Impute every missing run from its exact conditional given the
    flanking observed values (forward filter / backward sample over the
    observation-level chain).  Observed cells are returned unchanged."""
    L = inference._markov_factors(panel, params.m_levels)
    Q = transition_matrices(params, design)
    filtered, _ = inference._filter_all(L, Q, params.pi)
    complete = inference._backward_sample_all(filtered, Q, rng)
    obs = ~panel.mask
    complete[obs] = panel.codes[obs]
    return complete


# -- chain orchestration ----------------------------------------------------

def _deviance(model_kind: str, panel, design, params) -> float:
    if model_kind == "hmm":
        return -2.0 * inference.log_likelihood_hmm(panel, design, params)
    return -2.0 * inference.log_likelihood_markov(panel, design, params)


def run_chain(model_kind: str, panel: ObservationPanel, design: DesignMatrix,
              prior: PriorSpec, config: SamplerConfig, chain_index: int = 0,
              init_params=None) -> Chain:
    """Run one chain and return its post-burn-in draws.

    Fully reproducible from ``(config.seed, chain_index)``.  Hidden-state
    storage follows ``config.store_hidden``: by default only the final
    iteration's grid and an occupancy tally are kept.
    """
    if model_kind not in ("hmm", "markov"):
        raise InputError(f"unknown model kind {model_kind!r}")
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, chain_index)))
    if init_params is None:
        # default state count: one hidden state per observed level
        if model_kind == "hmm":
            anchor = em_initialize(panel, S=panel.m_levels)
        else:
            anchor = empirical_markov_fit(panel)
        params = init_chain(anchor, panel.n_subjects, design.p,
                            chain_index=chain_index,
                            jitter_scale=config.jitter_scale,
                            model_kind=model_kind, seed=config.seed)
    else:
        params = init_params.copy()
    R, K, p = params.beta.shape
    steps_alpha = np.full((R, K), config.rw_step_alpha)
    steps_beta = np.full((R, K, p), config.rw_step_beta)
    acc_alpha_batch = np.zeros((R, K))
    acc_beta_batch = np.zeros((R, K, p))
    acc_alpha_kept = np.zeros((R, K))
    acc_beta_kept = np.zeros((R, K, p))
    n_total = config.n_burnin + config.n_keep
    kept = {name: [] for name in
            ("alpha", "beta", "mu", "sigma", "pi") + (("P",) if model_kind == "hmm" else ())}
    deviance = np.zeros(config.n_keep)
    occupancy = (np.zeros((panel.n_subjects, panel.n_days, params.n_states))
                 if model_kind == "hmm" else None)
    hidden_trace = [] if (config.store_hidden and model_kind == "hmm") else None
    hidden = None
    adapt_round = 0
    for g in range(n_total):
        if model_kind == "hmm":
            hidden = inference.ffbs_sample_hidden(panel, design, params, rng)
            seq = hidden
        else:
            seq = sample_missing_y(params, panel, design, rng)
        acc_a = update_alpha(params, seq, design, prior, rng, steps_alpha)
        acc_b = update_beta(params, seq, design, prior, rng, steps_beta)
        update_mu(params, prior, rng)
        update_sigma(params, prior, rng)
        update_scale_joint(params, seq, design, prior, rng)
        update_location_joint(params, seq, design, prior, rng)
        if model_kind == "hmm":
            update_emissions(params, hidden, panel, prior, rng)
        update_pi(params, seq[:, 0], prior, rng)
        in_burnin = g < config.n_burnin
        if in_burnin and config.adapt_during_burnin:
            acc_alpha_batch += acc_a
            acc_beta_batch += acc_b
            if (g + 1) % _ADAPT_BATCH == 0:
                adapt_round += 1
                gain = 1.0 / np.sqrt(adapt_round)
                steps_alpha *= np.exp(gain * (acc_alpha_batch / _ADAPT_BATCH
                                              - TARGET_ACCEPTANCE))
                steps_beta *= np.exp(gain * (acc_beta_batch / _ADAPT_BATCH
                                             - TARGET_ACCEPTANCE))
                np.clip(steps_alpha, 1e-3, 50.0, out=steps_alpha)
                np.clip(steps_beta, 1e-3, 50.0, out=steps_beta)
                acc_alpha_batch[...] = 0.0
                acc_beta_batch[...] = 0.0
        if not in_burnin:
            acc_alpha_kept += acc_a
            acc_beta_kept += acc_b
            for name in kept:
                kept[name].append(getattr(params, name if name != "P" else "P").copy())
            deviance[g - config.n_burnin] = _deviance(model_kind, panel, design, params)
            if occupancy is not None:
                idx = np.eye(params.n_states)[hidden - 1]
                occupancy += idx
            if hidden_trace is not None:
                hidden_trace.append(hidden.copy())
    draws = {name: np.stack(values) for name, values in kept.items()}
    return Chain(
        model_kind=model_kind,
        chain_index=chain_index,
        draws=draws,
        deviance=deviance,
        acceptance={
            "alpha": acc_alpha_kept / config.n_keep,
            "beta": acc_beta_kept / config.n_keep,
        },
        final_hidden=hidden.copy() if hidden is not None else None,
        hidden_occupancy=occupancy / config.n_keep if occupancy is not None else None,
        hidden_trace=np.stack(hidden_trace) if hidden_trace else None,
    )


def run_chains(model_kind: str, panel: ObservationPanel, design: DesignMatrix,
               prior: PriorSpec | None = None,
               config: SamplerConfig | None = None,
               n_states: int | None = None) -> ChainSet:
    """Run ``config.n_chains`` independently seeded chains.

    Chains share the pooled anchor fit but receive per-chain jitter; each
    chain's output depends only on ``(config.seed, chain_index)``, so the
    result is invariant to execution order.  ``n_states`` defaults to the
    number of observed levels (HMM only; the Markov model's rows are the
    levels themselves).
    """
    prior = prior or PriorSpec()
    config = config or SamplerConfig()
    if model_kind == "hmm":
        anchor = em_initialize(panel, S=n_states or panel.m_levels)
    elif model_kind == "markov":
        anchor = empirical_markov_fit(panel)
    else:
        raise InputError(f"unknown model kind {model_kind!r}")
    chains = []
    for c in range(config.n_chains):
        init = init_chain(anchor, panel.n_subjects, design.p, chain_index=c,
                          jitter_scale=config.jitter_scale,
                          model_kind=model_kind, seed=config.seed)
        chains.append(run_chain(model_kind, panel, design, prior, config,
                                chain_index=c, init_params=init))
    return ChainSet(model_kind=model_kind, chains=chains)


def sample_params_from_prior(prior: PriorSpec, n_subjects: int, n_rows: int,
                             n_covariates: int, m_levels: int,
                             model_kind: str, rng: np.random.Generator):
    """Draw a full parameter state from the prior (requires the proper
    inv-chisq sigma prior); used for sampler validation."""
    if prior.sigma_prior != "inv-chisq":
        raise InputError("prior sampling requires the proper inv-chisq sigma prior")
    R, K = n_rows, n_rows - 1
    sigma2 = (prior.sigma_nu0 * prior.sigma_s0sq
              / rng.chisquare(prior.sigma_nu0, size=(R, K)))
    sigma = np.sqrt(sigma2)
    mu = prior.mu_sd * rng.standard_normal((R, K))
    alpha = mu[None] + sigma[None] * rng.standard_normal((n_subjects, R, K))
    beta = prior.beta_sd * rng.standard_normal((R, K, n_covariates))
    conc = np.full(R, prior.dirichlet_concentration)
    pi = rng.dirichlet(conc)
    if model_kind == "hmm":
        P = np.stack([rng.dirichlet(np.full(m_levels, prior.dirichlet_concentration))
                      for _ in range(R)])
        return HmmParams(alpha=alpha, beta=beta, mu=mu, sigma=sigma, pi=pi, P=P)
    return MarkovParams(alpha=alpha, beta=beta, mu=mu, sigma=sigma, pi=pi)
