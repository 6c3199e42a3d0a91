import itertools

import numpy as np
import pytest

from panelhmm.dataset import DesignMatrix, ObservationPanel, RawCovariates, build_design
from panelhmm.model import HmmParams, MarkovParams, transition_matrices

# acceptance verdict lines, echoed after the test report by the summary hook
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_design(n_subjects, n_days, rng, p=2):
    """A small standardized-looking design with p covariate columns."""
    values = rng.normal(0.0, 0.5, size=(n_subjects, n_days, p))
    return DesignMatrix(values=values, standardizations=(),
                        names=tuple(f"x{j}" for j in range(p)))


def trial_design(n_subjects, n_days, rng):
    """A design built through the real covariate pipeline."""
    d_drink = rng.uniform(0.05, 0.95, n_subjects)
    d_heavy = d_drink * rng.uniform(0.0, 1.0, n_subjects)
    raw = RawCovariates(
        treatment=rng.integers(0, 2, n_subjects),
        sex=rng.integers(0, 2, n_subjects),
        d_drink=d_drink,
        d_heavy=d_heavy,
    )
    return build_design(raw, n_days)


def random_hmm_params(n_subjects, S, M, p, rng, concentrated=False):
    alpha = rng.normal(0.0, 0.7, (n_subjects, S, S - 1))
    beta = rng.normal(0.0, 0.4, (S, S - 1, p))
    mu = rng.normal(0.0, 0.5, (S, S - 1))
    sigma = rng.uniform(0.3, 1.2, (S, S - 1))
    pi = rng.dirichlet(np.ones(S) * (8.0 if concentrated else 1.0))
    if concentrated:
        P = np.full((S, M), 0.02 / max(M - 1, 1))
        for s in range(S):
            P[s, min(s, M - 1)] = 0.98
        P = P / P.sum(axis=1, keepdims=True)
    else:
        P = rng.dirichlet(np.ones(M), size=S)
    return HmmParams(alpha=alpha, beta=beta, mu=mu, sigma=sigma, pi=pi, P=P)


def random_markov_params(n_subjects, M, p, rng):
    alpha = rng.normal(0.0, 0.7, (n_subjects, M, M - 1))
    beta = rng.normal(0.0, 0.4, (M, M - 1, p))
    mu = rng.normal(0.0, 0.5, (M, M - 1))
    sigma = rng.uniform(0.3, 1.2, (M, M - 1))
    pi = rng.dirichlet(np.ones(M))
    return MarkovParams(alpha=alpha, beta=beta, mu=mu, sigma=sigma, pi=pi)


def random_instance(rng, n_subjects=1, n_days=5, S=3, M=3, p=2,
                    missing_rate=0.25):
    """A random (panel, design, params) triple with random missing cells."""
    design = random_design(n_subjects, n_days, rng, p=p)
    params = random_hmm_params(n_subjects, S, M, p, rng)
    codes = rng.integers(1, M + 1, size=(n_subjects, n_days))
    mask = rng.random((n_subjects, n_days)) < missing_rate
    panel = ObservationPanel(codes=np.where(mask, 0, codes), mask=mask,
                             m_levels=M)
    return panel, design, params


def enumerate_paths(panel, design, params, subject=0):
    """All hidden paths for one subject with their joint probabilities
    p(h, y_obs); the exhaustive oracle for likelihood, decoding, FFBS,
    and smoothing tests."""
    T = panel.n_days
    S = params.n_states
    Q = transition_matrices(params, design)
    paths = []
    probs = []
    for h in itertools.product(range(1, S + 1), repeat=T):
        prob = params.pi[h[0] - 1]
        for t in range(T - 1):
            prob *= Q[subject, t, h[t] - 1, h[t + 1] - 1]
        for t in range(T):
            if not panel.mask[subject, t]:
                prob *= params.P[h[t] - 1, panel.codes[subject, t] - 1]
        paths.append(h)
        probs.append(prob)
    return paths, np.array(probs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
