import warnings

import numpy as np
import pytest

from postsum import gp
from postsum.core import Dataset, PosteriorDraws, load_crime
from postsum.horseshoe import sample_horseshoe
from postsum.simulations import SimSpec, generate

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def linear_draws(n=40, p=3, M=200, seed=0, noise=0.0):
    """Draws of an exactly linear regression function at random locations."""
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, p))
    B = r.standard_normal((M, p))
    a = r.standard_normal(M)
    F = a[:, None] + B @ X.T + noise * r.standard_normal((M, n))
    data = Dataset(X, F.mean(axis=0), [f"x{j + 1}" for j in range(p)])
    return data, PosteriorDraws(F, np.full(M, 0.1)), B, a


def noisy_draws(f, M=200, scale=0.05, seed=0, sigma2=0.1):
    r = np.random.default_rng(seed)
    F = f[None, :] + scale * r.standard_normal((M, f.shape[0]))
    return PosteriorDraws(F, sigma2 * np.exp(0.1 * r.standard_normal(M)))


@pytest.fixture(scope="session")
def crime():
    return load_crime()


@pytest.fixture(scope="session")
def crime_horseshoe(crime):
    return sample_horseshoe(crime, M=5000, burn_in=1000, seed=11)


@pytest.fixture(scope="session")
def interaction_run():
    """One interaction-study data set with its fitted GP posterior."""
    sim = generate(SimSpec("interaction-collinear"), seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        hyper = gp.fit_gp(sim.data, linear=False)
    post = gp.GpPosterior(sim.data, hyper).run(1000, seed=3)
    return sim, hyper, post, post.draws()


@pytest.fixture(scope="session")
def small_grid_run():
    """A 20 x 20 sigmoid grid with a GP fitted at fixed hyperparameters."""
    sim = generate(SimSpec("sigmoid-grid", n=400), seed=1)
    hyper = gp.GpHyperparameters(tau2=0.25, v=[8.0, 2.5], a=[0.0, 0.0], sigma2=0.25)
    post = gp.GpPosterior(sim.data, hyper).run(500, seed=1)
    return sim, hyper, post, post.draws()
