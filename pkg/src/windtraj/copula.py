"""
Two-stage Gaussian copula post-processing of marginal trajectory forecasts.

Observations of past cases are mapped to latent Gaussian scores through
their out-of-sample marginal predictive CDFs. A G-Wishart posterior for the
latent precision is fitted to the scores, and new trajectories are obtained
by drawing a latent precision, a normalized latent Gaussian vector, and
pushing its uniform margins through the generalized inverse of each
marginal predictive distribution.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .errors import NumericalError
from .gwishart import Graph, GWishartParams, posterior_update, sample_gwishart, spd_inverse
from .model import PredictiveEnsemble, sample_mvn_precision

logger = logging.getLogger(__name__)

DEFAULT_COPULA_BAND = 1


@dataclass(frozen=True, eq=False)
class LatentScores:
    """N x T latent Gaussian scores z_tn = Phi^-1(F_tn(y_tn))."""

    Z: np.ndarray
    m: int

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if np.any(~np.isfinite(Z)):
            raise ValueError("Latent scores must be finite")
        object.__setattr__(self, "Z", Z)

    @property
    def N(self) -> int:
        return self.Z.shape[0]

    @property
    def T(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True, eq=False)
class CopulaFit:
    """Posterior W_G(3 + N, I_T + U) of the latent precision."""

    posterior: GWishartParams
    U: np.ndarray

    @property
    def T(self) -> int:
        return self.posterior.T


def probit_scores(pit: np.ndarray, m: int) -> np.ndarray:
    """Probit of PIT values clipped to [1 / (2m), 1 - 1 / (2m)]."""
    eps = 1.0 / (2.0 * m)
    return norm.ppf(np.clip(pit, eps, 1.0 - eps))


def latent_scores(
    ensembles: Sequence[PredictiveEnsemble],
    observations: np.ndarray,
    rng: Optional[np.random.Generator] = None,
) -> LatentScores:
    """
    Latent Gaussian scores of observed trajectories under their marginal forecasts.

    Parameters:
    -----------
    ensembles : sequence of PredictiveEnsemble
        Marginal predictive ensemble of each case (all with the same m)
    observations : numpy.ndarray
        Observed production, shape (N, T)
    rng : numpy.random.Generator, optional
        When given, ties between an observation and ensemble members are
        randomized as in :func:`windtraj.model.marginal_cdf`

    Returns:
    --------
    LatentScores
    """
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    if len(ensembles) != observations.shape[0]:
        raise ValueError(
            f"Got {len(ensembles)} ensembles for {observations.shape[0]} observed cases"
        )
    sizes = {e.m for e in ensembles}
    if len(sizes) != 1:
        raise ValueError(f"All ensembles must have the same size, got {sorted(sizes)}")
    m = sizes.pop()

    pit = np.empty_like(observations)
    for n, (ensemble, y) in enumerate(zip(ensembles, observations)):
        if ensemble.T != y.size:
            raise ValueError(f"Case {n}: ensemble has T={ensemble.T}, observation has {y.size}")
        margins = ensemble.sorted_margins()
        below = (margins < y).sum(axis=0)
        at_or_below = (margins <= y).sum(axis=0)
        if rng is None:
            pit[n] = at_or_below / m
        else:
            pit[n] = (below + rng.uniform(size=y.size) * (at_or_below - below)) / m
    return LatentScores(probit_scores(pit, m), m)


def fit_copula(scores: LatentScores, graph: Graph) -> CopulaFit:
    """Conjugate posterior of the latent precision given N latent score vectors."""
    if scores.N < 1:
        raise ValueError("Copula fit needs at least one latent observation")
    if graph.T != scores.T:
        raise ValueError(f"Graph has T={graph.T}, scores have T={scores.T}")
    U = scores.Z.T @ scores.Z
    posterior = posterior_update(GWishartParams.prior(graph), scores.N, U)
    logger.debug("Copula posterior: delta = %g on band-%d graph", posterior.delta, graph.band)
    return CopulaFit(posterior, U)


def generalized_inverse(sorted_margins: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    F_t^-1(u) on finite ensembles, one value per lead time.

    Returns the largest sorted member x_(k) with (k - 1) / m <= u, i.e.
    k = min(floor(u m) + 1, m), so that F_t(F_t^-1(u)) >= u and each member
    is selected with probability 1 / m when u is uniform.
    """
    sorted_margins = np.atleast_2d(sorted_margins)
    m, T = sorted_margins.shape
    u = np.broadcast_to(np.asarray(u, dtype=float), (T,))
    idx = np.minimum(np.floor(u * m).astype(int), m - 1)
    idx = np.maximum(idx, 0)
    return sorted_margins[idx, np.arange(T)]


def normalize_latent(z_star: np.ndarray, covariance: np.ndarray) -> np.ndarray:
    """Scale each latent component to unit marginal variance."""
    return z_star / np.sqrt(np.diag(covariance))


def resample_with_precision(
    K_hat: np.ndarray, marginals: PredictiveEnsemble, rng: np.random.Generator
) -> np.ndarray:
    """Steps 2-3 of the copula resampling for a given latent precision."""
    covariance = spd_inverse(K_hat)
    z_star = sample_mvn_precision(np.zeros(K_hat.shape[0]), K_hat, rng)
    z_hat = normalize_latent(z_star, covariance)
    return generalized_inverse(marginals.sorted_margins(), norm.cdf(z_hat))


def _draw_latent_precision(fit: CopulaFit, rng: np.random.Generator) -> np.ndarray:
    try:
        return sample_gwishart(fit.posterior, rng)
    except NumericalError as first:
        logger.warning("Latent precision draw failed (%s); resampling once", first)
        return sample_gwishart(fit.posterior, rng)


def resample_trajectory(
    fit: CopulaFit, marginals: PredictiveEnsemble, rng: np.random.Generator
) -> np.ndarray:
    """
    One re-correlated trajectory (MW).

    Draws a latent precision from the copula posterior, a latent Gaussian
    vector normalized to unit variances, and maps its uniform margins
    through the marginal predictive distributions of the target case.
    """
    if fit.T != marginals.T:
        raise ValueError(f"Copula has T={fit.T}, marginals have T={marginals.T}")
    K_hat = _draw_latent_precision(fit, rng)
    return resample_with_precision(K_hat, marginals, rng)


def copula_ensemble(
    fit: CopulaFit,
    marginals: PredictiveEnsemble,
    rng: np.random.Generator,
    m: Optional[int] = None,
) -> PredictiveEnsemble:
    """Re-correlated ensemble of ``m`` trajectories (default: the marginal ensemble size)."""
    m = marginals.m if m is None else m
    trajectories = np.vstack([resample_trajectory(fit, marginals, rng) for _ in range(m)])
    return PredictiveEnsemble(marginals.init_time, trajectories, postproc="copula")
