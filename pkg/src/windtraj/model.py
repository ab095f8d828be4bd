"""
Bayesian hierarchical Gaussian model for cube-root wind power trajectories.

For every forecast case the cube root of the production trajectory is
modelled as

    y ~ N_T(X beta, K^-1),    X = [I_T  Diag(x_w)  Diag(x_w^3)],

with beta | K0, n0 ~ N(0, [Diag(n0) (x) K0]^-1), K ~ W_G(3, I_T),
K0 ~ W_G0(3, I_T) and n0_i ~ Gamma(1, 0.5). Posterior draws are obtained by
Gibbs sampling and turned into predictive trajectories on the power scale.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from .errors import DataError, NumericalError
from .gwishart import (
    Graph,
    GWishartParams,
    log_det,
    pack_band,
    posterior_update,
    sample_gwishart,
    unpack_band,
)
from .ingest import TrainingWindow

logger = logging.getLogger(__name__)

DEFAULT_POWERS = (0, 1, 3)
CHECKPOINT_VERSION = 1
ENSEMBLE_COLUMNS = ["trajectory_id", "lead_h", "power_mw"]


class ModelVariant(Enum):
    """The three model configurations compared in the experiments."""

    FULL = "full"  # AR(1) errors, K0 = K
    IND_ERRORS = "ind_errors"  # independent errors, AR(1) coefficients
    FULLY_IND = "fully_ind"  # independent errors and coefficients

    @property
    def label(self) -> str:
        return {"full": "Full model", "ind_errors": "Ind Errors", "fully_ind": "Fully Ind"}[
            self.value
        ]


@dataclass(frozen=True)
class ModelConfig:
    """
    Settings of one Gibbs fit.

    Parameters:
    -----------
    T : int
        Trajectory length
    graph_K : Graph
        Conditional-independence graph of the error precision K
    graph_K0 : Graph
        Graph of the coefficient precision K0
    tie_K0_to_K : bool
        Use K0 = K (full model) instead of a separately updated K0
    n_gibbs, n_burn : int
        Total iterations and burn-in
    m_pred : int
        Number of predictive trajectories
    seed : int
        Seed used when no random stream is passed explicitly
    powers : tuple of int
        Covariate powers forming the coefficient blocks
    fix_n0 : bool
        Keep the inflation factors at ``n0_init`` instead of sampling them
    """

    T: int
    graph_K: Graph
    graph_K0: Graph
    tie_K0_to_K: bool = True
    n_gibbs: int = 3000
    n_burn: int = 1000
    m_pred: int = 999
    seed: int = 0
    powers: Tuple[int, ...] = DEFAULT_POWERS
    fix_n0: bool = False
    n0_init: Optional[Tuple[float, ...]] = None
    log_every: int = 500

    def __post_init__(self):
        if self.graph_K.T != self.T or self.graph_K0.T != self.T:
            raise ValueError("Graphs must have dimension T")
        if not self.n_gibbs > self.n_burn >= 0:
            raise ValueError(
                f"Need n_gibbs > n_burn >= 0, got n_gibbs={self.n_gibbs}, n_burn={self.n_burn}"
            )
        if self.m_pred < 2:
            raise ValueError(f"m_pred must be at least 2, got {self.m_pred}")
        if len(self.powers) < 1 or len(set(self.powers)) != len(self.powers):
            raise ValueError(f"Covariate powers must be distinct, got {self.powers}")
        object.__setattr__(self, "powers", tuple(int(p) for p in self.powers))
        n0 = self.n0_init if self.n0_init is not None else (1.0,) * len(self.powers)
        if len(n0) != len(self.powers) or min(n0) <= 0:
            raise ValueError(f"n0_init must hold {len(self.powers)} positive values")
        object.__setattr__(self, "n0_init", tuple(float(v) for v in n0))
        if self.tie_K0_to_K and self.graph_K0 != self.graph_K:
            raise ValueError("A tied coefficient precision must share the error graph")

    @classmethod
    def for_variant(
        cls,
        variant: Union[str, ModelVariant],
        T: int,
        band: int = 1,
        band_K0: Optional[int] = None,
        **kwargs: Any,
    ) -> "ModelConfig":
        """
        Build the configuration of one of the three named model variants.

        ``band`` is the AR order of the dependent graphs; ``band_K0`` sets the
        coefficient graph of the Ind Errors variant separately.
        """
        if isinstance(variant, str):
            variant = ModelVariant(variant.lower())
        dependent = Graph(T, band)
        independent = Graph.independence(T)
        if variant == ModelVariant.FULL:
            return cls(T, dependent, dependent, tie_K0_to_K=True, **kwargs)
        elif variant == ModelVariant.IND_ERRORS:
            coef_graph = Graph(T, band if band_K0 is None else band_K0)
            return cls(T, independent, coef_graph, tie_K0_to_K=False, **kwargs)
        elif variant == ModelVariant.FULLY_IND:
            return cls(T, independent, independent, tie_K0_to_K=False, **kwargs)
        raise ValueError(f"Unknown model variant: {variant}")

    @property
    def q(self) -> int:
        return len(self.powers)

    @property
    def n_keep(self) -> int:
        return self.n_gibbs - self.n_burn


@dataclass(frozen=True, eq=False)
class PosteriorDraw:
    """One joint sample (beta, K, n0) of the Gibbs chain."""

    beta: np.ndarray
    K: np.ndarray
    n0: np.ndarray

    def blocks(self) -> np.ndarray:
        """Coefficients as a (q, T) array, one row per covariate power."""
        q = self.n0.size
        return self.beta.reshape(q, -1)


@dataclass(eq=False)
class PredictiveEnsemble:
    """m sampled power trajectories (MW) for one forecast initialization."""

    init_time: Optional[pd.Timestamp]
    trajectories: np.ndarray
    postproc: str = "none"
    _sorted: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        traj = np.atleast_2d(np.asarray(self.trajectories, dtype=float))
        if np.any(traj < 0) or np.any(~np.isfinite(traj)):
            raise ValueError("Predictive trajectories must be finite and non-negative")
        self.trajectories = traj

    @property
    def m(self) -> int:
        return self.trajectories.shape[0]

    @property
    def T(self) -> int:
        return self.trajectories.shape[1]

    def sorted_margins(self) -> np.ndarray:
        """Ensemble sorted along the member axis, shape (m, T)."""
        if self._sorted is None:
            self._sorted = np.sort(self.trajectories, axis=0)
        return self._sorted

    def margin(self, t: int) -> np.ndarray:
        return self.sorted_margins()[:, t]

    def to_csv(self, path: Union[str, Path]) -> Path:
        """Write as ``trajectory_id,lead_h,power_mw`` in long format."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        ids, leads = np.meshgrid(np.arange(self.m), np.arange(1, self.T + 1), indexing="ij")
        frame = pd.DataFrame(
            {
                "trajectory_id": ids.ravel(),
                "lead_h": leads.ravel(),
                "power_mw": self.trajectories.ravel(),
            }
        )
        with open(path, "w", newline="") as handle:
            if self.postproc != "none":
                handle.write(f"# postproc={self.postproc}\n")
            frame.to_csv(handle, index=False, float_format="%.10g")
        return path

    @classmethod
    def from_csv(
        cls, path: Union[str, Path], init_time: Optional[pd.Timestamp] = None
    ) -> "PredictiveEnsemble":
        path = Path(path)
        postproc = "none"
        with open(path) as handle:
            first = handle.readline().strip()
        if first.startswith("#") and "postproc=" in first:
            postproc = first.split("postproc=", 1)[1].strip()
        frame = pd.read_csv(path, comment="#")
        if list(frame.columns) != ENSEMBLE_COLUMNS:
            raise DataError(f"{path}: expected header {','.join(ENSEMBLE_COLUMNS)}")
        table = frame.pivot(index="trajectory_id", columns="lead_h", values="power_mw")
        return cls(init_time, table.to_numpy(dtype=float), postproc=postproc)


def build_design(x_w: np.ndarray, powers: Sequence[int] = DEFAULT_POWERS) -> np.ndarray:
    """
    Joint T x qT covariate matrix [Diag(x_w^p) for p in powers].

    With the default powers (0, 1, 3) this is [I_T  Diag(x_w)  Diag(x_w^3)].
    """
    x_w = np.asarray(x_w, dtype=float)
    if np.any(x_w < 0):
        raise ValueError("Wind-speed covariates must be non-negative")
    return np.hstack([np.diag(x_w ** p) for p in powers])


def covariate_blocks(x: np.ndarray, powers: Sequence[int]) -> np.ndarray:
    """Diagonals of the design blocks, shape (q, ...) for covariates of shape (...)."""
    x = np.asarray(x, dtype=float)
    return np.stack([np.ones_like(x) if p == 0 else x ** p for p in powers])


def transform(y: np.ndarray) -> np.ndarray:
    """Cube-root transform of production (MW)."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("Production must be non-negative for the cube-root transform")
    return np.cbrt(y)


def inverse_transform(z: np.ndarray) -> np.ndarray:
    """Back to the power scale, clamping negative cube-root values at zero."""
    return np.maximum(z, 0.0) ** 3


@dataclass(frozen=True, eq=False)
class SufficientStatistics:
    """
    Cross-products of the training window that the beta conditional depends on.

    ``gram[a, b] = sum_n c_a^n (c_b^n)^T`` and ``cross[a] = sum_n c_a^n (y_n)^T``
    for the covariate block diagonals ``c_a^n``; both are invariant under
    reordering of the cases.
    """

    C: np.ndarray  # (q, N, T)
    Y: np.ndarray  # (N, T) on the cube-root scale
    gram: np.ndarray  # (q, q, T, T)
    cross: np.ndarray  # (q, T, T)

    @classmethod
    def from_window(
        cls, window: TrainingWindow, powers: Sequence[int] = DEFAULT_POWERS
    ) -> "SufficientStatistics":
        X, Y = window.X, window.Y
        if np.any(~np.isfinite(X)) or np.any(~np.isfinite(Y)):
            raise DataError("Training window contains non-finite values")
        Yt = transform(Y)
        C = covariate_blocks(X, powers)
        gram = np.einsum("ant,bns->abts", C, C)
        cross = np.einsum("ant,ns->ats", C, Yt)
        return cls(C, Yt, gram, cross)

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    def residual_crossproduct(self, beta_blocks: np.ndarray) -> np.ndarray:
        """sum_n (y_n - X_n beta)(y_n - X_n beta)^T."""
        resid = self.Y - np.einsum("ant,at->nt", self.C, beta_blocks)
        return resid.T @ resid


def beta_conditional(
    stats: SufficientStatistics, K: np.ndarray, K_eff: np.ndarray, n0: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Precision and mean (K_tilde, beta_tilde) of beta given K, K0 and n0.

    K_tilde = Diag(n0) (x) K_eff + sum_n X_n^T K X_n,
    beta_tilde = K_tilde^-1 sum_n X_n^T K y_n.
    """
    q, T = stats.q, stats.T
    K_tilde = np.empty((q * T, q * T))
    for a in range(q):
        for b in range(q):
            block = stats.gram[a, b] * K
            if a == b:
                block = block + n0[a] * K_eff
            K_tilde[a * T : (a + 1) * T, b * T : (b + 1) * T] = block
    K_tilde = 0.5 * (K_tilde + K_tilde.T)
    h = np.concatenate([(stats.cross[a] * K).sum(axis=1) for a in range(q)])
    factor = _cholesky(K_tilde)
    beta_tilde = linalg.cho_solve((factor, True), h)
    return K_tilde, beta_tilde


def _cholesky(A: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        eigvals = np.linalg.eigvalsh(A)
        raise NumericalError(
            "Coefficient precision is not positive definite",
            {
                "min_eigenvalue": float(eigvals.min()),
                "max_eigenvalue": float(eigvals.max()),
                "condition_number": float(abs(eigvals.max() / eigvals.min()))
                if eigvals.min() != 0
                else float("inf"),
            },
        ) from exc


def sample_mvn_precision(
    mean: np.ndarray, precision: np.ndarray, rng: np.random.Generator, size: Optional[int] = None
) -> np.ndarray:
    """Draw from N(mean, precision^-1) through the Cholesky factor of the precision."""
    L = _cholesky(precision)
    d = mean.shape[-1]
    z = rng.standard_normal(d if size is None else (d, size))
    draws = linalg.solve_triangular(L.T, z, lower=False)
    return mean + (draws if size is None else draws.T)


def gibbs_fit(
    window: TrainingWindow,
    config: ModelConfig,
    rng: Optional[np.random.Generator] = None,
) -> List[PosteriorDraw]:
    """
    Sample the joint posterior of (beta, K, n0) by Gibbs sampling.

    Each iteration draws beta | K, n0 from its Gaussian conditional, K from
    its G-Wishart conditional (and K0 from its own when untied), and the
    inflation factors from their Gamma conditionals.

    Parameters:
    -----------
    window : TrainingWindow
        N >= 1 observed cases (targets are ignored)
    config : ModelConfig
        Model variant and chain settings
    rng : numpy.random.Generator, optional
        Random stream (default: seeded from ``config.seed``)

    Returns:
    --------
    list of PosteriorDraw
        The ``n_gibbs - n_burn`` post burn-in draws
    """
    if window.T != config.T:
        raise ValueError(f"Window has T={window.T}, config expects T={config.T}")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    stats = SufficientStatistics.from_window(window, config.powers)
    N, T, q = stats.N, config.T, config.q
    prior_K = GWishartParams.prior(config.graph_K)
    prior_K0 = GWishartParams.prior(config.graph_K0)
    n0_shape = 0.5 * (T + 2)

    K = np.eye(T)
    K0 = np.eye(T)
    n0 = np.array(config.n0_init)
    draws: List[PosteriorDraw] = []
    log_dets = []

    for it in range(config.n_gibbs):
        K_eff = K if config.tie_K0_to_K else K0

        # (a) coefficients
        K_tilde, beta_tilde = beta_conditional(stats, K, K_eff, n0)
        beta = sample_mvn_precision(beta_tilde, K_tilde, rng)
        blocks = beta.reshape(q, T)

        # (b) precisions
        S = stats.residual_crossproduct(blocks)
        S0 = sum(n0[a] * np.outer(blocks[a], blocks[a]) for a in range(q))
        if config.tie_K0_to_K:
            K = sample_gwishart(posterior_update(prior_K, N + q, S + S0), rng)
            K_eff = K
        else:
            K = sample_gwishart(posterior_update(prior_K, N, S), rng)
            K0 = sample_gwishart(posterior_update(prior_K0, q, S0), rng)
            K_eff = K0

        # (c) inflation factors
        if not config.fix_n0:
            rates = 0.5 * np.einsum("at,ts,as->a", blocks, K_eff, blocks)
            n0 = rng.gamma(n0_shape, 1.0 / np.maximum(rates, 1e-300))

        if it >= config.n_burn:
            draws.append(PosteriorDraw(beta.copy(), K.copy(), n0.copy()))
            log_dets.append(log_det(K))
        if config.log_every and (it + 1) % config.log_every == 0:
            logger.debug(
                "Gibbs iteration %d/%d: log|K| = %.3f, n0 = %s",
                it + 1,
                config.n_gibbs,
                log_det(K),
                np.array2string(n0, precision=3),
            )

    logger.info(
        "Gibbs chain finished: %d draws kept, mean log|K| = %.3f, mean n0 = %s",
        len(draws),
        float(np.mean(log_dets)),
        np.array2string(np.mean([d.n0 for d in draws], axis=0), precision=3),
    )
    return draws


def chain_summary(draws: Sequence[PosteriorDraw]) -> Dict[str, Any]:
    """Trace summaries of a retained chain for fit logs."""
    log_dets = np.array([log_det(d.K) for d in draws])
    n0 = np.vstack([d.n0 for d in draws])
    betas = np.vstack([d.beta for d in draws])
    return {
        "n_draws": len(draws),
        "log_det_K_mean": float(log_dets.mean()),
        "log_det_K_sd": float(log_dets.std()),
        "n0_mean": n0.mean(axis=0).tolist(),
        "n0_sd": n0.std(axis=0).tolist(),
        "beta_sd_max": float(betas.std(axis=0).max()),
    }


def thin_evenly(draws: Sequence[PosteriorDraw], m: int) -> List[PosteriorDraw]:
    """Pick ``m`` draws spread evenly over the chain."""
    if len(draws) < m:
        raise ValueError(f"Need at least {m} posterior draws, got {len(draws)}")
    idx = np.linspace(0, len(draws) - 1, m).round().astype(int)
    return [draws[i] for i in idx]


def predict_latent(
    draws: Sequence[PosteriorDraw],
    x_w: np.ndarray,
    powers: Sequence[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """One cube-root-scale trajectory per draw, shape (len(draws), T)."""
    C = covariate_blocks(x_w, powers)
    out = np.empty((len(draws), C.shape[1]))
    for i, draw in enumerate(draws):
        mean = np.einsum("at,at->t", C, draw.blocks())
        out[i] = sample_mvn_precision(mean, draw.K, rng)
    return out


def predict(
    draws: Sequence[PosteriorDraw],
    x_w_target: np.ndarray,
    config: ModelConfig,
    rng: Optional[np.random.Generator] = None,
    init_time: Optional[pd.Timestamp] = None,
) -> PredictiveEnsemble:
    """
    Posterior predictive trajectories on the power scale.

    For each of ``m_pred`` evenly thinned draws, a cube-root trajectory is
    sampled from N_T(X beta, K^-1) and mapped back by max(., 0)^3.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    x_w_target = np.asarray(x_w_target, dtype=float)
    if x_w_target.shape != (config.T,):
        raise ValueError(f"Target covariates have shape {x_w_target.shape}, expected ({config.T},)")
    chosen = thin_evenly(draws, config.m_pred)
    latent = predict_latent(chosen, x_w_target, config.powers, rng)
    return PredictiveEnsemble(init_time, inverse_transform(latent))


def marginal_cdf(
    ensemble: PredictiveEnsemble,
    t: int,
    y: float,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Empirical CDF of the t-th margin at y.

    Without ``rng`` this is #(members <= y) / m; with ``rng`` ties at y are
    randomized uniformly between #(members < y) / m and #(members <= y) / m.
    """
    if not 0 <= t < ensemble.T:
        raise ValueError(f"Lead index {t} out of range for T={ensemble.T}")
    margin = ensemble.margin(t)
    m = margin.size
    below = np.searchsorted(margin, y, side="left")
    at_or_below = np.searchsorted(margin, y, side="right")
    if rng is None or at_or_below == below:
        return at_or_below / m
    return (below + rng.uniform() * (at_or_below - below)) / m


def save_checkpoint(
    draws: Sequence[PosteriorDraw],
    directory: Union[str, Path],
    config: ModelConfig,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write posterior draws to ``directory``.

    The directory holds ``meta.json`` and three ``.npy`` arrays: ``beta``
    (n, qT), ``k_band`` (n, band + 1, T) with the stored diagonals of K, and
    ``n0`` (n, q). The files are byte-identical for identical draws.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    band = config.graph_K.effective_band
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "T": config.T,
        "powers": list(config.powers),
        "band_K": band,
        "band_K0": config.graph_K0.effective_band,
        "tie_K0_to_K": config.tie_K0_to_K,
        "n_draws": len(draws),
    }
    meta.update(metadata or {})
    np.save(directory / "beta.npy", np.vstack([d.beta for d in draws]))
    np.save(directory / "k_band.npy", np.stack([pack_band(d.K, band) for d in draws]))
    np.save(directory / "n0.npy", np.vstack([d.n0 for d in draws]))
    with open(directory / "meta.json", "w") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
    return directory


def load_checkpoint(directory: Union[str, Path]) -> Tuple[List[PosteriorDraw], Dict[str, Any]]:
    """Read draws written by :func:`save_checkpoint`."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise DataError(f"No checkpoint found in {directory}")
    with open(meta_path) as handle:
        meta = json.load(handle)
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(
            f"{directory}: unsupported checkpoint version {meta.get('format_version')}"
        )
    beta = np.load(directory / "beta.npy")
    k_band = np.load(directory / "k_band.npy")
    n0 = np.load(directory / "n0.npy")
    draws = [PosteriorDraw(beta[i], unpack_band(k_band[i]), n0[i]) for i in range(beta.shape[0])]
    return draws, meta
