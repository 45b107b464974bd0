"""Reduction of forcing inference to an exact conjugate Bayesian linear model.

Each observation is a linear functional of the solution, z_i = <h_i, u> + noise.
Solving one adjoint system per observation functional, L* v_i = h_i, turns the
same reading into a functional of the forcing, <v_i, f>, so with the forcing
expanded in M basis features the readings follow the linear model

    z = Phi q + eps,      Phi[i, m] = <v_i, phi_m>,   eps ~ N(0, sigma^2 I).

Maximum likelihood:   q_hat = (Phi^T Phi)^{-1} Phi^T z,
                      cov   = sigma^2 (Phi^T Phi)^{-1}.

Conjugate posterior with prior q ~ N(mu0, S0):

    S_n  = (sigma^{-2} Phi^T Phi + S0^{-1})^{-1}
    mu_n = S_n (sigma^{-2} Phi^T z + S0^{-1} mu0)

All solves go through Cholesky factorizations of the precision, never an
explicit inverse; factorizations retry with escalating diagonal jitter
(1e-10 up to 1e-6 of the diagonal scale) before failing.
"""

from __future__ import annotations

import itertools
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import MisspecificationWarning, NumericalError
from .features import FeatureBasis, _cell_blocks, forcing_from_weights
from .fields import Field, Grid, GridMismatchError

__all__ = [
    "ObservationSet",
    "PhiMatrix",
    "PosteriorQ",
    "assemble_phi",
    "ml_estimate",
    "posterior_q",
    "posterior_forcing",
    "sample_posterior_forcing",
    "predictive_mse",
    "predictive_nll",
    "nll_score",
    "grid_scan",
    "run_pipeline",
    "PipelineResult",
    "PIPELINE_STAGES",
    "posterior_to_json",
    "posterior_from_json",
]

SIGMA_MIN = 1e-6


@dataclass(frozen=True)
class ObservationSet:
    """Observation functionals, their noisy readings, and the noise level."""

    windows: tuple[Field, ...]
    z: np.ndarray
    sigma: float

    def __post_init__(self):
        windows = tuple(self.windows)
        if len(windows) == 0:
            raise ValueError("need at least one observation")
        grid = windows[0].grid
        for w in windows:
            if w.grid != grid:
                raise GridMismatchError("observation windows live on different grids")
        z = np.array(self.z, dtype=float).reshape(-1)
        if z.size != len(windows):
            raise ValueError(f"{len(windows)} windows but {z.size} readings")
        if not np.isfinite(z).all():
            raise ValueError("readings must be finite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("noise level sigma must be positive")
        z.setflags(write=False)
        object.__setattr__(self, "windows", windows)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return len(self.windows)

    @property
    def grid(self) -> Grid:
        return self.windows[0].grid


@dataclass(frozen=True)
class PhiMatrix:
    """Design matrix of adjoint-feature projections plus provenance."""

    entries: np.ndarray
    basis_seed: int | None = None
    solver_id: str = ""

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float, order="C")
        if entries.ndim != 2:
            raise ValueError("entries must be a 2-D (n, M) array")
        if not np.isfinite(entries).all():
            raise ValueError("design matrix entries must be finite")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class PosteriorQ:
    """Gaussian posterior over basis weights.

    `chol` is the lower Cholesky factor of the covariance, used for sampling
    and pointwise variance evaluation.
    """

    mean: np.ndarray
    cov: np.ndarray
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    chol: np.ndarray = dataclass_field(init=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float, order="C")
        m = mean.size
        if cov.shape != (m, m):
            raise ValueError("covariance shape does not match mean")
        scale = np.abs(cov).max()
        if scale > 0 and np.abs(cov - cov.T).max() > 1e-10 * scale:
            raise NumericalError("posterior covariance is not symmetric")
        cov = 0.5 * (cov + cov.T)
        chol = _chol_with_jitter(cov, what="posterior covariance")
        prior_mean = np.array(self.prior_mean, dtype=float).reshape(-1)
        prior_cov = np.array(self.prior_cov, dtype=float, order="C")
        for arr in (mean, cov, chol, prior_mean, prior_cov):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "prior_mean", prior_mean)
        object.__setattr__(self, "prior_cov", prior_cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def _chol_with_jitter(mat: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, retrying with diagonal jitter scaled to the
    matrix before giving up."""
    scale = float(np.abs(np.diag(mat)).max())
    if scale == 0.0:
        scale = 1.0
    eye = np.eye(mat.shape[0])
    for jitter in (0.0, 1e-10, 1e-8, 1e-6):
        try:
            return np.linalg.cholesky(mat + (jitter * scale) * eye)
        except np.linalg.LinAlgError:
            continue
    eigs = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    cond = float(eigs.max() / eigs.min()) if eigs.min() != 0 else math.inf
    raise NumericalError(
        f"Cholesky factorization of the {what} failed even with jitter "
        f"1e-6; eigenvalue-based condition estimate {cond:.3e}"
    )


# ---------------------------------------------------------------------------
# design matrix


def _adjoint_rows(adjoints) -> tuple[np.ndarray, Grid]:
    adjoints = list(adjoints)
    if not adjoints:
        raise ValueError("need at least one adjoint solution")
    grid = adjoints[0].grid
    rows = np.empty((len(adjoints), grid.num_cells))
    for i, v in enumerate(adjoints):
        if v.grid != grid:
            raise GridMismatchError("adjoint solutions live on different grids")
        rows[i] = v.values_flat  # masked cells already hold 0
    return rows, grid


def _fill_phi(entries, rows, basis, grid, jobs=None):
    """Fill entries[:, block] per feature block; blocks are independent, so a
    thread pool writes disjoint columns and the result is identical to the
    serial fill."""
    blocks = list(_cell_blocks_transposed(basis, grid))
    if jobs is not None and jobs > 1:
        with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
            list(pool.map(lambda sb: _phi_block(entries, rows, *sb), blocks))
    else:
        for sl, bm in blocks:
            _phi_block(entries, rows, sl, bm)
    entries *= grid.cell_volume


def _cell_blocks_transposed(basis, grid, max_block_features: int = 256):
    """Yield (feature slice, feature-block matrix over all cells)."""
    centers = grid.centers()
    m = basis.size
    step = max(1, min(m, max_block_features))
    from .features import _eval_at

    for start in range(0, m, step):
        stop = min(start + step, m)
        sub = FeatureBasis(
            basis.frequencies[start:stop], basis.phases[start:stop], basis.kernel
        )
        yield slice(start, stop), _eval_at(sub, centers)


def _phi_block(entries, rows, sl, block_matrix):
    entries[:, sl] = rows @ block_matrix.T


def assemble_phi(adjoints, basis: FeatureBasis, *, grid: Grid | None = None,
                 jobs: int | None = None, solver_id: str = "") -> PhiMatrix:
    """Design matrix Phi[i, m] = <v_i, phi_m> over the adjoint bank's grid.

    Passing `grid` asserts the bank lives on that grid; a mismatch raises
    GridMismatchError before any work is done.
    """
    rows, bank_grid = _adjoint_rows(adjoints)
    if grid is not None and bank_grid != grid:
        raise GridMismatchError("adjoint bank does not live on the expected grid")
    if basis.dim != bank_grid.ndim:
        raise GridMismatchError("basis dimension does not match the grid")
    entries = np.empty((rows.shape[0], basis.size))
    _fill_phi(entries, rows, basis, bank_grid, jobs=jobs)
    return PhiMatrix(entries, basis_seed=basis.seed, solver_id=solver_id)


def _phi_entries(phi) -> np.ndarray:
    if isinstance(phi, PhiMatrix):
        return phi.entries
    arr = np.asarray(phi, dtype=float)
    if arr.ndim != 2:
        raise ValueError("design matrix must be 2-D")
    return arr


# ---------------------------------------------------------------------------
# estimators


def ml_estimate(phi, z, sigma: float | None = None, ridge: float = 0.0):
    """Maximum-likelihood weights and their covariance.

    Requires at least as many observations as features and a squared
    condition number below 1e12; otherwise raises NumericalError and points
    at the Bayesian route.  `ridge` adds an optional Tikhonov term to the
    normal equations (default 0, no regularization).  When `sigma` is not
    given, the noise variance is estimated from the residuals (zero when
    n == M leaves no degrees of freedom).
    """
    design = _phi_entries(phi)
    z = np.asarray(z, dtype=float).reshape(-1)
    n, m = design.shape
    if z.size != n:
        raise ValueError("reading count does not match design matrix")
    if n < m:
        raise NumericalError(
            f"need n >= M for maximum likelihood (got n={n}, M={m}); "
            "use posterior_q instead"
        )
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if ridge == 0.0:
        u, s, vt = np.linalg.svd(design, full_matrices=False)
        if s[-1] == 0.0 or (s[0] / s[-1]) ** 2 >= 1e12:
            raise NumericalError(
                "design matrix is rank deficient or too ill-conditioned for "
                "maximum likelihood; use the Bayesian route (posterior_q)"
            )
        qhat = vt.T @ ((u.T @ z) / s)
        inv_gram = (vt.T * s**-2.0) @ vt
    else:
        gram = design.T @ design + ridge * np.eye(m)
        chol = _chol_with_jitter(gram, what="regularized normal equations")
        qhat = cho_solve((chol, True), design.T @ z)
        inv_gram = cho_solve((chol, True), np.eye(m))
    if sigma is None:
        resid = z - design @ qhat
        sigma2 = float(resid @ resid) / (n - m) if n > m else 0.0
    else:
        sigma2 = float(sigma) ** 2
    cov = sigma2 * 0.5 * (inv_gram + inv_gram.T)
    return qhat, cov


def _default_prior(m: int):
    return np.zeros(m), np.eye(m)


def posterior_q(phi, z, sigma: float, prior=None) -> PosteriorQ:
    """Exact conjugate posterior over weights; prior defaults to N(0, I)."""
    design = _phi_entries(phi)
    z = np.asarray(z, dtype=float).reshape(-1)
    n, m = design.shape
    if z.size != n:
        raise ValueError("reading count does not match design matrix")
    if not (np.isfinite(sigma) and sigma > 0):
        raise ValueError("sigma must be positive")
    gram = design.T @ design
    proj = design.T @ z
    return _posterior_from_normal_eq(design, gram, proj, z, float(sigma), prior)


def _posterior_from_normal_eq(design, gram, proj, z, sigma, prior) -> PosteriorQ:
    m = gram.shape[0]
    if prior is None:
        prior_mean, prior_cov = _default_prior(m)
        prior_prec = np.eye(m)
        prec_mean = np.zeros(m)
    else:
        prior_mean = np.asarray(prior[0], dtype=float).reshape(-1)
        prior_cov = np.asarray(prior[1], dtype=float)
        if prior_mean.size != m or prior_cov.shape != (m, m):
            raise ValueError("prior shapes do not match the feature count")
        pf = cho_factor(prior_cov, lower=True)
        prior_prec = cho_solve(pf, np.eye(m))
        prec_mean = cho_solve(pf, prior_mean)
    noise_prec = 1.0 / sigma**2
    precision = noise_prec * gram + prior_prec
    chol = _chol_with_jitter(0.5 * (precision + precision.T), what="posterior precision")
    mean = cho_solve((chol, True), noise_prec * proj + prec_mean)
    cov = cho_solve((chol, True), np.eye(m))
    post = PosteriorQ(mean, 0.5 * (cov + cov.T), prior_mean, prior_cov)
    n = design.shape[0]
    if m < n / 2:
        resid = z - design @ mean
        if np.linalg.norm(resid) / sigma > 3.0 * math.sqrt(n):
            warnings.warn(
                f"standardized residual norm {np.linalg.norm(resid) / sigma:.1f} "
                f"exceeds 3*sqrt(n)={3 * math.sqrt(n):.1f} with M={m} < n/2: "
                "the basis is too small for the data, increase the feature count",
                MisspecificationWarning,
                stacklevel=3,
            )
    return post


# ---------------------------------------------------------------------------
# pushing the posterior back to function space


def posterior_forcing(post: PosteriorQ, basis: FeatureBasis, grid: Grid):
    """Posterior mean field and pointwise variance field of the forcing."""
    if basis.size != post.dim:
        raise ValueError("posterior dimension does not match basis")
    mean = forcing_from_weights(basis, post.mean, grid)
    var = np.empty(grid.num_cells)
    for sl, block in _cell_blocks(basis, grid):
        # pointwise variance phi(x)^T S phi(x) = |chol^T phi(x)|^2
        w = post.chol.T @ block
        var[sl] = np.einsum("ij,ij->j", w, w)
    return mean, Field(grid, np.maximum(var, 0.0))


def sample_posterior_forcing(post: PosteriorQ, basis: FeatureBasis, grid: Grid,
                             count: int, seed: int):
    """Deterministic (per seed) list of posterior forcing draws."""
    weights = _posterior_weight_draws(post, count, seed)
    return [forcing_from_weights(basis, w, grid) for w in weights]


def _posterior_weight_draws(post: PosteriorQ, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(int(seed))
    eta = rng.standard_normal((int(count), post.dim))
    return post.mean + eta @ post.chol.T


def window_matrix(windows) -> np.ndarray:
    """Rows apply observation windows to a flat field by dot product."""
    grid = windows[0].grid
    rows = np.stack([w.values_flat for w in windows])
    return rows * grid.cell_volume


def _predictive_readings(post, basis, system, windows, samples, seed) -> np.ndarray:
    """(samples, n) matrix of readings from posterior forcing draws pushed
    through the forward model."""
    wm = window_matrix(windows)
    draws = _posterior_weight_draws(post, samples, seed)
    out = np.empty((draws.shape[0], wm.shape[0]))
    for s, w in enumerate(draws):
        forcing = forcing_from_weights(basis, w, system.grid)
        solution = system.forward(forcing)
        out[s] = wm @ solution.values_flat
    return out


def predictive_mse(post: PosteriorQ, basis: FeatureBasis, system, heldout: ObservationSet,
                   samples: int = 100, seed: int = 0) -> float:
    """Monte Carlo posterior predictive mean squared error against readings."""
    if samples < 1:
        raise ValueError("need at least one sample")
    readings = _predictive_readings(post, basis, system, heldout.windows, samples, seed)
    return float(np.mean((readings - heldout.z[None, :]) ** 2))


def predictive_nll(post: PosteriorQ, basis: FeatureBasis, system, data: ObservationSet,
                   samples: int = 100, seed: int = 0) -> float:
    """Negative log likelihood of readings under the Gaussian fit to the
    posterior predictive (Monte Carlo moments plus observation noise).

    The noise floor SIGMA_MIN keeps the score finite as sigma -> 0.
    """
    readings = _predictive_readings(post, basis, system, data.windows, samples, seed)
    mean = readings.mean(axis=0)
    spread = readings.var(axis=0, ddof=1) if readings.shape[0] > 1 else np.zeros_like(mean)
    sigma = max(float(data.sigma), SIGMA_MIN)
    var = spread + sigma**2
    return float(np.sum(0.5 * np.log(2.0 * np.pi * var) + (data.z - mean) ** 2 / (2.0 * var)))


# ---------------------------------------------------------------------------
# hyperparameter scoring


def nll_score(theta: dict, data: ObservationSet, make_system, features: int,
              basis_seed: int, samples: int = 100, seed: int = 0) -> float:
    """Score hyperparameters `theta` (must contain `lengthscale` and
    `variance`; extra keys go to `make_system`) by rebuilding the basis and
    adjoint bank and evaluating the posterior predictive NLL on `data`."""
    from .features import KernelParams

    kernel = KernelParams(float(theta["lengthscale"]), float(theta["variance"]))
    system = make_system(theta)
    basis = FeatureBasis.sample(features, system.grid.ndim, kernel, basis_seed)
    adjoints = [system.adjoint(w) for w in data.windows]
    phi = assemble_phi(adjoints, basis, solver_id=getattr(system, "name", ""))
    post = posterior_q(phi, data.z, max(data.sigma, SIGMA_MIN))
    return predictive_nll(post, basis, system, data, samples=samples, seed=seed)


def grid_scan(bounds: dict, steps, score) -> list:
    """Exhaustive lattice scan.

    `bounds` maps parameter name to (lo, hi); `steps` is an int or a
    per-name dict of lattice sizes; `score` maps a theta dict to a float.
    Returns [(theta, score)] sorted ascending by score, ties broken by the
    lexicographic order of the theta values in `bounds` key order.
    """
    names = list(bounds)
    if isinstance(steps, int):
        steps = {k: steps for k in names}
    axes = []
    for k in names:
        lo, hi = bounds[k]
        cnt = int(steps[k])
        if cnt < 1:
            raise ValueError("lattice needs at least one point per axis")
        axes.append(np.linspace(lo, hi, cnt) if cnt > 1 else np.array([float(lo)]))
    results = []
    for combo in itertools.product(*axes):
        theta = {k: float(v) for k, v in zip(names, combo)}
        results.append((theta, float(score(theta))))
    results.sort(key=lambda item: (item[1],) + tuple(item[0][k] for k in names))
    return results


# ---------------------------------------------------------------------------
# the full adjoint pipeline with stage timings

PIPELINE_STAGES = (
    "adjoint_solves",
    "basis_eval",
    "phi_assembly",
    "gram",
    "posterior_solve",
)


@dataclass
class PipelineResult:
    posterior: PosteriorQ
    phi: PhiMatrix
    timings: dict


def run_pipeline(system, observations: ObservationSet, basis: FeatureBasis,
                 prior=None, jobs: int | None = None) -> PipelineResult:
    """Adjoint solves, feature evaluation, projection, and the posterior
    solve, with one wall-clock entry per stage (monotonic clock)."""
    timings = {}
    t0 = time.perf_counter()
    if jobs is not None and jobs > 1:
        with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
            adjoints = list(pool.map(system.adjoint, observations.windows))
    else:
        adjoints = [system.adjoint(w) for w in observations.windows]
    timings["adjoint_solves"] = time.perf_counter() - t0

    rows, grid = _adjoint_rows(adjoints)
    if basis.dim != grid.ndim:
        raise GridMismatchError("basis dimension does not match the grid")
    entries = np.empty((rows.shape[0], basis.size))
    tb0 = time.perf_counter()
    blocks = list(_cell_blocks_transposed(basis, grid))
    timings["basis_eval"] = time.perf_counter() - tb0
    tp0 = time.perf_counter()
    if jobs is not None and jobs > 1:
        with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
            list(pool.map(lambda sb: _phi_block(entries, rows, *sb), blocks))
    else:
        for sl, block in blocks:
            _phi_block(entries, rows, sl, block)
    entries *= grid.cell_volume
    timings["phi_assembly"] = time.perf_counter() - tp0

    tg0 = time.perf_counter()
    gram = entries.T @ entries
    timings["gram"] = time.perf_counter() - tg0

    ts0 = time.perf_counter()
    proj = entries.T @ observations.z
    post = _posterior_from_normal_eq(
        entries, gram, proj, observations.z, float(observations.sigma), prior
    )
    timings["posterior_solve"] = time.perf_counter() - ts0

    phi = PhiMatrix(entries, basis_seed=basis.seed,
                    solver_id=getattr(system, "name", ""))
    return PipelineResult(post, phi, timings)


def posterior_to_json(post: PosteriorQ, *, basis_seed=None,
                      config_hash: str = "") -> str:
    """Serialize the weight posterior: mean, lower Cholesky factor of the
    covariance, the prior, and provenance (basis seed and config hash)."""
    payload = {
        "mean": post.mean.tolist(),
        "chol": post.chol.tolist(),
        "prior_mean": post.prior_mean.tolist(),
        "prior_cov": post.prior_cov.tolist(),
        "basis_seed": basis_seed,
        "config_hash": config_hash,
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def posterior_from_json(text: str) -> tuple[PosteriorQ, dict]:
    """Inverse of posterior_to_json.

    The covariance is rebuilt as chol @ chol.T, so the stored factor is the
    source of truth.  Returns the posterior plus the stored provenance
    ("basis_seed", "config_hash").
    """
    payload = json.loads(text)
    chol = np.array(payload["chol"], dtype=float)
    post = PosteriorQ(
        mean=np.array(payload["mean"], dtype=float),
        cov=chol @ chol.T,
        prior_mean=np.array(payload["prior_mean"], dtype=float),
        prior_cov=np.array(payload["prior_cov"], dtype=float),
    )
    meta = {"basis_seed": payload.get("basis_seed"),
            "config_hash": payload.get("config_hash", "")}
    return post, meta
