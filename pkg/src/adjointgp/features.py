"""Random Fourier feature basis for the exponentiated-quadratic kernel.

The kernel  k(x, y) = variance * exp(-|x - y|^2 / (2 * lengthscale^2))  is
approximated by the truncated expansion  k(x, y) ~ sum_m phi_m(x) phi_m(y)
with

    phi_m(x) = sqrt(2 * variance / M) * cos(w_m . x / lengthscale + b_m),
    w_m ~ N(0, I),   b_m ~ U[0, 2*pi),

so a weight vector q ~ N(0, I_M) turns the basis into a Gaussian-process
prior over forcing fields with the truncated covariance.

Randomness policy: features are drawn from PCG64 streams.  A basis seeded
with integer `seed` spawns one child stream per feature via
``numpy.random.SeedSequence(seed).spawn(M)``; feature m draws its frequency
vector first, then its phase, from child m.  The draw for feature m is
therefore independent of M and of every other feature, and a serialized
basis can be reproduced bit-for-bit from (seed, count, dim, kernel).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .fields import Field, Grid

__all__ = [
    "KernelParams",
    "FeatureBasis",
    "eq_kernel",
    "sample_basis",
    "eval_basis",
    "feature_vector",
    "kernel_approx",
    "forcing_from_weights",
    "sample_prior_forcing",
    "basis_to_json",
    "basis_from_json",
]


@dataclass(frozen=True)
class KernelParams:
    """Exponentiated-quadratic kernel hyperparameters (both positive)."""

    lengthscale: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be positive, got {self.variance}")


def eq_kernel(x, y, kernel: KernelParams) -> float:
    """Exact kernel value between two points of equal dimension."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != y.size:
        raise ValueError(f"point dimensions differ: {x.size} vs {y.size}")
    d2 = float(np.dot(x - y, x - y))
    return kernel.variance * np.exp(-d2 / (2.0 * kernel.lengthscale**2))


class FeatureBasis:
    """A fixed draw of random Fourier features.

    Attributes
    ----------
    frequencies : (count, dim) array
    phases : (count,) array in [0, 2*pi)
    kernel : KernelParams
    seed : int or None
        Present when the basis was drawn through :meth:`sample`.
    """

    __slots__ = ("frequencies", "phases", "kernel", "seed")

    def __init__(self, frequencies, phases, kernel: KernelParams, seed=None):
        freq = np.array(frequencies, dtype=np.float64, order="C")
        ph = np.array(phases, dtype=np.float64, order="C")
        if freq.ndim != 2:
            raise ValueError("frequencies must be a (count, dim) array")
        if ph.shape != (freq.shape[0],):
            raise ValueError("phases must have one entry per feature")
        if not (np.isfinite(freq).all() and np.isfinite(ph).all()):
            raise ValueError("basis arrays must be finite")
        if ((ph < 0) | (ph >= 2 * np.pi)).any():
            raise ValueError("phases must lie in [0, 2*pi)")
        freq.setflags(write=False)
        ph.setflags(write=False)
        object.__setattr__(self, "frequencies", freq)
        object.__setattr__(self, "phases", ph)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "seed", None if seed is None else int(seed))

    def __setattr__(self, name, value):
        raise AttributeError("FeatureBasis is immutable")

    @classmethod
    def sample(cls, count: int, dim: int, kernel: KernelParams, seed: int) -> "FeatureBasis":
        """Draw `count` features via one spawned PCG64 stream per feature."""
        count = int(count)
        dim = int(dim)
        if count < 1 or dim < 1:
            raise ValueError("count and dim must be positive")
        children = np.random.SeedSequence(int(seed)).spawn(count)
        freq = np.empty((count, dim))
        ph = np.empty(count)
        for m, child in enumerate(children):
            rng = np.random.Generator(np.random.PCG64(child))
            freq[m] = rng.standard_normal(dim)
            ph[m] = rng.uniform(0.0, 2.0 * np.pi)
        return cls(freq, ph, kernel, seed=seed)

    @property
    def size(self) -> int:
        return self.frequencies.shape[0]

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]

    @property
    def amplitude(self) -> float:
        """Common feature amplitude sqrt(2 * variance / count)."""
        return float(np.sqrt(2.0 * self.kernel.variance / self.size))


def sample_basis(count: int, dim: int, kernel: KernelParams, seed: int) -> FeatureBasis:
    """Draw a feature basis; function-call form of FeatureBasis.sample."""
    return FeatureBasis.sample(count, dim, kernel, seed)


def _eval_at(basis: FeatureBasis, points: np.ndarray) -> np.ndarray:
    """Feature matrix (count, npoints) at explicit points (npoints, dim)."""
    args = basis.frequencies @ points.T / basis.kernel.lengthscale
    args += basis.phases[:, None]
    np.cos(args, out=args)
    args *= basis.amplitude
    return args


def eval_basis(basis: FeatureBasis, grid: Grid) -> np.ndarray:
    """Dense (count, num_cells) matrix of every feature at every cell center."""
    if basis.dim != grid.ndim:
        raise ValueError(f"basis dim {basis.dim} does not match grid ndim {grid.ndim}")
    return _eval_at(basis, grid.centers())


def feature_vector(basis: FeatureBasis, x) -> np.ndarray:
    """All features evaluated at a single point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != basis.dim:
        raise ValueError("point dimension does not match basis")
    return _eval_at(basis, x)[:, 0]


def kernel_approx(basis: FeatureBasis, x, y) -> float:
    """Truncated kernel sum_m phi_m(x) phi_m(y)."""
    return float(np.dot(feature_vector(basis, x), feature_vector(basis, y)))


def _cell_blocks(basis: FeatureBasis, grid: Grid, max_block_entries: int = 1 << 23):
    """Yield (cell slice, feature matrix block) keeping blocks under a size cap."""
    centers = grid.centers()
    g = grid.num_cells
    block = max(1, min(g, max_block_entries // max(1, basis.size)))
    for start in range(0, g, block):
        stop = min(start + block, g)
        yield slice(start, stop), _eval_at(basis, centers[start:stop])


def forcing_from_weights(basis: FeatureBasis, weights, grid: Grid) -> Field:
    """Field  f(x) = sum_m weights[m] * phi_m(x)  over the grid."""
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if weights.size != basis.size:
        raise ValueError(f"expected {basis.size} weights, got {weights.size}")
    if basis.dim != grid.ndim:
        raise ValueError("basis dim does not match grid")
    vals = np.empty(grid.num_cells)
    for sl, block in _cell_blocks(basis, grid):
        vals[sl] = weights @ block
    return Field(grid, vals)


def sample_prior_forcing(basis: FeatureBasis, grid: Grid, seed: int):
    """Draw q ~ N(0, I) and return (q, induced forcing field)."""
    rng = np.random.default_rng(int(seed))
    weights = rng.standard_normal(basis.size)
    return weights, forcing_from_weights(basis, weights, grid)


def basis_to_json(basis: FeatureBasis, include_arrays: bool = True) -> str:
    """Serialize the basis.  With arrays included the JSON replays exactly;
    without them a basis sampled from `seed` reconstructs bit-for-bit."""
    obj = {
        "seed": basis.seed,
        "count": basis.size,
        "dim": basis.dim,
        "lengthscale": basis.kernel.lengthscale,
        "variance": basis.kernel.variance,
    }
    if include_arrays:
        obj["frequencies"] = basis.frequencies.tolist()
        obj["phases"] = basis.phases.tolist()
    return json.dumps(obj, sort_keys=True)


def basis_from_json(text: str) -> FeatureBasis:
    obj = json.loads(text)
    kernel = KernelParams(obj["lengthscale"], obj["variance"])
    if "frequencies" in obj:
        basis = FeatureBasis(obj["frequencies"], obj["phases"], kernel, seed=obj.get("seed"))
        if basis.size != obj["count"] or basis.dim != obj["dim"]:
            raise ValueError("array shapes disagree with declared count/dim")
        return basis
    if obj.get("seed") is None:
        raise ValueError("cannot rebuild basis: no arrays and no seed")
    return FeatureBasis.sample(obj["count"], obj["dim"], kernel, obj["seed"])
