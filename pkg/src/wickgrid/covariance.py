"""Covariance models for centered Gaussian processes and their grid Gram matrices.

All downstream linear algebra runs in the *increment basis*: for a grid
0 = t_0 < t_1 < ... < t_N the canonical coordinates of a first-chaos element
are the coefficients of Delta X_i = X_{t_i} - X_{t_{i-1}}.  The Gram matrix

    G[i, j] = E[Delta X_{i+1} Delta X_{j+1}]

is therefore the second difference of the covariance function R(s, t).
Indicator functions 1_(0, t_m] have coefficient vector (1, ..., 1, 0, ..., 0)
with m ones, so the quadratic form of G on indicator vectors reproduces R at
the grid nodes exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ConditioningError,
    GridAlignmentError,
    ModelGridError,
    ParameterError,
)

__all__ = [
    "TimeGrid",
    "BrownianMotion",
    "FractionalBrownianMotion",
    "WeightedFbm",
    "SumModel",
    "covariance_eval",
    "build_gram",
    "GramContext",
    "sample_increments",
]

_ALIGN_TOL = 1e-9


class TimeGrid:
    """Strictly increasing time nodes t_0 = 0 < t_1 < ... < t_N."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ParameterError("grid needs at least two nodes")
        if pts[0] != 0.0:
            raise ParameterError("grid must start at t_0 = 0")
        if np.any(np.diff(pts) <= 0):
            raise ParameterError("grid nodes must be strictly increasing")
        self.points = pts
        self.n = pts.size - 1          # number of increments
        self.T = float(pts[-1])

    @classmethod
    def uniform(cls, n: int, T: float = 1.0) -> "TimeGrid":
        return cls(np.linspace(0.0, T, n + 1))

    def refine(self, k: int = 2) -> "TimeGrid":
        """Insert k-1 equally spaced nodes into every cell."""
        pts = self.points
        fine = np.concatenate(
            [np.linspace(pts[i], pts[i + 1], k, endpoint=False) for i in range(self.n)]
            + [pts[-1:]]
        )
        return TimeGrid(fine)

    def index_of(self, t: float) -> int:
        """Node index m with t_m = t, up to a tight absolute/relative tolerance."""
        d = np.abs(self.points - t)
        m = int(np.argmin(d))
        if d[m] > _ALIGN_TOL * max(1.0, abs(t)):
            raise GridAlignmentError(f"time {t!r} is not a grid node")
        return m

    def indicator(self, t: float) -> np.ndarray:
        """Increment-basis coefficients of 1_(0, t]."""
        m = self.index_of(t)
        v = np.zeros(self.n)
        v[:m] = 1.0
        return v

    def indicator_interval(self, a: float, b: float) -> np.ndarray:
        """Increment-basis coefficients of 1_(a, b]."""
        return self.indicator(b) - self.indicator(a)

    def __len__(self) -> int:
        return self.points.size

    def __repr__(self) -> str:
        return f"TimeGrid(n={self.n}, T={self.T})"


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class BrownianMotion:
    """Standard Brownian motion, R(s, t) = min(s, t)."""

    def cov(self, s: float, t: float) -> float:
        return float(min(s, t))

    def __repr__(self) -> str:
        return "BrownianMotion()"


class FractionalBrownianMotion:
    """Fractional Brownian motion with Hurst index H in (0, 1).

    R(s, t) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2; H = 1/2 reduces to
    Brownian motion.  The process is a martingale iff H = 1/2.
    """

    def __init__(self, H: float):
        if not 0.0 < H < 1.0:
            raise ParameterError(f"Hurst index must lie in (0, 1), got {H}")
        self.H = float(H)

    def cov(self, s: float, t: float) -> float:
        h2 = 2.0 * self.H
        return 0.5 * (abs(t) ** h2 + abs(s) ** h2 - abs(t - s) ** h2)

    def __repr__(self) -> str:
        return f"FractionalBrownianMotion(H={self.H})"


class WeightedFbm:
    """X with increments Delta X_i = sigma_i * Delta B^H_i on a fixed grid.

    Only H > 1/2 is admitted, and the covariance is *defined* through the
    grid quadratic form on the base-fBm Gram (there is no analytic kernel
    here); evaluation is restricted to nodes of the defining grid.
    """

    def __init__(self, H: float, sigma, grid: TimeGrid):
        if not 0.5 < H < 1.0:
            raise ParameterError("weighted model requires H in (1/2, 1)")
        sig = np.asarray(sigma, dtype=float)
        if sig.shape != (grid.n,):
            raise ParameterError("need one sigma value per grid increment")
        if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
            raise ParameterError("sigma must be positive and finite")
        self.H = float(H)
        self.sigma = sig
        self.grid = grid
        base = _gram_from_cov(FractionalBrownianMotion(H), grid)
        self._gram = sig[:, None] * base * sig[None, :]
        # prefix sums give R(t_i, t_j) as a block sum of the increment Gram
        self._prefix = np.zeros((grid.n + 1, grid.n + 1))
        self._prefix[1:, 1:] = np.cumsum(np.cumsum(self._gram, axis=0), axis=1)

    def gram(self, grid: TimeGrid) -> np.ndarray:
        if (grid.points.shape != self.grid.points.shape
                or not np.allclose(grid.points, self.grid.points, atol=_ALIGN_TOL)):
            raise GridAlignmentError("weighted model is tied to its defining grid")
        return self._gram.copy()

    def cov(self, s: float, t: float) -> float:
        i = self.grid.index_of(s)
        j = self.grid.index_of(t)
        return float(self._prefix[i, j])

    def __repr__(self) -> str:
        return f"WeightedFbm(H={self.H}, n={self.grid.n})"


class SumModel:
    """X = X1 + gamma * X2 for independent models, R = R1 + gamma^2 R2."""

    def __init__(self, model1, model2, gamma: float):
        if gamma == 0.0:
            raise ParameterError("gamma must be nonzero")
        self.model1 = model1
        self.model2 = model2
        self.gamma = float(gamma)

    def cov(self, s: float, t: float) -> float:
        return self.model1.cov(s, t) + self.gamma**2 * self.model2.cov(s, t)

    def __repr__(self) -> str:
        return f"SumModel({self.model1!r}, {self.model2!r}, gamma={self.gamma})"


def covariance_eval(model, s: float, t: float) -> float:
    """R(s, t) = E[X_s X_t] for the given model."""
    return model.cov(s, t)


def _gram_from_cov(model, grid: TimeGrid) -> np.ndarray:
    pts = grid.points
    R = np.array([[model.cov(si, tj) for tj in pts] for si in pts])
    G = R[1:, 1:] - R[1:, :-1] - R[:-1, 1:] + R[:-1, :-1]
    return 0.5 * (G + G.T)


# ---------------------------------------------------------------------------
# Gram context
# ---------------------------------------------------------------------------

class GramContext:
    """Increment Gram matrix of a model on a grid, with its eigenfactorization.

    Eigenvalues are floored at zero; construction fails if the most negative
    eigenvalue falls below -eig_floor_rel * trace(G)/N, which signals a
    model/grid inconsistency rather than roundoff.
    """

    def __init__(self, model, grid: TimeGrid, gram: np.ndarray,
                 eig_floor_rel: float = 1e-10, cond_cap: float = 1e12):
        self.model = model
        self.grid = grid
        self.n = grid.n
        self.G = gram
        lam, U = np.linalg.eigh(gram)
        floor = eig_floor_rel * np.trace(gram) / grid.n
        if lam[0] < -floor:
            raise ModelGridError(
                f"Gram has eigenvalue {lam[0]:.3e} below -{floor:.3e}; "
                "model and grid are inconsistent"
            )
        self.eigvals = np.clip(lam, 0.0, None)
        self.eigvecs = U
        lam_max = float(self.eigvals[-1]) if self.eigvals[-1] > 0 else 0.0
        lam_min = float(self.eigvals[0])
        self.cond_estimate = np.inf if lam_min <= 0 else lam_max / lam_min
        self.conditioning_warning = bool(self.cond_estimate > cond_cap)
        self._sqrt = None
        self._inv_sqrt = None
        self._inv = None

    # -- basic geometry ----------------------------------------------------
    def inner(self, u, v) -> float:
        return float(np.asarray(u) @ self.G @ np.asarray(v))

    def norm_sq(self, u) -> float:
        return max(self.inner(u, u), 0.0)

    def norm(self, u) -> float:
        return float(np.sqrt(self.norm_sq(u)))

    def indicator(self, t: float) -> np.ndarray:
        return self.grid.indicator(t)

    def indicator_interval(self, a: float, b: float) -> np.ndarray:
        return self.grid.indicator_interval(a, b)

    def cameron_martin(self, h: np.ndarray) -> np.ndarray:
        """The function t_i -> E[X_{t_i} I(h)] at all grid nodes."""
        pair = self.G @ np.asarray(h)
        return np.concatenate([[0.0], np.cumsum(pair)])

    # -- factorizations ----------------------------------------------------
    def _pd_eigs(self):
        lam_max = self.eigvals[-1]
        if lam_max <= 0 or self.eigvals[0] <= 1e-13 * lam_max:
            raise ConditioningError(
                "Gram is singular beyond the eigenvalue floor; "
                f"cond estimate {self.cond_estimate:.3e}"
            )
        return self.eigvals

    @property
    def sample_factor(self) -> np.ndarray:
        """L with L L^T = G (semidefinite factor; flooring already applied)."""
        return self.eigvecs * np.sqrt(self.eigvals)

    @property
    def sqrt_matrix(self) -> np.ndarray:
        if self._sqrt is None:
            self._sqrt = (self.eigvecs * np.sqrt(self.eigvals)) @ self.eigvecs.T
        return self._sqrt

    @property
    def inv_sqrt_matrix(self) -> np.ndarray:
        if self._inv_sqrt is None:
            lam = self._pd_eigs()
            self._inv_sqrt = (self.eigvecs / np.sqrt(lam)) @ self.eigvecs.T
        return self._inv_sqrt

    @property
    def inv_matrix(self) -> np.ndarray:
        if self._inv is None:
            lam = self._pd_eigs()
            self._inv = (self.eigvecs / lam) @ self.eigvecs.T
        return self._inv

    def __repr__(self) -> str:
        return (f"GramContext({self.model!r}, n={self.n}, "
                f"cond={self.cond_estimate:.2e})")


def build_gram(model, grid: TimeGrid, eig_floor_rel: float = 1e-10,
               cond_cap: float = 1e12) -> GramContext:
    """Assemble the increment Gram of `model` on `grid` and factorize it."""
    if isinstance(model, WeightedFbm):
        gram = model.gram(grid)
    else:
        gram = _gram_from_cov(model, grid)
    return GramContext(model, grid, gram, eig_floor_rel=eig_floor_rel,
                       cond_cap=cond_cap)


def sample_increments(ctx: GramContext, n_paths: int, seed: int) -> np.ndarray:
    """Independent draws of the increment vector, one per row.

    The same seed gives bit-identical output; n_paths = 0 yields an empty
    (0, N) array.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((int(n_paths), ctx.n))
    return z @ ctx.sample_factor.T
