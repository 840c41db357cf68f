"""Finite Wiener-chaos representations over a grid Gram context.

A square-integrable variable is held as a list of symmetric tensors
f_0, ..., f_K (chaos coefficients); its squared norm is sum_k k! |f_k|^2
with the Gram pairing applied on every axis.  Two tensor storages coexist:

* dense ndarrays of shape (N,)*k, for generic low-order coefficients
  (guarded by a size cap, since the data grows like N^k);
* lists of weighted symmetric powers sum_i w_i v_i^(x k), which stay exact
  at high order and are what Wick exponentials and the escape-direction
  generators produce.

WickCombo is a deliberately small closed algebra of terms
(alpha + I(f)) e^(wick g) used for exact closed-form cross-checks; requests
that would leave the algebra raise instead of silently densifying.
"""

from __future__ import annotations

import math
from itertools import combinations_with_replacement
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .covariance import GramContext
from .errors import ParameterError, ShapeError, UnsupportedOperationError

__all__ = [
    "SymmetricTensor",
    "ChaosVector",
    "WickCombo",
    "tensor_inner",
    "wick_exponential_chaos",
    "wick_truncation_tail_sq",
    "s_transform",
    "wick_algebra_reduce",
    "evaluate_chaos_on_sample",
    "symmetrize_full",
    "sym_insert_last",
    "chaos_inner",
    "chaos_to_json_dict",
]

MAX_DIM = 32
MAX_DENSE_ORDER = 6
_MAX_DENSE_SIZE = 4_000_000


def _check_dense_size(order: int, dim: int) -> None:
    if dim > MAX_DIM:
        raise ShapeError(f"dimension {dim} exceeds cap {MAX_DIM}")
    if order > MAX_DENSE_ORDER or dim**max(order, 1) > _MAX_DENSE_SIZE:
        raise ShapeError(
            f"dense storage for order {order}, dim {dim} exceeds the size guard; "
            "use symmetric-power form"
        )


class SymmetricTensor:
    """Symmetric element of the k-fold tensor power, dense or power-sum."""

    __slots__ = ("order", "dim", "dense", "powers")

    def __init__(self, order: int, dim: int, dense=None, powers=None):
        self.order = int(order)
        self.dim = int(dim)
        self.dense = dense
        self.powers = powers

    # -- constructors -------------------------------------------------------
    @classmethod
    def zero(cls, order: int, dim: int) -> "SymmetricTensor":
        if order == 0:
            return cls(0, dim, dense=np.float64(0.0))
        return cls(order, dim, powers=[])

    @classmethod
    def scalar(cls, value: float, dim: int) -> "SymmetricTensor":
        return cls(0, dim, dense=np.float64(value))

    @classmethod
    def from_dense(cls, arr, dim: Optional[int] = None) -> "SymmetricTensor":
        a = np.asarray(arr, dtype=float)
        if a.ndim == 0:
            return cls(0, dim if dim is not None else 0, dense=np.float64(a))
        if any(s != a.shape[0] for s in a.shape):
            raise ShapeError("dense tensor must be hyper-cubic")
        _check_dense_size(a.ndim, a.shape[0])
        return cls(a.ndim, a.shape[0], dense=a)

    @classmethod
    def from_powers(cls, order: int, dim: int,
                    pairs: Sequence[Tuple[float, np.ndarray]]) -> "SymmetricTensor":
        if order == 0:
            return cls.scalar(math.fsum(w for w, _ in pairs), dim)
        clean = [(float(w), np.asarray(v, dtype=float)) for w, v in pairs if w != 0.0]
        for _, v in clean:
            if v.shape != (dim,):
                raise ShapeError("power vectors must have length dim")
        return cls(order, dim, powers=clean)

    @classmethod
    def from_vector(cls, v) -> "SymmetricTensor":
        v = np.asarray(v, dtype=float)
        return cls(1, v.size, dense=v)

    # -- structure ----------------------------------------------------------
    @property
    def is_powers(self) -> bool:
        return self.powers is not None

    def to_dense(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        _check_dense_size(self.order, self.dim)
        out = np.zeros((self.dim,) * self.order)
        for w, v in self.powers:
            t = np.float64(w)
            for _ in range(self.order):
                t = np.multiply.outer(t, v)
            out += t
        return out

    def copy(self) -> "SymmetricTensor":
        if self.is_powers:
            return SymmetricTensor(self.order, self.dim,
                                   powers=[(w, v.copy()) for w, v in self.powers])
        return SymmetricTensor(self.order, self.dim, dense=np.array(self.dense))

    def scaled(self, a: float) -> "SymmetricTensor":
        if a == 0.0:
            return SymmetricTensor.zero(self.order, self.dim)
        if self.is_powers:
            return SymmetricTensor(self.order, self.dim,
                                   powers=[(a * w, v) for w, v in self.powers])
        return SymmetricTensor(self.order, self.dim, dense=a * self.dense)

    def add(self, other: "SymmetricTensor") -> "SymmetricTensor":
        self._check_same(other)
        if self.is_powers and other.is_powers:
            return SymmetricTensor(self.order, self.dim,
                                   powers=list(self.powers) + list(other.powers))
        return SymmetricTensor(self.order, self.dim,
                               dense=self.to_dense() + other.to_dense())

    def _check_same(self, other: "SymmetricTensor") -> None:
        if self.order != other.order or self.dim != other.dim:
            raise ShapeError(
                f"tensor mismatch: ({self.order},{self.dim}) vs "
                f"({other.order},{other.dim})"
            )

    # -- linear maps applied on every axis -----------------------------------
    def apply_linear(self, A: np.ndarray) -> "SymmetricTensor":
        """Same matrix applied to every axis; preserves symmetry and storage."""
        if self.order == 0:
            return self.copy()
        if self.is_powers:
            return SymmetricTensor(self.order, self.dim,
                                   powers=[(w, A @ v) for w, v in self.powers])
        t = self.dense
        for _ in range(self.order):
            t = np.tensordot(t, A, axes=([0], [1]))
        return SymmetricTensor(self.order, self.dim, dense=t)

    def project_coords(self, m: int) -> "SymmetricTensor":
        """Zero all entries touching coordinates >= m (axis-wise projection)."""
        if self.order == 0:
            return self.copy()
        if self.is_powers:
            new = []
            for w, v in self.powers:
                pv = v.copy()
                pv[m:] = 0.0
                new.append((w, pv))
            return SymmetricTensor(self.order, self.dim, powers=new)
        t = np.array(self.dense)
        for ax in range(self.order):
            idx = [slice(None)] * self.order
            idx[ax] = slice(m, None)
            t[tuple(idx)] = 0.0
        return SymmetricTensor(self.order, self.dim, dense=t)

    def contract_last(self, ctx: GramContext, w: np.ndarray, times: int) -> "SymmetricTensor":
        """Contract the last `times` axes with w through the Gram matrix."""
        if times == 0:
            return self.copy()
        if times > self.order:
            raise ShapeError("cannot contract more axes than the order")
        gw = ctx.G @ np.asarray(w, dtype=float)
        new_order = self.order - times
        if self.is_powers:
            pairs = [(wt * float(v @ gw) ** times, v) for wt, v in self.powers]
            if new_order == 0:
                return SymmetricTensor.scalar(math.fsum(w0 for w0, _ in pairs), self.dim)
            return SymmetricTensor(new_order, self.dim, powers=pairs)
        t = self.dense
        for _ in range(times):
            t = np.tensordot(t, gw, axes=([-1], [0]))
        if new_order == 0:
            return SymmetricTensor.scalar(float(t), self.dim)
        return SymmetricTensor(new_order, self.dim, dense=t)

    def pair_with_power(self, ctx: GramContext, h: np.ndarray) -> float:
        """Full pairing <self, h^(x k)> through the Gram matrix."""
        if self.order == 0:
            return float(self.dense)
        return float(self.contract_last(ctx, h, self.order).dense)

    def support_bound(self) -> int:
        """Smallest m such that all mass sits on coordinates < m."""
        if self.order == 0:
            return 0
        if self.is_powers:
            bound = 0
            for w, v in self.powers:
                nz = np.flatnonzero(np.abs(v) > 0)
                if w != 0.0 and nz.size:
                    bound = max(bound, int(nz[-1]) + 1)
            return bound
        mass = np.abs(self.dense)
        for _ in range(self.order - 1):
            mass = mass.sum(axis=0)
        nz = np.flatnonzero(mass > 0)
        return int(nz[-1]) + 1 if nz.size else 0

    def entries(self):
        """(sorted multi-index, value, multiplicity) triples of the dense form."""
        if self.order == 0:
            yield ((), float(self.dense), 1)
            return
        dense = self.to_dense()
        for idx in combinations_with_replacement(range(self.dim), self.order):
            val = float(dense[idx])
            if val == 0.0:
                continue
            counts = {}
            for i in idx:
                counts[i] = counts.get(i, 0) + 1
            mult = math.factorial(self.order)
            for c in counts.values():
                mult //= math.factorial(c)
            yield (idx, val, mult)


def sym_insert_last(t: np.ndarray) -> np.ndarray:
    """Full symmetrization of a tensor whose first k axes are already symmetric.

    Averages over inserting the last axis into each of the k+1 positions.
    """
    k1 = t.ndim
    return sum(np.moveaxis(t, -1, p) for p in range(k1)) / k1


def symmetrize_full(t: np.ndarray) -> np.ndarray:
    """Average over all axis permutations (use on genuinely raw tensors)."""
    from itertools import permutations

    k = t.ndim
    if k <= 1:
        return np.asarray(t, dtype=float)
    return sum(np.transpose(t, p) for p in permutations(range(k))) / math.factorial(k)


def tensor_inner(ctx: GramContext, A: SymmetricTensor, B: SymmetricTensor) -> float:
    """Full contraction <A, B> pairing each axis through the Gram matrix."""
    A._check_same(B)
    k = A.order
    if k == 0:
        return float(A.dense) * float(B.dense)
    if A.is_powers and B.is_powers:
        if not A.powers or not B.powers:
            return 0.0
        VA = np.array([v for _, v in A.powers])
        VB = np.array([v for _, v in B.powers])
        wA = np.array([w for w, _ in A.powers])
        wB = np.array([w for w, _ in B.powers])
        C = VA @ ctx.G @ VB.T
        return float(wA @ (C**k) @ wB)
    if A.is_powers:
        A, B = B, A
    if B.is_powers:
        return math.fsum(w * A.pair_with_power(ctx, v) for w, v in B.powers)
    t = B.dense
    for _ in range(k):
        t = np.tensordot(t, ctx.G, axes=([0], [0]))
    return float(np.tensordot(A.dense, t, axes=k))


# ---------------------------------------------------------------------------
# chaos vectors
# ---------------------------------------------------------------------------

class ChaosVector:
    """Finite chaos decomposition: coefficients f_0 ... f_K."""

    def __init__(self, coeffs: List[SymmetricTensor], dim: int):
        for k, f in enumerate(coeffs):
            if f.order != k or f.dim != dim:
                raise ShapeError("coefficient list must be graded by order")
        self.coeffs = coeffs
        self.dim = dim

    @property
    def max_order(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def zero(cls, K: int, dim: int) -> "ChaosVector":
        return cls([SymmetricTensor.zero(k, dim) for k in range(K + 1)], dim)

    @classmethod
    def constant(cls, value: float, dim: int) -> "ChaosVector":
        return cls([SymmetricTensor.scalar(value, dim)], dim)

    @classmethod
    def first_chaos(cls, v, constant: float = 0.0) -> "ChaosVector":
        v = np.asarray(v, dtype=float)
        return cls([SymmetricTensor.scalar(constant, v.size),
                    SymmetricTensor.from_vector(v)], v.size)

    def get(self, k: int) -> SymmetricTensor:
        if k < len(self.coeffs):
            return self.coeffs[k]
        return SymmetricTensor.zero(k, self.dim)

    def padded(self, K: int) -> "ChaosVector":
        coeffs = [self.get(k) for k in range(max(K, self.max_order) + 1)]
        return ChaosVector(coeffs, self.dim)

    def add(self, other: "ChaosVector") -> "ChaosVector":
        K = max(self.max_order, other.max_order)
        return ChaosVector([self.get(k).add(other.get(k)) for k in range(K + 1)],
                           self.dim)

    def scaled(self, a: float) -> "ChaosVector":
        return ChaosVector([f.scaled(a) for f in self.coeffs], self.dim)

    def sub(self, other: "ChaosVector") -> "ChaosVector":
        return self.add(other.scaled(-1.0))

    def expectation(self) -> float:
        return float(self.coeffs[0].dense)

    def support_bound(self) -> int:
        return max((f.support_bound() for f in self.coeffs), default=0)

    def l2_norm_sq(self, ctx: GramContext) -> float:
        return chaos_inner(ctx, self, self)

    def __repr__(self) -> str:
        return f"ChaosVector(K={self.max_order}, dim={self.dim})"


def chaos_inner(ctx: GramContext, xi: ChaosVector, eta: ChaosVector) -> float:
    """E[xi eta] = sum_k k! <f_k, h_k>, accumulated with compensated summation."""
    K = max(xi.max_order, eta.max_order)
    terms = [math.factorial(k) * tensor_inner(ctx, xi.get(k), eta.get(k))
             for k in range(K + 1)]
    return math.fsum(terms)


def wick_exponential_chaos(ctx: GramContext, h: np.ndarray, K: int) -> ChaosVector:
    """Truncated Wick exponential: f_k = h^(x k) / k! for k <= K."""
    if K < 0:
        raise ParameterError("K must be >= 0")
    h = np.asarray(h, dtype=float)
    coeffs = [SymmetricTensor.scalar(1.0, h.size)]
    for k in range(1, K + 1):
        coeffs.append(SymmetricTensor.from_powers(k, h.size,
                                                  [(1.0 / math.factorial(k), h)]))
    return ChaosVector(coeffs, h.size)


def wick_truncation_tail_sq(ctx: GramContext, h: np.ndarray, K: int) -> float:
    """Squared L2 error of the order-K truncation: sum_{k>K} |h|^{2k} / k!."""
    x = ctx.norm_sq(h)
    partial = math.fsum(x**k / math.factorial(k) for k in range(K + 1))
    return max(math.exp(x) - partial, 0.0)


# ---------------------------------------------------------------------------
# Wick-term algebra
# ---------------------------------------------------------------------------

class WickCombo:
    """Exact algebra of terms (alpha + I(f)) e^(wick I(g)).

    f may be None (pure exponential term).  The empty term list is zero.
    """

    def __init__(self, terms, dim: int):
        self.terms = []
        for alpha, f, g in terms:
            g = np.asarray(g, dtype=float)
            f = None if f is None else np.asarray(f, dtype=float)
            if g.shape != (dim,) or (f is not None and f.shape != (dim,)):
                raise ShapeError("term vectors must have length dim")
            self.terms.append((float(alpha), f, g))
        self.dim = dim

    @classmethod
    def zero(cls, dim: int) -> "WickCombo":
        return cls([], dim)

    @classmethod
    def exponential(cls, g, alpha: float = 1.0, f=None) -> "WickCombo":
        g = np.asarray(g, dtype=float)
        return cls([(alpha, f, g)], g.size)

    def scaled(self, a: float) -> "WickCombo":
        return WickCombo([(a * al, None if f is None else a * f, g)
                          for al, f, g in self.terms], self.dim)

    def add(self, other: "WickCombo") -> "WickCombo":
        if self.dim != other.dim:
            raise ShapeError("dimension mismatch")
        return WickCombo(self.terms + other.terms, self.dim)

    def expectation(self, ctx: GramContext) -> float:
        out = 0.0
        for alpha, f, g in self.terms:
            out += alpha
            if f is not None:
                out += ctx.inner(f, g)
        return out

    def s(self, ctx: GramContext, h) -> float:
        """Exact S-transform: sum (alpha + <f,h> + <f,g>) e^{<g,h>}."""
        h = np.asarray(h, dtype=float)
        out = 0.0
        for alpha, f, g in self.terms:
            lin = alpha
            if f is not None:
                lin += ctx.inner(f, h) + ctx.inner(f, g)
            out += lin * math.exp(ctx.inner(g, h))
        return out

    def multiply_first_chaos(self, ctx: GramContext, x) -> "WickCombo":
        """Multiply by I(x); only pure-exponential terms stay in the algebra."""
        x = np.asarray(x, dtype=float)
        new = []
        for alpha, f, g in self.terms:
            if f is not None and np.any(x != 0.0):
                raise UnsupportedOperationError(
                    "product of two first-chaos factors leaves the algebra"
                )
            new.append((0.0, alpha * x, g))
        return WickCombo(new, self.dim)

    def multiply_exponential(self, ctx: GramContext, w, factor: float = 1.0) -> "WickCombo":
        """Multiply by factor * e^(wick I(w)) using the product identity."""
        w = np.asarray(w, dtype=float)
        new = []
        for alpha, f, g in self.terms:
            c = factor * math.exp(ctx.inner(g, w))
            new.append((c * alpha, None if f is None else c * f, g + w))
        return WickCombo(new, self.dim)

    def conditional_expectation_independent(self, ctx: GramContext, r: float,
                                            block_tol: float = 1e-12) -> "WickCombo":
        """Classical E[. | F_r] when past/future increments are independent.

        Valid only when the off-diagonal Gram block vanishes (martingale
        grid); otherwise the result would leave the algebra.
        """
        m = ctx.grid.index_of(r)
        off = ctx.G[:m, m:]
        scale = max(np.abs(ctx.G).max(), 1e-300)
        if off.size and np.abs(off).max() > block_tol * scale:
            raise UnsupportedOperationError(
                "conditional expectation in the combo algebra needs "
                "independent past/future blocks"
            )
        new = []
        for alpha, f, g in self.terms:
            g_p = g.copy()
            g_p[m:] = 0.0
            g_f = g - g_p
            a_new = alpha
            f_p = None
            if f is not None:
                f_p = f.copy()
                f_p[m:] = 0.0
                a_new = alpha + ctx.inner(f - f_p, g_f)
                if not np.any(f_p != 0.0):
                    f_p = None
            new.append((a_new, f_p, g_p))
        return WickCombo(new, self.dim)

    def to_chaos(self, ctx: GramContext, K: int) -> ChaosVector:
        """Truncated chaos decomposition of the combo.

        Pure-exponential terms expand in symmetric-power form at any K;
        terms with a first-chaos factor need dense storage (size-guarded).
        """
        coeffs = [SymmetricTensor.zero(k, self.dim) for k in range(K + 1)]
        for alpha, f, g in self.terms:
            base = alpha if f is None else alpha + ctx.inner(f, g)
            coeffs[0] = coeffs[0].add(SymmetricTensor.scalar(base, self.dim))
            for k in range(1, K + 1):
                part = SymmetricTensor.from_powers(
                    k, self.dim, [(base / math.factorial(k), g)])
                if f is not None:
                    # cross term sym(f x g^(k-1)) / (k-1)!
                    gt = np.float64(1.0)
                    for _ in range(k - 1):
                        gt = np.multiply.outer(gt, g)
                    cross = sym_insert_last(np.multiply.outer(gt, f))
                    part = part.add(SymmetricTensor.from_dense(
                        cross / math.factorial(k - 1)))
                coeffs[k] = coeffs[k].add(part)
        return ChaosVector(coeffs, self.dim)

    def evaluate(self, ctx: GramContext, increments: np.ndarray) -> np.ndarray:
        """Pathwise value on sampled increments (exact, no truncation)."""
        X = np.atleast_2d(np.asarray(increments, dtype=float))
        out = np.zeros(X.shape[0])
        for alpha, f, g in self.terms:
            expo = np.exp(X @ g - 0.5 * ctx.norm_sq(g))
            lin = alpha if f is None else alpha + X @ f
            out += lin * expo
        return out if np.asarray(increments).ndim > 1 else out[0]

    def __repr__(self) -> str:
        return f"WickCombo(terms={len(self.terms)}, dim={self.dim})"


def wick_algebra_reduce(ctx: GramContext, combo: WickCombo, op: str, **kwargs):
    """Named-operation front end for the closed Wick-term algebra."""
    if op == "expectation":
        return combo.expectation(ctx)
    if op == "multiply_first_chaos":
        return combo.multiply_first_chaos(ctx, kwargs["x"])
    if op == "multiply_exponential":
        return combo.multiply_exponential(ctx, kwargs["w"],
                                          kwargs.get("factor", 1.0))
    if op == "scale":
        return combo.scaled(kwargs["a"])
    if op == "add":
        return combo.add(kwargs["other"])
    raise UnsupportedOperationError(f"unknown algebra operation {op!r}")


# ---------------------------------------------------------------------------
# S-transform and pathwise evaluation
# ---------------------------------------------------------------------------

def s_transform(ctx: GramContext, xi, h) -> float:
    """(S xi)(h) = E[xi e^(wick I(h))].

    Exact for both representations: sum_k <f_k, h^(x k)> for a ChaosVector,
    the closed combo formula for a WickCombo.
    """
    h = np.asarray(h, dtype=float)
    if isinstance(xi, WickCombo):
        return xi.s(ctx, h)
    return math.fsum(f.pair_with_power(ctx, h) for f in xi.coeffs)


def _hermite(k: int, y: np.ndarray) -> np.ndarray:
    """Probabilists' Hermite polynomial He_k, vectorized."""
    if k == 0:
        return np.ones_like(y)
    h_prev = np.ones_like(y)
    h = y.copy()
    for j in range(1, k):
        h, h_prev = y * h - j * h_prev, h
    return h


def _contract_pairs(t: np.ndarray, G: np.ndarray, j: int) -> np.ndarray:
    for _ in range(j):
        t = np.tensordot(t, G, axes=([0, 1], [0, 1]))
    return t


def _monomial(t: np.ndarray, X: np.ndarray) -> np.ndarray:
    """sum_I t_I x_{i_1} ... x_{i_q} per sample row of X."""
    if t.ndim == 0:
        return np.full(X.shape[0], float(t))
    y = np.tensordot(X, t, axes=([1], [0]))          # sample axis first
    for _ in range(t.ndim - 1):
        y = np.einsum("n...i,ni->n...", y, X)
    return y


def _eval_tensor(ctx: GramContext, f: SymmetricTensor, X: np.ndarray) -> np.ndarray:
    k = f.order
    if k == 0:
        return np.full(X.shape[0], float(f.dense))
    if f.is_powers:
        out = np.zeros(X.shape[0])
        for w, v in f.powers:
            nrm = ctx.norm(v)
            if nrm == 0.0:
                continue
            y = (X @ v) / nrm
            out += w * nrm**k * _hermite(k, y)
        return out
    # dense: Hermite expansion of the Wick monomials,
    # I_k(f) = sum_j (-1)^j k!/(j! 2^j (k-2j)!) m_{k-2j}(f : G^j)
    out = np.zeros(X.shape[0])
    t = f.dense
    for j in range(k // 2 + 1):
        c = math.factorial(k) / (math.factorial(j) * 2**j * math.factorial(k - 2 * j))
        out += (-1) ** j * c * _monomial(_contract_pairs(t, ctx.G, j), X)
    return out


def evaluate_chaos_on_sample(ctx: GramContext, xi: ChaosVector, increments):
    """Realize the multiple Wiener integrals of xi on sampled increments.

    increments may be a single length-N vector or an (n_paths, N) matrix.
    """
    X = np.asarray(increments, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != xi.dim:
        raise ShapeError("increment vector length does not match dim")
    out = np.zeros(X.shape[0])
    for f in xi.coeffs:
        out += _eval_tensor(ctx, f, X)
    return out[0] if single else out


def chaos_to_json_dict(xi: ChaosVector) -> dict:
    """JSON-friendly dump: per order, sorted multi-index / value pairs."""
    return {
        "dim": xi.dim,
        "max_order": xi.max_order,
        "orders": [
            {
                "order": k,
                "entries": [
                    {"index": list(idx), "value": val, "multiplicity": mult}
                    for idx, val, mult in xi.coeffs[k].entries()
                ],
            }
            for k in range(xi.max_order + 1)
        ],
    }
