"""Shifted quasi-conditional expectation at chaos level.

The shift pair (r, c) acts through the kernel c_r = Gamma_r^* c - c; the
operator maps chaos coefficients by

    f~_n = sum_{k>=n} C(k, n) Gamma_r^(x n) < f_k, c_r^(x (k-n)) >,

which for finite-order input is a finite sum and exact on the grid.  Domain
membership of infinite expansions can only be probed through partial sums of
k! |f~_k|^2, so the diagnostic reports the sequence and its growth, never a
boolean verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from scipy.special import gammaln, logsumexp

from .covariance import GramContext
from .chaos import ChaosVector, SymmetricTensor, tensor_inner
from .errors import MartingaleCaseError, ParameterError, ShapeError
from .firstchaos import TruncationOperator, operator_norm

__all__ = [
    "ShiftContext",
    "contract_with_shift",
    "shifted_qce",
    "DomainDiagnostic",
    "domain_diagnostic",
    "escape_direction",
]

_LOG_OVERFLOW = math.log(1e300)


class ShiftContext:
    """Grid time r together with a shift c and the derived kernel c_r."""

    def __init__(self, ctx: GramContext, r: float, c=None):
        self.ctx = ctx
        self.r = float(r)
        self.op = TruncationOperator(ctx, r)
        self.m = self.op.m
        self.c = np.zeros(ctx.n) if c is None else np.asarray(c, dtype=float)
        if self.c.shape != (ctx.n,):
            raise ShapeError("shift vector must have one entry per increment")
        if np.any(self.c != 0.0):
            self.c_r = self.op.adjoint(self.c) - self.c
        else:
            self.c_r = np.zeros(ctx.n)

    def shifted_direction(self, h: np.ndarray) -> np.ndarray:
        """h^c_r = Gamma_r^*(h + c) - c, the direction probed by the operator."""
        return self.op.adjoint(np.asarray(h, dtype=float) + self.c) - self.c


def contract_with_shift(sc: ShiftContext, f: SymmetricTensor, i: int) -> SymmetricTensor:
    """Contract the last order-i axes of f with c_r through the Gram pairing."""
    if i > f.order:
        raise ShapeError("target order exceeds tensor order")
    return f.contract_last(sc.ctx, sc.c_r, f.order - i)


def shifted_qce(sc: ShiftContext, xi: ChaosVector) -> ChaosVector:
    """Apply the shifted operator to a finite-order chaos vector (exact)."""
    K = xi.max_order
    out: List[SymmetricTensor] = []
    for n in range(K + 1):
        acc = SymmetricTensor.zero(n, xi.dim)
        for k in range(n, K + 1):
            fk = xi.get(k)
            term = contract_with_shift(sc, fk, n).scaled(math.comb(k, n))
            acc = acc.add(term.project_coords(sc.m))
        out.append(_merge_powers(acc))
    return ChaosVector(out, xi.dim)


def _merge_powers(t: SymmetricTensor) -> SymmetricTensor:
    """Collapse repeated vectors in a power-sum (keeps Wick chains short)."""
    if not t.is_powers or len(t.powers) < 2:
        return t
    merged = {}
    order = []
    for w, v in t.powers:
        key = v.tobytes()
        if key in merged:
            merged[key] = (merged[key][0] + w, v)
        else:
            merged[key] = (w, v)
            order.append(key)
    return SymmetricTensor.from_powers(t.order, t.dim,
                                       [merged[k] for k in order])


@dataclass
class DomainDiagnostic:
    """Partial sums S_K of k! |f~_k|^2 with growth-ratio estimates."""

    partial_sums: np.ndarray          # S_0 <= S_1 <= ...
    log_terms: np.ndarray             # log of k! |f~_k|^2 (-inf for zero)
    term_ratios: np.ndarray           # term_k / term_{k-1}
    truncation_note: str
    overflowed: bool

    @property
    def K_max(self) -> int:
        return self.partial_sums.size - 1


def domain_diagnostic(sc: ShiftContext,
                      coeff_gen: Callable[[int], SymmetricTensor],
                      K_max: int) -> DomainDiagnostic:
    """Partial sums of the domain series for a coefficient rule k -> f_k.

    Tail contributions of orders beyond K_max to every f~_n are necessarily
    dropped; that is recorded in the note rather than hidden.  Accumulation
    switches to log space once sums pass 1e300.
    """
    if K_max < 0:
        raise ParameterError("K_max must be >= 0")
    tensors = [coeff_gen(k) for k in range(K_max + 1)]
    xi = ChaosVector(tensors, sc.ctx.n)
    tilde = shifted_qce(sc, xi)
    log_terms = np.full(K_max + 1, -np.inf)
    for k in range(K_max + 1):
        nrm_sq = _norm_sq_stable(sc.ctx, tilde.get(k))
        if nrm_sq > 0:
            log_terms[k] = gammaln(k + 1) + math.log(nrm_sq)
    log_sums = np.array([logsumexp(log_terms[: k + 1]) for k in range(K_max + 1)])
    overflow = bool(np.any(log_sums > _LOG_OVERFLOW))
    sums = np.where(log_sums > _LOG_OVERFLOW, np.inf, np.exp(log_sums))
    ratios = np.exp(np.diff(log_terms))
    note = (f"coefficients beyond order {K_max} not supplied; every reported "
            f"f~_n misses tail terms k > {K_max}")
    return DomainDiagnostic(partial_sums=sums, log_terms=log_terms,
                            term_ratios=ratios, truncation_note=note,
                            overflowed=overflow)


def _norm_sq_stable(ctx: GramContext, t: SymmetricTensor) -> float:
    if t.is_powers:
        # factor out the largest vector norm to keep <v_i, v_j>^k finite
        if not t.powers:
            return 0.0
        scales = np.array([max(ctx.norm(v), 0.0) for _, v in t.powers])
        smax = scales.max()
        if smax == 0.0 or t.order == 0:
            return max(tensor_inner(ctx, t, t), 0.0)
        scaled = SymmetricTensor.from_powers(
            t.order, t.dim, [(w, v / smax) for w, v in t.powers])
        base = max(tensor_inner(ctx, scaled, scaled), 0.0)
        if base == 0.0:
            return 0.0
        log_val = math.log(base) + 2 * t.order * math.log(smax)
        return math.exp(log_val) if log_val < _LOG_OVERFLOW else math.inf
    return max(tensor_inner(ctx, t, t), 0.0)


def escape_direction(sc: ShiftContext, tol: float = 1e-9) -> np.ndarray:
    """Direction f with |Gamma_r f| > 1 > |f|, oriented so <f, c_r> >= 0.

    Scaling uses the geometric mean: with lam = opnorm^2 the extremal unit
    direction v is scaled to lam^{-1/4}, so |f| = lam^{-1/4} < 1 and
    |Gamma_r f| = lam^{+1/4} > 1 with equal log-margins.
    """
    geo = operator_norm(sc.ctx, sc.r)
    lam = geo.opnorm**2
    if geo.opnorm <= 1.0 + tol:
        raise MartingaleCaseError(
            "truncation has operator norm 1 at this r; every direction "
            "contracts and no escape direction exists"
        )
    v = geo.extremal_direction
    v = v / sc.ctx.norm(v)
    f = lam**-0.25 * v
    pairing = sc.ctx.inner(f, sc.c_r)
    if pairing < 0:
        f = -f
    elif pairing == 0.0:
        nz = np.flatnonzero(np.abs(f) > 1e-14 * np.abs(f).max())
        if nz.size and f[nz[0]] < 0:
            f = -f
    return f
