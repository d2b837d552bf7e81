"""Concave transmission rate functions and the inequalities they satisfy.

The stock rate is the AWGN form ``0.5 * log2(1 + x / n0)`` in bits per unit
time.  Everything downstream only relies on the qualitative contract
(r(0) = 0, increasing, strictly concave, smooth), so alternative concave
rates can be registered without touching the solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UsageError

_LN2 = math.log(2.0)

SUPPORTED_FORMS = ("shannon",)


@dataclass(frozen=True)
class RateFunction:
    """Rate curve r(x) for total received power x >= 0.

    n0 is the noise power spectral density; ``form`` selects the analytic
    family (only "shannon" ships).
    """

    n0: float = 1.0
    form: str = "shannon"

    def __post_init__(self):
        if not self.n0 > 0.0:
            raise DomainError(f"noise level must be positive, got {self.n0}")
        if self.form not in SUPPORTED_FORMS:
            raise UsageError(f"unsupported rate form {self.form!r}")

    def __call__(self, x):
        return rate(self, x)

    def deriv(self, x, order=1):
        return rate_deriv(self, x, order)


def _check_nonnegative(x):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("total power must be nonnegative")
    return arr


def rate(rf: RateFunction, x):
    """Rate in bits per unit time at total power ``x``.

    Accepts scalars or arrays; negative power raises DomainError.
    """
    arr = _check_nonnegative(x)
    out = 0.5 * np.log1p(arr / rf.n0) / _LN2
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def rate_deriv(rf: RateFunction, x, order=1):
    """First or second derivative of the rate at total power ``x``."""
    arr = _check_nonnegative(x)
    if order == 1:
        out = 1.0 / (2.0 * _LN2 * (rf.n0 + arr))
    elif order == 2:
        out = -1.0 / (2.0 * _LN2 * (rf.n0 + arr) ** 2)
    else:
        raise UsageError(f"derivative order must be 1 or 2, got {order}")
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(out)
    return out


def mixture_rate_inequality_check(gamma, beta, a, b, rf: RateFunction | None = None,
                                  rtol=1e-12):
    """Check the weighted-mixture rate inequality used by the concavity proofs.

    Returns True when

        sum_k a_k * r(gamma * b_k / a_k + beta)
            <= (sum a) * r(gamma * (sum b) / (sum a) + beta)

    holds up to relative slack ``rtol``.  All entries of ``a`` and ``b`` must
    be positive; the inequality is an identity of concave rates, so a False
    return signals a numerical defect, not a tight counterexample.
    """
    if rf is None:
        rf = RateFunction()
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise DomainError("weight sequences must be non-empty")
    if a.shape != b.shape:
        raise DomainError("weight sequences must have equal length")
    if not (gamma > 0.0 and beta > 0.0):
        raise DomainError("gamma and beta must be positive")
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise DomainError("all weights must be positive")
    lhs = float(np.sum(a * rate(rf, gamma * b / a + beta)))
    a_tot = float(np.sum(a))
    b_tot = float(np.sum(b))
    rhs = a_tot * rate(rf, gamma * b_tot / a_tot + beta)
    return lhs <= rhs + rtol * max(abs(rhs), 1.0)
