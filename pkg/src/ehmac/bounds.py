"""Closed-form ceilings on the achievable sum-throughput."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .arrivals import HarvestParams
from .errors import UsageError
from .rates import RateFunction, rate

__all__ = ["upper_bound_finite", "upper_bound_infinite"]


def upper_bound_finite(params: Sequence[HarvestParams], rf: RateFunction) -> float:
    """Sum-throughput ceiling r(sum_k (lam_k/zeta_k)(1 - exp(-zeta_k L_k))).

    Valid for finite batteries; the argument is the total mean power any
    admissible policy can sustain.
    """
    total = 0.0
    for hp in params:
        if hp.is_infinite:
            raise UsageError("finite-battery bound called with an unbounded battery; "
                             "use upper_bound_infinite")
        total += hp.mean_input_rate * -math.expm1(-hp.zeta * hp.capacity)
    return rate(rf, total)


def upper_bound_infinite(params: Sequence[HarvestParams], rf: RateFunction) -> float:
    """Sum-throughput ceiling r(sum_k lam_k/zeta_k) for unbounded batteries."""
    total = float(np.sum([hp.mean_input_rate for hp in params]))
    return rate(rf, total)
