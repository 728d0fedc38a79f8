"""Evaluation statistics: Pearson correlation and paired t-tests with
p-values from a continued-fraction regularized incomplete beta."""

from __future__ import annotations

import math
from typing import Sequence


class DegenerateVarianceError(ValueError):
    pass


def pearson_r(pred: Sequence[float], human: Sequence[float]) -> float:
    if len(pred) != len(human):
        raise ValueError("length mismatch")
    n = len(pred)
    if n < 2:
        raise ValueError("need at least 2 points")
    mx = math.fsum(pred) / n
    my = math.fsum(human) / n
    sxx = math.fsum((x - mx) ** 2 for x in pred)
    syy = math.fsum((y - my) ** 2 for y in human)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVarianceError("zero variance input")
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(pred, human))
    return sxy / math.sqrt(sxx * syy)


def _betacf(a: float, b: float, x: float, max_iter: int = 500, eps: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x < 0.0 or x > 1.0:
        raise ValueError("x outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return float(x)
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, dof: float) -> float:
    """P(T > t) for Student's t."""
    x = dof / (dof + t * t)
    p = 0.5 * betainc_reg(dof / 2.0, 0.5, x)
    return p if t >= 0 else 1.0 - p


def paired_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float, int]:
    """Two-sided paired t-test on per-observation differences."""
    if len(a) != len(b):
        raise ValueError("length mismatch")
    n = len(a)
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = [x - y for x, y in zip(a, b)]
    mean = math.fsum(d) / n
    var = math.fsum((v - mean) ** 2 for v in d) / (n - 1)
    dof = n - 1
    if var == 0.0:
        if mean == 0.0:
            return 0.0, 1.0, dof
        raise DegenerateVarianceError("constant nonzero differences")
    t = mean / math.sqrt(var / n)
    p = 2.0 * t_sf(abs(t), dof)
    return t, min(p, 1.0), dof
