"""Tangent-space projection, manifold Jacobians and the simplified distance polynomial."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.optimize import fminbound

from .curves import Curve

ZETA_CLIP = 1e-12


@dataclass(frozen=True)
class TangentFrame:
    point: np.ndarray
    unit_tangent: np.ndarray

    def __post_init__(self):
        if abs(np.linalg.norm(self.unit_tangent) - 1.0) > 1e-12:
            raise ValueError("tangent must have unit norm")


def tangent_frame(curve: Curve, t: float) -> TangentFrame:
    v = np.asarray(curve.velocity(t), dtype=np.float64)
    speed = np.linalg.norm(v)
    if speed == 0.0:
        raise ValueError(f"curve has zero speed at t={t}; tangent undefined")
    u = v / speed
    u = u / np.linalg.norm(u)
    return TangentFrame(np.asarray(curve.eval(t), dtype=np.float64), u)


def tangent_project(frame: TangentFrame, v) -> tuple[float, np.ndarray]:
    """Signed tangential component of ``v`` and its orthogonal projection."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != frame.unit_tangent.shape:
        raise ValueError("dimension mismatch")
    c = float(v @ frame.unit_tangent)
    return c, c * frame.unit_tangent


def gram_jacobian(vectors) -> float:
    """sqrt(det Gram(v_1, ..., v_k)), the k-volume of the spanned parallelepiped."""
    V = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if V.shape[0] < 1:
        raise ValueError("need at least one vector")
    det = float(np.linalg.det(V @ V.T))
    if det < -1e-12:
        raise ArithmeticError(f"Gram determinant {det} is negative beyond rounding")
    return float(np.sqrt(max(det, 0.0)))


@dataclass(frozen=True)
class PolynomialSpec:
    n_in: int
    m: int

    def __post_init__(self):
        if self.n_in < 2 or not 1 <= self.m <= self.n_in - 1:
            raise ValueError(f"need n_in >= 2 and 1 <= m <= n_in - 1, got {self}")

    @property
    def exponents(self) -> range:
        return range(self.n_in - self.m, self.n_in + 1)


def simplified_polynomial(spec: PolynomialSpec, zeta):
    """zeta * (1 - sum_{k=n_in-m}^{n_in} zeta^k)."""
    z = np.asarray(zeta, dtype=np.float64)
    return z * (1.0 - sum(z ** k for k in spec.exponents))


def _derivative(spec: PolynomialSpec, z: float) -> float:
    return 1.0 - sum((k + 1) * z ** k for k in spec.exponents)


def polynomial_supremum(spec: PolynomialSpec, xtol: float = 1e-10) -> tuple[float, float]:
    """Maximizer and maximum of the simplified polynomial on (0, 1).

    Brent's bounded search locates the maximum; since the derivative is
    strictly decreasing on (0, 1) the location is then polished by bisection
    on the derivative, which function comparisons alone cannot resolve below
    ~1e-9.
    """
    lo, hi = ZETA_CLIP, 1.0 - ZETA_CLIP
    z0 = float(fminbound(lambda z: -float(simplified_polynomial(spec, z)), lo, hi, xtol=xtol))
    a, b = max(lo, z0 - 1e-6), min(hi, z0 + 1e-6)
    if _derivative(spec, a) < 0 or _derivative(spec, b) > 0:
        a, b = lo, hi
    while b - a > 0:
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        if _derivative(spec, mid) > 0:
            a = mid
        else:
            b = mid
    z = 0.5 * (a + b)
    return z, float(simplified_polynomial(spec, z))


def supremum_sweep(n_range=range(2, 31), m_rule=None) -> list[tuple[int, int, float, float]]:
    """Rows (n_in, m, zeta_star, p_star) over the grid, ordered by (n_in, m).

    ``m_rule(n_in)`` gives the intrinsic dimensions to try; default 1..n_in-1.
    """
    m_rule = m_rule or (lambda n: range(1, n))
    rows = []
    for n in n_range:
        for m in m_rule(n):
            z, p = polynomial_supremum(PolynomialSpec(n, m))
            rows.append((n, m, z, p))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_in", "m", "zeta_star", "p_star"])
    for n, m, z, p in rows:
        w.writerow([n, m, repr(z), repr(p)])
    return buf.getvalue()


def monotonicity_violations(rows) -> list[str]:
    """Violations of: strictly decreasing in m at fixed n_in, strictly increasing in n_in at fixed m."""
    table = {(n, m): p for n, m, _, p in rows}
    bad = []
    for (n, m), p in sorted(table.items()):
        if (n, m + 1) in table and not table[(n, m + 1)] < p:
            bad.append(f"p*({n},{m + 1}) >= p*({n},{m})")
        if (n + 1, m) in table and not table[(n + 1, m)] > p:
            bad.append(f"p*({n + 1},{m}) <= p*({n},{m})")
    return bad
