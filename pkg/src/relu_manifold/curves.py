"""Parametric 1-D manifolds embedded in R^n and regression targets on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate


class CurveError(ValueError):
    pass


class Curve:
    """A map ``t -> x(t)`` from an interval into R^n.

    ``eval`` and ``velocity`` accept scalars or 1-D arrays of parameters and
    return a point or an array of shape (len(t), n).
    """

    kind = "curve"
    t_lo: float
    t_hi: float
    ambient_dim: int
    closed_domain = False

    @property
    def domain(self) -> tuple[float, float]:
        return (self.t_lo, self.t_hi)

    @property
    def length(self) -> float:
        """Length of the parameter interval."""
        return self.t_hi - self.t_lo

    def _check(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        # endpoints of open domains are accepted as limits; the maps extend continuously
        if np.any(~np.isfinite(t)) or np.any(t < self.t_lo) or np.any(t > self.t_hi):
            raise CurveError(f"parameter outside domain [{self.t_lo}, {self.t_hi}]")
        return t

    def eval(self, t) -> np.ndarray:
        t = self._check(t)
        out = self._eval(np.atleast_1d(t))
        return out[0] if t.ndim == 0 else out

    def velocity(self, t) -> np.ndarray:
        t = self._check(t)
        out = self._velocity(np.atleast_1d(t))
        return out[0] if t.ndim == 0 else out

    def speed(self, t) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(self.velocity(t)), axis=-1)

    def _breakpoints(self) -> list[float]:
        """Parameters where the speed is not smooth."""
        return []

    def arclength(self, t0: float, t1: float) -> float:
        t0, t1 = float(self._check(t0)), float(self._check(t1))
        if t1 < t0:
            raise CurveError("arclength needs t0 <= t1")
        if t1 == t0:
            return 0.0
        pts = [p for p in self._breakpoints() if t0 < p < t1]
        val, _ = integrate.quad(
            lambda s: float(np.linalg.norm(self._velocity(np.array([s]))[0])),
            t0, t1, points=pts or None, epsabs=1e-10, epsrel=1e-12, limit=200,
        )
        return val

    def cumulative_arclength(self, ts) -> np.ndarray:
        """Arclength from ``t_lo`` to each parameter in ``ts``."""
        ts = np.asarray(self._check(ts), dtype=np.float64)
        order = np.argsort(ts, kind="stable")
        sorted_t = ts[order]
        pieces = np.empty(sorted_t.size)
        prev = self.t_lo
        for i, t in enumerate(sorted_t):
            pieces[i] = self.arclength(prev, t)
            prev = t
        out = np.empty_like(pieces)
        out[order] = np.cumsum(pieces)
        return out

    def total_arclength(self) -> float:
        return self.arclength(self.t_lo, self.t_hi)


class EmbeddedCircle(Curve):
    """``cos(t) u + sin(t) v`` for orthonormal u, v, on (-pi, pi)."""

    kind = "embedded_circle"

    def __init__(self, u, v):
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if u.shape != v.shape or u.size < 2:
            raise CurveError("basis vectors must share a dimension >= 2")
        if abs(u @ v) > 1e-12 or abs(u @ u - 1) > 1e-12 or abs(v @ v - 1) > 1e-12:
            raise CurveError("basis vectors must be orthonormal")
        self.u, self.v = u, v
        self.t_lo, self.t_hi = -math.pi, math.pi
        self.ambient_dim = u.size

    def _eval(self, t):
        return np.cos(t)[:, None] * self.u + np.sin(t)[:, None] * self.v

    def _velocity(self, t):
        return -np.sin(t)[:, None] * self.u + np.cos(t)[:, None] * self.v

    def arclength(self, t0, t1):
        # unit speed; quadrature would return the same value
        t0, t1 = float(self._check(t0)), float(self._check(t1))
        if t1 < t0:
            raise CurveError("arclength needs t0 <= t1")
        return t1 - t0

    def cumulative_arclength(self, ts):
        return np.asarray(self._check(ts), dtype=np.float64) - self.t_lo


class Circle(EmbeddedCircle):
    """The unit circle ``(cos t, sin t)`` in R^2."""

    kind = "circle"

    def __init__(self):
        super().__init__([1.0, 0.0], [0.0, 1.0])


class Tractrix(Curve):
    """``(t - tanh t, sech t)`` on (-3, 3)."""

    kind = "tractrix"

    def __init__(self, t_lo: float = -3.0, t_hi: float = 3.0):
        if not t_lo < t_hi:
            raise CurveError("empty tractrix domain")
        self.t_lo, self.t_hi = float(t_lo), float(t_hi)
        self.ambient_dim = 2

    def _eval(self, t):
        return np.stack([t - np.tanh(t), 1.0 / np.cosh(t)], axis=-1)

    def _velocity(self, t):
        th = np.tanh(t)
        return np.stack([th * th, -th / np.cosh(t)], axis=-1)

    def _breakpoints(self):
        # speed |tanh t| has a kink at the cusp
        return [0.0]


class Polyline(Curve):
    """Piecewise-linear curve through K+1 vertices on [0, 1].

    Segment ``i = floor(K t)`` (clamped to K-1 at t = 1) is traversed at
    constant velocity ``K (p_{i+1} - p_i)``.
    """

    kind = "polyline"
    closed_domain = True

    def __init__(self, vertices):
        P = np.asarray(vertices, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] < 2:
            raise CurveError("polyline needs at least two vertices")
        if not np.all(np.isfinite(P)):
            raise CurveError("polyline vertices must be finite")
        self.vertices = P
        self.segments = P.shape[0] - 1
        self.t_lo, self.t_hi = 0.0, 1.0
        self.ambient_dim = P.shape[1]

    def _locate(self, t):
        K = self.segments
        i = np.minimum(np.floor(K * t).astype(np.int64), K - 1)
        return i, K * t - i

    def _eval(self, t):
        i, s = self._locate(t)
        P = self.vertices
        return (1.0 - s)[:, None] * P[i] + s[:, None] * P[i + 1]

    def _velocity(self, t):
        i, _ = self._locate(t)
        return self.segments * (self.vertices[i + 1] - self.vertices[i])

    def velocity(self, t, with_flag: bool = False):
        """Right-hand derivative (left-hand at t = 1).

        With ``with_flag`` also returns whether ``t`` is a vertex parameter,
        where the curve is not differentiable.
        """
        v = super().velocity(t)
        if not with_flag:
            return v
        Kt = self.segments * np.asarray(t, dtype=np.float64)
        return v, np.isclose(Kt, np.round(Kt), rtol=0.0, atol=1e-12)

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)

    def arclength(self, t0, t1):
        t0, t1 = float(self._check(t0)), float(self._check(t1))
        if t1 < t0:
            raise CurveError("arclength needs t0 <= t1")
        return float(self._cumulative(np.array([t1]))[0] - self._cumulative(np.array([t0]))[0])

    def _cumulative(self, t):
        seg = self.segment_lengths()
        before = np.concatenate([[0.0], np.cumsum(seg)])
        i, s = self._locate(t)
        return before[i] + s * seg[i]

    def cumulative_arclength(self, ts):
        ts = np.asarray(self._check(ts), dtype=np.float64)
        return self._cumulative(np.atleast_1d(ts)).reshape(ts.shape)

    def transformed(self, shift, scale) -> "Polyline":
        return Polyline((self.vertices - shift) / scale)


class Chord(Polyline):
    """Straight segment ``(1 - t) p + t q`` on [0, 1]."""

    kind = "chord"

    def __init__(self, p, q):
        super().__init__([p, q])

    @property
    def p(self):
        return self.vertices[0]

    @property
    def q(self):
        return self.vertices[1]

    def transformed(self, shift, scale) -> "Chord":
        return Chord((self.p - shift) / scale, (self.q - shift) / scale)


def embedded_circle(n_in: int, seed: int) -> EmbeddedCircle:
    """Unit circle in a random 2-plane of R^n_in (Gram-Schmidt on normal draws)."""
    if n_in < 2:
        raise CurveError("embedded circle needs n_in >= 2")
    rng = np.random.default_rng(seed)
    while True:
        a, b = rng.standard_normal(n_in), rng.standard_normal(n_in)
        u = a / np.linalg.norm(a)
        r = b - (b @ u) * u
        nr = np.linalg.norm(r)
        if nr < 1e-12:
            continue
        v = r / nr
        # one reorthogonalization pass keeps |u.v| at rounding level
        v = v - (v @ u) * u
        v /= np.linalg.norm(v)
        return EmbeddedCircle(u, v)


# ---------------------------------------------------------------------------
# polyline files


def write_polyline(curve: Polyline, path) -> None:
    lines = [f"dim={curve.ambient_dim},K={curve.segments}"]
    lines += [",".join(repr(float(c)) for c in row) for row in curve.vertices]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_polyline(path) -> Polyline:
    rows, header = [], None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if lineno == 1 and line.startswith("dim="):
            try:
                header = dict(item.split("=") for item in line.split(","))
                header = {k.strip(): int(v) for k, v in header.items()}
            except ValueError as exc:
                raise CurveError(f"bad polyline header {line!r}") from exc
            continue
        try:
            rows.append([float(c) for c in line.split(",")])
        except ValueError as exc:
            raise CurveError(f"line {lineno}: cannot parse vertex {line!r}") from exc
    if len({len(r) for r in rows}) > 1:
        raise CurveError("vertices have inconsistent dimensions")
    curve = Polyline(rows)
    if header is not None:
        if header.get("dim", curve.ambient_dim) != curve.ambient_dim or header.get("K", curve.segments) != curve.segments:
            raise CurveError("polyline header does not match the vertex data")
    return curve


# ---------------------------------------------------------------------------
# regression tasks


@dataclass(frozen=True)
class RegressionTask:
    curve: Curve
    amplitude: float = 1.0
    frequency: float = 3.0
    noise_sigma: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.amplitude) and math.isfinite(self.frequency)):
            raise CurveError("amplitude and frequency must be finite")
        if not self.noise_sigma >= 0:
            raise CurveError("noise_sigma must be >= 0")


def circle_task(amplitude=1.0, frequency=3.0, noise_sigma=0.1, curve: Curve | None = None) -> RegressionTask:
    return RegressionTask(curve or Circle(), amplitude, frequency, noise_sigma)


def tractrix_task(amplitude=1.0, frequency=math.pi, noise_sigma=0.1) -> RegressionTask:
    return RegressionTask(Tractrix(), amplitude, frequency, noise_sigma)


def target(task: RegressionTask, t):
    t = task.curve._check(t)
    return task.amplitude * np.sin(task.frequency * t)


def sample_dataset(task: RegressionTask, n_points: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform parameters over the domain, noisy targets: returns (X, y)."""
    if n_points < 1:
        raise CurveError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    t = rng.uniform(task.curve.t_lo, task.curve.t_hi, size=n_points)
    X = task.curve.eval(t)
    y = target(task, t) + task.noise_sigma * rng.standard_normal(n_points)
    return X, y
