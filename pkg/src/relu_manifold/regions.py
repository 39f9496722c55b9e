"""Exact linear-region profiling of a ReLU network along a curve.

Neuron z kinks on the curve where ``g_z(t) = z(x(t)) - b_z`` vanishes.  Each
``g_z`` is continuous, so crossings are bracketed by sign changes on a
uniform grid and refined by bisection.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .curves import Curve
from .network import Network, NeuronId, boundary_values, neuron_gradients

GRID_PER_UNIT = 4096
REFINE_TOL = 1e-10
MERGE_TOL = 1e-8
GRID_CHUNK = 65536


@dataclass(frozen=True)
class BoundaryPoint:
    t_star: float
    neuron: NeuronId
    residual: float


@dataclass
class RegionReport:
    boundary_points: list[BoundaryPoint]
    cuts: list[float]
    per_neuron: dict[NeuronId, int]
    curve_arclength: float
    domain: tuple[float, float]

    @property
    def crossings_total(self) -> int:
        return len(self.boundary_points)

    @property
    def region_count(self) -> int:
        return len(self.cuts) + 1

    @property
    def density_per_arclength(self) -> float:
        return (self.region_count - 1) / self.curve_arclength

    def summary(self) -> dict:
        return {
            "crossings_total": self.crossings_total,
            "region_count": self.region_count,
            "density_per_arclength": self.density_per_arclength,
            "curve_arclength": self.curve_arclength,
            "t_lo": self.domain[0],
            "t_hi": self.domain[1],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_star", "layer", "index", "residual"])
        for bp in self.boundary_points:
            w.writerow([repr(bp.t_star), bp.neuron.layer, bp.neuron.index, repr(bp.residual)])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "summary": self.summary(),
            "cuts": self.cuts,
            "boundary_points": [[bp.t_star, bp.neuron.layer, bp.neuron.index, bp.residual] for bp in self.boundary_points],
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RegionReport":
        doc = json.loads(text)
        pts = [BoundaryPoint(float(t), NeuronId(int(l), int(i)), float(r)) for t, l, i, r in doc["boundary_points"]]
        per: dict[NeuronId, int] = {}
        for bp in pts:
            per[bp.neuron] = per.get(bp.neuron, 0) + 1
        s = doc["summary"]
        return cls(pts, [float(c) for c in doc["cuts"]], per, float(s["curve_arclength"]), (float(s["t_lo"]), float(s["t_hi"])))


def default_grid_n(curve: Curve) -> int:
    return max(2, int(math.ceil(GRID_PER_UNIT * curve.length)))


def _g(net: Network, curve: Curve, t: np.ndarray) -> np.ndarray:
    return boundary_values(net, curve.eval(t))


def _zero_run_roots(t: np.ndarray, g: np.ndarray) -> list[float]:
    """Crossings that land exactly on grid points of one neuron's samples.

    A run of exact zeros counts as a crossing only when the samples on both
    sides have opposite signs; the root is reported where the neuron turns on.
    """
    roots = []
    zero = g == 0.0
    n = g.size
    i = 0
    while i < n:
        if not zero[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and zero[j + 1]:
            j += 1
        if i > 0 and j < n - 1 and g[i - 1] * g[j + 1] < 0:
            roots.append(float(t[j] if g[j + 1] > 0 else t[i]))
        i = j + 1
    return roots


def _all_roots(net: Network, curve: Curve, grid_n: int, refine_tol: float, columns=None):
    """Roots of g_z for the selected neuron columns: list of (t, column, residual)."""
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    if not refine_tol > 0:
        raise ValueError("refine_tol must be > 0")
    t = np.linspace(curve.t_lo, curve.t_hi, grid_n)
    cols = slice(None) if columns is None else np.asarray(columns)
    # only signs are kept, chunked so that long grids stay within memory
    chunks = []
    for start in range(0, grid_n, GRID_CHUNK):
        chunks.append(np.sign(_g(net, curve, t[start:start + GRID_CHUNK])[:, cols]).astype(np.int8))
    s = np.concatenate(chunks)
    columns = np.arange(s.shape[1]) if columns is None else np.asarray(columns)
    if s.shape[1] == 0:
        return []

    found = []
    for c in np.flatnonzero(np.any(s == 0, axis=0)):
        for r in _zero_run_roots(t, s[:, c].astype(np.float64)):
            found.append((r, int(columns[c]), 0.0))

    rows, cols = np.nonzero((s[:-1] * s[1:]) < 0)
    if rows.size:
        lo, hi = t[rows].copy(), t[rows + 1].copy()
        neuron_col = columns[cols]
        sign_lo = s[rows, cols]
        idx = np.arange(rows.size)
        # stop once both the bracket and the residual at its midpoint are within
        # tolerance, or the bracket cannot shrink further in floating point
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            gm = _g(net, curve, mid)[idx, neuron_col]
            done = ((hi - lo) <= refine_tol) & (np.abs(gm) <= refine_tol)
            done |= (mid <= lo) | (mid >= hi)
            if np.all(done):
                break
            same = np.sign(gm) == sign_lo
            exact = gm == 0.0
            lo = np.where(done, lo, np.where(same | exact, mid, lo))
            hi = np.where(done, hi, np.where(same & ~exact, hi, mid))
        root = 0.5 * (lo + hi)
        res = np.abs(_g(net, curve, root)[idx, neuron_col])
        found.extend(zip(root.tolist(), neuron_col.tolist(), res.tolist()))
    found.sort()
    return found


def neuron_boundaries(net: Network, curve: Curve, neuron: NeuronId, grid_n: int | None = None,
                      refine_tol: float = REFINE_TOL) -> list[float]:
    """Sorted parameters where ``neuron`` crosses its threshold along ``curve``.

    Tangential contacts that do not change sign are not detected.
    """
    col = net.flat_index(neuron)
    grid_n = default_grid_n(curve) if grid_n is None else grid_n
    return [r for r, _, _ in _all_roots(net, curve, grid_n, refine_tol, columns=[col])]


def count_regions(net: Network, curve: Curve, grid_n: int | None = None, refine_tol: float = REFINE_TOL,
                  merge_tol: float = MERGE_TOL) -> RegionReport:
    """Boundary crossings of every hidden neuron along ``curve``.

    Crossings closer than ``merge_tol`` form one region cut, so
    ``region_count = cuts + 1`` while every crossing is kept in
    ``boundary_points``.  ``grid_n`` defaults to 4096 points per unit of
    parameter length.
    """
    if not merge_tol > refine_tol:
        raise ValueError("merge_tol must exceed refine_tol")
    grid_n = default_grid_n(curve) if grid_n is None else grid_n
    neurons = net.neurons()
    roots = _all_roots(net, curve, grid_n, refine_tol)
    points = [BoundaryPoint(r, neurons[c], res) for r, c, res in roots]
    per: dict[NeuronId, int] = {}
    for bp in points:
        per[bp.neuron] = per.get(bp.neuron, 0) + 1
    cuts: list[float] = []
    anchor = None
    for bp in points:
        if anchor is None or bp.t_star - anchor > merge_tol:
            cuts.append(bp.t_star)
            anchor = bp.t_star
    return RegionReport(points, cuts, per, curve.total_arclength(), curve.domain)


def brute_force_count(net: Network, curve: Curve, sample_n: int, chunk: int = 200_000) -> int:
    """1 + number of adjacent uniform samples whose activation patterns differ."""
    if sample_n < 2:
        raise ValueError("sample_n must be >= 2")
    t = np.linspace(curve.t_lo, curve.t_hi, sample_n)
    changes = 0
    prev = None
    for start in range(0, sample_n, chunk):
        pat = _g(net, curve, t[start:start + chunk]) > 0.0
        if prev is not None:
            pat = np.vstack([prev, pat])
        changes += int(np.count_nonzero(np.any(pat[1:] != pat[:-1], axis=1)))
        prev = pat[-1:]
    return 1 + changes


def boundary_distance_ambient(net: Network, x) -> float:
    """min over neurons of |z(x) - b_z| / ||grad z(x)||; zero-gradient neurons are skipped."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    grads, _ = neuron_gradients(net, x)
    if not grads:
        return math.inf
    norms = np.linalg.norm(np.vstack(grads), axis=1)
    gaps = np.abs(boundary_values(net, x))
    ok = norms > 0.0
    if not np.any(ok):
        return math.inf
    return float(np.min(gaps[ok] / norms[ok]))


def boundary_distance_on_curve(report: RegionReport, curve: Curve, t):
    """Arclength from ``t`` to the nearest region cut along the curve.

    Without any cut the distance to the nearer domain endpoint is returned.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    s = curve.cumulative_arclength(t_arr)
    if report.cuts:
        anchors = curve.cumulative_arclength(np.asarray(report.cuts))
    else:
        anchors = np.array([0.0, report.curve_arclength])
    pos = np.searchsorted(anchors, s)
    left = anchors[np.clip(pos - 1, 0, anchors.size - 1)]
    right = anchors[np.clip(pos, 0, anchors.size - 1)]
    d = np.minimum(np.abs(s - left), np.abs(right - s))
    return float(d[0]) if np.ndim(t) == 0 else d


@dataclass
class DistanceStats:
    mean: float
    std: float
    normalized_mean: float
    max: float
    no_boundaries: bool = False
    distances: np.ndarray = field(default=None, repr=False)


def distance_statistics(net: Network, curve: Curve, report: RegionReport | None = None, sample_n: int = 512,
                        seed: int = 0, normalize: bool = True) -> DistanceStats:
    """On-curve distance to the nearest cut at uniformly sampled parameters.

    ``normalized_mean`` divides by the largest distance in this sample batch
    (equal to ``mean`` when ``normalize`` is off).
    """
    if sample_n < 1:
        raise ValueError("sample_n must be >= 1")
    if report is None:
        report = count_regions(net, curve)
    rng = np.random.default_rng(seed)
    t = rng.uniform(curve.t_lo, curve.t_hi, size=sample_n)
    d = boundary_distance_on_curve(report, curve, t)
    dmax = float(np.max(d))
    mean = float(np.mean(d))
    norm_mean = mean / dmax if (normalize and dmax > 0) else mean
    return DistanceStats(mean, float(np.std(d)), norm_mean, dmax, not report.cuts, d)
