"""Frozen random decoder standing in for a generative image model.

The decoder ``g: R^k -> R^n`` is a random ReLU network whose image is an
at-most-k-dimensional piecewise-linear set.  Curves between two generated
points are built twice: along the image set (a polyline through decoded,
evenly spaced latent points) and straight through ambient space (a chord).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .curves import Chord, Polyline, write_polyline
from .network import Network, forward, init_random
from .regions import MERGE_TOL, REFINE_TOL, RegionReport, count_regions


@dataclass(frozen=True)
class Decoder:
    net: Network
    latent_dim: int
    ambient_dim: int
    seed: int

    def __call__(self, z) -> np.ndarray:
        return forward(self.net, z)


def make_decoder(k: int, n_in: int, hidden_widths: Sequence[int] = (64, 64), seed: int = 0) -> Decoder:
    if k < 1 or n_in <= k:
        raise ValueError(f"need 1 <= k < n_in, got k={k}, n_in={n_in}")
    net = init_random([k, *hidden_widths, n_in], seed)
    return Decoder(net, k, n_in, seed)


@dataclass(frozen=True)
class CurvePair:
    on_manifold: Polyline
    off_manifold: Chord
    z1: np.ndarray
    z2: np.ndarray
    seed: int

    def transformed(self, shift, scale) -> "CurvePair":
        """Apply the same per-coordinate affine normalization to both curves."""
        return CurvePair(self.on_manifold.transformed(shift, scale), self.off_manifold.transformed(shift, scale),
                         self.z1, self.z2, self.seed)


def latent_path(z1, z2, segments: int) -> np.ndarray:
    """``((segments - i) z1 + i z2) / segments`` for i = 0..segments."""
    i = np.arange(segments + 1, dtype=np.float64)[:, None]
    return ((segments - i) * z1 + i * z2) / segments


def make_curve_pair(dec: Decoder, seed: int, segments: int = 100) -> CurvePair:
    if segments < 1:
        raise ValueError("segments must be >= 1")
    rng = np.random.default_rng(seed)
    z1 = rng.standard_normal(dec.latent_dim)
    z2 = rng.standard_normal(dec.latent_dim)
    verts = dec(latent_path(z1, z2, segments))
    # chord shares the polyline's end vertices bit for bit
    return CurvePair(Polyline(verts), Chord(verts[0], verts[-1]), z1, z2, seed)


def sample_inputs(dec: Decoder, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return dec(rng.standard_normal((n, dec.latent_dim)))


def normalization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and std (std floored to avoid division by zero)."""
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return mu, np.where(sd > 1e-12, sd, 1.0)


@dataclass
class DensityComparison:
    log_density_on: float
    log_density_off: float
    report_on: RegionReport
    report_off: RegionReport

    @property
    def flagged(self) -> bool:
        """Either curve had no crossing, so a log density is -inf."""
        return not (math.isfinite(self.log_density_on) and math.isfinite(self.log_density_off))


def log_density(report: RegionReport) -> float:
    cuts = report.region_count - 1
    return math.log(cuts / report.curve_arclength) if cuts > 0 else -math.inf


def compare_density(net: Network, pair: CurvePair, grid_n: int | None = None, refine_tol: float = REFINE_TOL,
                    merge_tol: float = MERGE_TOL) -> DensityComparison:
    """Log region density per unit arclength on the polyline and on the chord.

    Both curves share the parameter interval [0, 1] and the same grid.
    """
    if net.n_in != pair.on_manifold.ambient_dim:
        raise ValueError("network input dimension does not match the curves")
    on = count_regions(net, pair.on_manifold, grid_n, refine_tol, merge_tol)
    off = count_regions(net, pair.off_manifold, grid_n, refine_tol, merge_tol)
    return DensityComparison(log_density(on), log_density(off), on, off)


def export_pair(pair: CurvePair, directory, name: str, decoder_seed: int) -> None:
    """Write both curves as polyline files plus a JSON manifest of seeds."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_polyline(pair.on_manifold, d / f"{name}_on.csv")
    write_polyline(pair.off_manifold, d / f"{name}_off.csv")
    manifest = {"decoder_seed": decoder_seed, "pair_seed": pair.seed, "segments": pair.on_manifold.segments,
                "z1": pair.z1.tolist(), "z2": pair.z2.tolist()}
    (d / f"{name}_manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
