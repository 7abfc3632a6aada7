"""Affine iterated function systems on [0, 1] and their self-similar measures.

An IFS is a list of contractions ``S_i(x) = r_i x + b_i`` together with
probability weights ``mu_i``.  The maps must be ordered from left to right
with interior-disjoint images that start at 0 and end at 1.  This module
validates such systems, computes the scaling exponents that control the
spectral asymptotics, builds the stopping-time partitions used for every
discretisation, and constructs normalised indicator functions that
approximate point evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    BadRatio,
    BadWeights,
    EndpointMismatch,
    NotInSet,
    OverlappingCells,
    PartitionTooLarge,
)

__all__ = [
    "IFSSpec",
    "Exponents",
    "LevelPartition",
    "DeltaApproximant",
    "validate_ifs",
    "hausdorff_dimension",
    "spectral_exponent",
    "delta_exponent",
    "exponents",
    "build_partition",
    "cell_mass",
    "delta_approximant",
    "lebesgue_spec",
    "cantor_spec",
]

WEIGHT_TOL = 1e-12
GEOMETRY_TOL = 1e-12
DEFAULT_PARTITION_CAP = 2_000_000


@dataclass(frozen=True)
class IFSSpec:
    """Validated affine IFS with ordered, interior-disjoint images.

    Attributes
    ----------
    ratios : tuple of float
        Contraction ratios ``r_i`` in (0, 1).
    offsets : tuple of float
        Translations ``b_i``; ``S_i(x) = r_i x + b_i``.
    weights : tuple of float
        Probability weights ``mu_i`` of the self-similar measure.
    """

    ratios: tuple
    offsets: tuple
    weights: tuple

    @property
    def n_maps(self) -> int:
        return len(self.ratios)

    @property
    def r_max(self) -> float:
        return max(self.ratios)

    @property
    def r_min(self) -> float:
        return min(self.ratios)

    def image(self, i: int) -> tuple:
        """Interval ``S_i([0, 1])`` for a 0-based map index."""
        return self.offsets[i], self.offsets[i] + self.ratios[i]


def validate_ifs(ratios: Sequence[float], offsets: Sequence[float],
                 weights: Sequence[float]) -> IFSSpec:
    """Check raw user input and return an :class:`IFSSpec`.

    Raises
    ------
    BadRatio
        A ratio outside (0, 1), or mismatched list lengths.
    BadWeights
        A weight outside (0, 1) or weights not summing to one.
    EndpointMismatch
        ``S_1(0) != 0`` or ``S_N(1) != 1``.
    OverlappingCells
        ``S_i(1) > S_{i+1}(0)`` for some i.
    """
    r = [float(v) for v in ratios]
    b = [float(v) for v in offsets]
    mu = [float(v) for v in weights]
    if len(r) < 2:
        raise BadRatio(f"need at least two maps, got {len(r)}")
    if len(b) != len(r) or len(mu) != len(r):
        raise BadRatio(
            f"length mismatch: {len(r)} ratios, {len(b)} offsets, {len(mu)} weights")
    for i, ri in enumerate(r):
        if not (np.isfinite(ri) and 0.0 < ri < 1.0):
            raise BadRatio(f"ratio r_{i + 1} = {ri!r} not in (0, 1)")
    for i, wi in enumerate(mu):
        if not (np.isfinite(wi) and 0.0 < wi < 1.0):
            raise BadWeights(f"weight mu_{i + 1} = {wi!r} not in (0, 1)")
    total = float(np.sum(mu))
    if abs(total - 1.0) > WEIGHT_TOL:
        raise BadWeights(f"weights sum to {total!r}, expected 1")
    for i, bi in enumerate(b):
        if not np.isfinite(bi):
            raise EndpointMismatch(f"offset b_{i + 1} = {bi!r} is not finite")
    if abs(b[0]) > GEOMETRY_TOL:
        raise EndpointMismatch(f"S_1(0) = {b[0]!r}, expected 0")
    if abs(r[-1] + b[-1] - 1.0) > GEOMETRY_TOL:
        raise EndpointMismatch(f"S_N(1) = {r[-1] + b[-1]!r}, expected 1")
    for i in range(len(r) - 1):
        right = r[i] + b[i]
        if right > b[i + 1] + GEOMETRY_TOL:
            raise OverlappingCells(
                f"S_{i + 1}(1) = {right!r} > S_{i + 2}(0) = {b[i + 1]!r}")
    return IFSSpec(tuple(r), tuple(b), tuple(mu))


def lebesgue_spec() -> IFSSpec:
    """Two halves of the unit interval with equal weights (Lebesgue measure)."""
    return validate_ifs((0.5, 0.5), (0.0, 0.5), (0.5, 0.5))


def cantor_spec() -> IFSSpec:
    """Middle-third Cantor set with its natural (Hausdorff) weights."""
    return validate_ifs((1 / 3, 1 / 3), (0.0, 2 / 3), (0.5, 0.5))


# ---------------------------------------------------------------------------
# exponents
# ---------------------------------------------------------------------------

def _decreasing_root(bases: np.ndarray) -> float:
    """Root of ``sum(bases**s) = 1`` in (0, 1) for bases in (0, 1).

    The map is strictly decreasing in s, so a bracketed solver is safe; one
    Newton step afterwards removes the last bits of bracketing error.
    """
    bases = np.asarray(bases, dtype=float)
    logs = np.log(bases)

    def fn(s):
        return float(np.sum(bases ** s)) - 1.0

    lo, hi = 1e-9, 1.0 - 1e-9
    s = brentq(fn, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    deriv = float(np.sum(logs * bases ** s))
    polished = s - fn(s) / deriv
    if abs(fn(polished)) <= abs(fn(s)):
        s = polished
    return float(s)


def hausdorff_dimension(spec: IFSSpec) -> float:
    """Similarity dimension ``d_H``: the root of ``sum r_i**d = 1`` in (0, 1]."""
    r = np.asarray(spec.ratios)
    if abs(np.sum(r) - 1.0) <= GEOMETRY_TOL:
        return 1.0
    return _decreasing_root(r)


def spectral_exponent(spec: IFSSpec) -> float:
    """Weyl exponent ``gamma``: the root of ``sum (mu_i r_i)**g = 1``."""
    return _decreasing_root(np.asarray(spec.weights) * np.asarray(spec.ratios))


def delta_exponent(spec: IFSSpec, gamma: float) -> float:
    """Eigenfunction growth exponent ``max_i log mu_i / (gamma log(mu_i r_i))``."""
    mu = np.asarray(spec.weights)
    r = np.asarray(spec.ratios)
    return float(np.max(np.log(mu) / (gamma * np.log(mu * r))))


@dataclass(frozen=True)
class Exponents:
    """Scaling exponents of an IFS measure.

    ``gamma_delta`` is the on-diagonal heat kernel decay exponent.
    """

    d_H: float
    gamma: float
    delta: float

    @property
    def gamma_delta(self) -> float:
        return self.gamma * self.delta

    @property
    def weyl_slope(self) -> float:
        """Predicted slope of ``log lambda_k`` against ``log k``."""
        return 1.0 / self.gamma

    @property
    def temporal_holder(self) -> float:
        """Essential temporal Hoelder exponent ``1/2 - gamma*delta/2``."""
        return 0.5 - 0.5 * self.gamma_delta


def exponents(spec: IFSSpec) -> Exponents:
    g = spectral_exponent(spec)
    return Exponents(hausdorff_dimension(spec), g, delta_exponent(spec, g))


# ---------------------------------------------------------------------------
# partitions
# ---------------------------------------------------------------------------

def cell_mass(spec: IFSSpec, word: Sequence[int]) -> float:
    """Measure of the cell ``S_word([0,1])``; letters are 1-based."""
    if len(word) == 0:
        raise ValueError("words must be nonempty")
    return float(np.prod([spec.weights[i - 1] for i in word]))


@dataclass(frozen=True)
class LevelPartition:
    """Cells of the level-n stopping-time partition, ordered left to right.

    A word belongs to the partition when its own contraction ratio is at
    most ``r_max**n`` while the ratio of its parent is still larger.

    Attributes
    ----------
    level : int
    words : tuple of tuple of int
        1-based letters.
    left, right, mass : ndarray
        Cell endpoints and measures.
    nodes : ndarray
        Sorted distinct endpoints.
    left_node, right_node : ndarray of int
        Index into ``nodes`` of each cell's endpoints.
    """

    spec: IFSSpec
    level: int
    words: tuple
    left: np.ndarray
    right: np.ndarray
    mass: np.ndarray
    nodes: np.ndarray = field(repr=False)
    left_node: np.ndarray = field(repr=False)
    right_node: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.words)

    @property
    def widths(self) -> np.ndarray:
        return self.right - self.left

    @property
    def threshold(self) -> float:
        """Ratio threshold ``r_max**n`` defining the partition."""
        return self.spec.r_max ** self.level

    def mass_lower_bound(self) -> float:
        """Uniform lower bound ``r_max^(n d) r_min^d nu_min^n`` on cell masses."""
        spec = self.spec
        d = hausdorff_dimension(spec)
        nu = np.asarray(spec.weights) / np.asarray(spec.ratios) ** d
        return float(spec.r_max ** (self.level * d) * spec.r_min ** d
                     * nu.min() ** self.level)

    def containing_cells(self, x: float, tol: float = GEOMETRY_TOL) -> np.ndarray:
        """Indices of the closed cells that contain ``x`` (one or two)."""
        lo = np.searchsorted(self.right, x - tol, side="left")
        hi = np.searchsorted(self.left, x + tol, side="right")
        return np.arange(lo, max(lo, hi))


def _merge_endpoints(left, right, tol):
    pts = np.concatenate([left, right])
    order = np.argsort(pts, kind="stable")
    srt = pts[order]
    new_group = np.empty(len(srt), dtype=bool)
    new_group[0] = True
    new_group[1:] = np.diff(srt) > tol
    group = np.cumsum(new_group) - 1
    nodes = srt[new_group]
    idx = np.empty(len(pts), dtype=np.int64)
    idx[order] = group
    n = len(left)
    return nodes, idx[:n], idx[n:]


def build_partition(spec: IFSSpec, n: int,
                    cap: int = DEFAULT_PARTITION_CAP) -> LevelPartition:
    """Enumerate the level-n partition of the attractor.

    Words are refined one letter at a time; a word stops as soon as its
    ratio drops to ``r_max**n``.  Because the maps are ordered, sorting the
    surviving cells by left endpoint gives lexicographic order.

    Raises
    ------
    PartitionTooLarge
        More than ``cap`` cells would be produced.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"partition level must be a positive integer, got {n!r}")
    n = int(n)
    r = np.asarray(spec.ratios)
    b = np.asarray(spec.offsets)
    mu = np.asarray(spec.weights)
    nmaps = len(r)
    thr = spec.r_max ** n
    # relative slack so that equal-ratio products of n factors meet r**n
    stop = thr * (1.0 + 1e-10)

    words_done, left_done, scale_done, mass_done = [], [], [], []
    words = [()]
    left = np.zeros(1)
    scale = np.ones(1)
    mass = np.ones(1)
    total = 0
    while len(words):
        cl = (left[:, None] + scale[:, None] * b[None, :]).ravel()
        cs = (scale[:, None] * r[None, :]).ravel()
        cm = (mass[:, None] * mu[None, :]).ravel()
        cw = [w + (i + 1,) for w in words for i in range(nmaps)]
        done = cs <= stop
        total += int(done.sum())
        if total > cap:
            raise PartitionTooLarge(
                f"level {n} partition exceeds the cap of {cap} cells")
        if len(cw) - done.sum() > cap:
            raise PartitionTooLarge(
                f"level {n} partition exceeds the cap of {cap} cells")
        idx_done = np.flatnonzero(done)
        words_done.extend(cw[i] for i in idx_done)
        left_done.append(cl[done])
        scale_done.append(cs[done])
        mass_done.append(cm[done])
        keep = np.flatnonzero(~done)
        words = [cw[i] for i in keep]
        left, scale, mass = cl[keep], cs[keep], cm[keep]

    lft = np.concatenate(left_done)
    scl = np.concatenate(scale_done)
    mss = np.concatenate(mass_done)
    order = np.argsort(lft, kind="stable")
    lft, scl, mss = lft[order], scl[order], mss[order]
    rgt = lft + scl
    wds = tuple(words_done[i] for i in order)
    nodes, ln, rn = _merge_endpoints(lft, rgt, tol=1e-9 * float(scl.min()))
    return LevelPartition(spec, n, wds, lft, rgt, mss, nodes, ln, rn)


# ---------------------------------------------------------------------------
# delta approximants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeltaApproximant:
    """Normalised indicator of the level-n cells that contain ``center``.

    Attributes
    ----------
    center : float
    level : int
    cells : tuple of (left, right, mass)
        The one or two support cells.
    height : float
        ``1 / (total support mass)`` so that the function integrates to one.
    """

    center: float
    level: int
    cells: tuple
    height: float

    @property
    def support(self) -> tuple:
        return self.cells[0][0], self.cells[-1][1]

    @property
    def diameter(self) -> float:
        lo, hi = self.support
        return hi - lo

    def node_weights(self, grid: LevelPartition) -> np.ndarray:
        """Quadrature weights ``w`` with ``<f, g>_mu ~= w @ g(nodes)``.

        ``grid`` must be at least as fine as the approximant's level.  Every
        grid cell inside the support hands half of its mass to each of its
        endpoints, which is the same lumping used by the discretisation, so
        the weights sum to one.
        """
        if grid.level < self.level:
            raise ValueError("grid must be at least as fine as the approximant")
        w = np.zeros(len(grid.nodes))
        mid = 0.5 * (grid.left + grid.right)
        inside = np.zeros(len(grid), dtype=bool)
        for lo, hi, _ in self.cells:
            inside |= (mid > lo) & (mid < hi)
        half = 0.5 * grid.mass[inside] * self.height
        np.add.at(w, grid.left_node[inside], half)
        np.add.at(w, grid.right_node[inside], half)
        return w

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for lo, hi, _ in self.cells:
            out = np.where((y >= lo - GEOMETRY_TOL) & (y <= hi + GEOMETRY_TOL),
                           self.height, out)
        return out


def delta_approximant(spec: IFSSpec, partition: LevelPartition | None,
                      x: float, n: int | None = None) -> DeltaApproximant:
    """Build the level-n delta approximant centred at ``x``.

    Membership of ``x`` in the attractor is decided at the resolution of the
    partition: ``x`` must lie in some closed level-n cell.

    Parameters
    ----------
    spec : IFSSpec
    partition : LevelPartition or None
        Level-n partition; built from ``spec`` and ``n`` when omitted.
    x : float
    n : int, optional
        Level, required only when ``partition`` is None.

    Raises
    ------
    NotInSet
        ``x`` lies in a gap of the level-n cover.
    """
    if partition is None:
        if n is None:
            raise ValueError("either a partition or a level is required")
        partition = build_partition(spec, n)
    idx = partition.containing_cells(float(x))
    if len(idx) == 0:
        raise NotInSet(f"x = {x!r} lies in a gap of the level-{partition.level} cover")
    cells = tuple((float(partition.left[i]), float(partition.right[i]),
                   float(partition.mass[i])) for i in idx)
    total = sum(c[2] for c in cells)
    return DeltaApproximant(float(x), partition.level, cells, 1.0 / total)
