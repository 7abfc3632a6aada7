"""Stochastic heat equation driven by space-time white noise on a fractal.

The mild formulation ``u_t = T_t u_0 + int T_{t-s} f(u) ds + int T_{t-s} g(u) dW``
is discretised by one-step semigroup splitting on the node grid:

    u^{m+1} = P_dt [M (u^m + dt f(t_m, u^m))] + P_dt [g(t_m, u^m) dW^m]

where ``P_dt`` is the heat kernel matrix, ``M`` the lumped node masses and
``dW^m_j ~ N(0, m_j dt)`` the white-noise mass of the space-time cell of
node j.  Both coefficients are evaluated at the left end of the step.

Random numbers are counter based.  Path ``p`` owns the Philox stream keyed by
``(seed, p)``; the uniform that drives node ``j`` at step ``s`` sits at a fixed
position of that stream, so any path and step can be regenerated without
touching the others and results never depend on scheduling.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .errors import NoContraction, NonFinite
from .kernel import KernelEvaluator
from .spectral import SpectralBasis

__all__ = [
    "Coefficient",
    "InitialCondition",
    "NoiseModel",
    "FieldState",
    "EnsembleConfig",
    "Ensemble",
    "PicardResult",
    "sample_noise_increments",
    "euler_step",
    "euler_trajectory",
    "simulate_ensemble",
    "picard_reference",
    "coarsen_increments",
    "BLOWUP_LEVEL",
]

BLOWUP_LEVEL = 1e12
_TINY = 2.0 ** -54


# ---------------------------------------------------------------------------
# coefficients and initial data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Coefficient:
    """Closed family of drift / diffusion coefficients ``h(t, u)``.

    ``kind`` is one of ``zero``, ``constant`` (``c``), ``linear`` (``a u``),
    ``affine`` (``a u + c``) and ``sigmoid`` (``scale / (1 + exp(-u))``).
    All members are Lipschitz with linear growth; the sigmoid is also
    bounded and never vanishes.
    """

    kind: str = "zero"
    a: float = 0.0
    c: float = 0.0
    scale: float = 1.0

    KINDS = ("zero", "constant", "linear", "affine", "sigmoid")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        for name in ("a", "c", "scale"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"coefficient parameter {name} must be finite")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, c):
        return cls("constant", c=float(c))

    @classmethod
    def linear(cls, a):
        return cls("linear", a=float(a))

    @classmethod
    def affine(cls, a, c):
        return cls("affine", a=float(a), c=float(c))

    @classmethod
    def bounded_sigmoid(cls, scale):
        return cls("sigmoid", scale=float(scale))

    def __call__(self, t, u):
        u = np.asarray(u, dtype=float)
        k = self.kind
        if k == "zero":
            return np.zeros_like(u)
        if k == "constant":
            return np.full_like(u, self.c)
        if k == "linear":
            return self.a * u
        if k == "affine":
            return self.a * u + self.c
        return self.scale * 0.5 * (1.0 + np.tanh(0.5 * u))

    @property
    def is_zero(self) -> bool:
        return (self.kind == "zero"
                or (self.kind == "constant" and self.c == 0)
                or (self.kind == "linear" and self.a == 0)
                or (self.kind == "affine" and self.a == 0 and self.c == 0)
                or (self.kind == "sigmoid" and self.scale == 0))

    @property
    def lipschitz(self) -> float:
        if self.kind in ("linear", "affine"):
            return abs(self.a)
        if self.kind == "sigmoid":
            return abs(self.scale) / 4.0
        return 0.0

    @property
    def growth(self) -> float:
        """Constant ``M`` with ``|h(t, u)| <= M (1 + |u|)``."""
        if self.kind == "constant":
            return abs(self.c)
        if self.kind == "linear":
            return abs(self.a)
        if self.kind == "affine":
            return max(abs(self.a), abs(self.c))
        if self.kind == "sigmoid":
            return abs(self.scale)
        return 0.0

    @property
    def bounded(self) -> bool:
        return self.kind in ("zero", "constant", "sigmoid") or self.is_zero

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in ("linear", "affine"):
            d["a"] = self.a
        if self.kind in ("constant", "affine"):
            d["c"] = self.c
        if self.kind == "sigmoid":
            d["scale"] = self.scale
        return d


@dataclass(frozen=True)
class InitialCondition:
    """Initial datum: ``constant`` (value ``c``), ``eigenmode`` (mode index
    ``k``, 1-based, times ``amplitude``) or ``piecewise`` (``values`` on the
    intervals delimited by ``breaks``)."""

    kind: str = "constant"
    c: float = 1.0
    k: int = 1
    amplitude: float = 1.0
    breaks: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind == "constant":
            if not (np.isfinite(self.c) and self.c >= 0):
                raise ValueError("constant initial value must be finite and >= 0")
        elif self.kind == "eigenmode":
            if int(self.k) < 1:
                raise ValueError("eigenmode index is 1-based")
        elif self.kind == "piecewise":
            if len(self.values) != len(self.breaks) + 1:
                raise ValueError("piecewise data needs len(values) == len(breaks) + 1")
            if any(v < 0 or not np.isfinite(v) for v in self.values):
                raise ValueError("piecewise values must be finite and >= 0")
            if list(self.breaks) != sorted(self.breaks):
                raise ValueError("breaks must be increasing")
        else:
            raise ValueError(f"unknown initial condition kind {self.kind!r}")

    def evaluate(self, basis: SpectralBasis) -> np.ndarray:
        x = basis.nodes
        if self.kind == "constant":
            u = np.full(len(x), float(self.c))
        elif self.kind == "eigenmode":
            if self.k > basis.n_modes:
                raise ValueError(f"mode {self.k} exceeds the {basis.n_modes} available")
            u = self.amplitude * basis.eigenvectors[:, self.k - 1].copy()
        else:
            idx = np.searchsorted(np.asarray(self.breaks, float), x, side="right")
            u = np.asarray(self.values, float)[idx]
        if basis.bc != "neumann":
            u[0] = u[-1] = 0.0
        return u

    @property
    def is_positive_constant(self) -> bool:
        return self.kind == "constant" and self.c > 0

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "c": self.c}
        if self.kind == "eigenmode":
            return {"kind": "eigenmode", "k": int(self.k), "amplitude": self.amplitude}
        return {"kind": "piecewise", "breaks": list(self.breaks),
                "values": list(self.values)}


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Gaussian white-noise increments on the node cells.

    ``dW[s, j] = sqrt(m_j dt) * Phi^{-1}(U)``, where ``U`` is the uniform at
    position ``s * stride + j`` of the Philox stream keyed by
    ``(seed, path)`` and ``stride`` is the node count rounded up to a
    multiple of four (one Philox counter block holds four draws).
    """

    seed: int
    dt: float
    masses: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n_cells(self) -> int:
        return len(self.masses)

    @property
    def stride(self) -> int:
        return 4 * ((self.n_cells + 3) // 4)

    def generator(self, path: int, step: int = 0) -> np.random.Generator:
        """Generator positioned at the first draw of ``step`` for ``path``."""
        bg = np.random.Philox(key=[int(self.seed), int(path)])
        if step:
            bg.advance(int(step) * (self.stride // 4))
        return np.random.Generator(bg)

    def standard_normals(self, path: int, step: int, n_steps: int = 1) -> np.ndarray:
        u = self.generator(path, step).random((n_steps, self.stride))[:, :self.n_cells]
        return ndtri(np.maximum(u, _TINY))

    def increments(self, path: int, step: int, n_steps: int = 1) -> np.ndarray:
        """``(n_steps, n_cells)`` increments starting at ``step``."""
        return self.standard_normals(path, step, n_steps) * np.sqrt(self.masses * self.dt)


def sample_noise_increments(noise: NoiseModel, step: int, path: int = 0) -> np.ndarray:
    """White-noise increments of one path over one time step."""
    if step < 0:
        raise ValueError("step index must be nonnegative")
    return noise.increments(path, step, 1)[0]


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` steps (noise of a coarser step)."""
    inc = np.asarray(increments)
    if inc.shape[0] % factor:
        raise ValueError("step count is not divisible by the coarsening factor")
    return inc.reshape(inc.shape[0] // factor, factor, *inc.shape[1:]).sum(axis=1)


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FieldState:
    """Solution values on the grid nodes at time ``t``."""

    t: float
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NonFinite(f"non-finite field at t = {self.t}")


def _advance(p, masses, u, t, dt, f, g, dw):
    """One splitting step for a stack of fields ``u`` (rows are paths)."""
    forcing = u if f.is_zero else u + dt * f(t, u)
    rhs = forcing * masses
    if not g.is_zero:
        rhs = rhs + g(t, u) * dw
    return rhs @ p  # p is symmetric


def euler_step(evaluator: KernelEvaluator, state: FieldState, f: Coefficient,
               g: Coefficient, increments: np.ndarray, dt: float) -> FieldState:
    """Advance one field by one step of the splitting scheme.

    Raises
    ------
    TimeTooSmall
        ``dt`` below the evaluator's ``t_min``.
    NonFinite
        Some node exceeds the blow-up level.
    """
    p = evaluator.matrix(dt)
    u = _advance(p, evaluator.masses, np.asarray(state.values, float), state.t, dt,
                 f, g, np.asarray(increments, float))
    bad = ~np.isfinite(u) | (np.abs(u) > BLOWUP_LEVEL)
    if bad.any():
        node = int(np.flatnonzero(bad)[0])
        raise NonFinite(f"blow-up at t = {state.t + dt}, node {node}", node=node)
    return FieldState(state.t + dt, u)


def euler_trajectory(evaluator: KernelEvaluator, u0: np.ndarray, f: Coefficient,
                     g: Coefficient, increments: np.ndarray, dt: float) -> np.ndarray:
    """Run the scheme with prescribed increments; returns ``(steps + 1, N)``."""
    p = evaluator.matrix(dt)
    m = evaluator.masses
    out = np.empty((len(increments) + 1, len(u0)))
    out[0] = u0
    u = np.asarray(u0, float)
    for s, dw in enumerate(increments):
        u = _advance(p, m, u, s * dt, dt, f, g, dw)
        out[s + 1] = u
    return out


@dataclass(frozen=True)
class EnsembleConfig:
    """Parameters of an ensemble run.

    Attributes
    ----------
    T, dt : float
        Horizon and step; ``T / dt`` must be an integer.
    paths : int
    seed : int
        Master seed (unsigned 64-bit).
    f, g : Coefficient
    u0 : InitialCondition
    output_times : tuple of float
        Multiples of ``dt`` in ``[0, T]``; defaults to ``(0, T)``.
    chunk_paths : int
        Paths advanced together; affects speed only.
    block_steps : int
        Steps of noise drawn per generator call; affects speed only.
    on_blowup : str
        ``"raise"`` aborts the run; ``"record"`` marks the path as blown up
        (its later values become NaN) and carries on.
    """

    T: float
    dt: float
    paths: int
    seed: int = 0
    f: Coefficient = Coefficient()
    g: Coefficient = Coefficient()
    u0: InitialCondition = InitialCondition()
    output_times: tuple = ()
    chunk_paths: int = 512
    block_steps: int = 64
    on_blowup: str = "raise"

    def __post_init__(self):
        if not (self.T > 0 and self.dt > 0):
            raise ValueError("T and dt must be positive")
        if self.paths < 1:
            raise ValueError("at least one path is required")
        if self.on_blowup not in ("raise", "record"):
            raise ValueError("on_blowup must be 'raise' or 'record'")
        self.step_indices()

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"T = {self.T} is not a multiple of dt = {self.dt}")
        return n

    def step_indices(self) -> np.ndarray:
        times = self.output_times or (0.0, self.T)
        idx = []
        for t in times:
            s = int(round(t / self.dt))
            if abs(s * self.dt - t) > 1e-9 * max(self.T, 1.0) or not 0 <= s <= self.n_steps:
                raise ValueError(f"output time {t} is not a grid time in [0, T]")
            idx.append(s)
        if sorted(set(idx)) != idx:
            raise ValueError("output times must be strictly increasing")
        return np.asarray(idx)

    def fingerprint_dict(self) -> dict:
        return {"T": self.T, "dt": self.dt, "paths": self.paths, "seed": self.seed,
                "f": self.f.to_dict(), "g": self.g.to_dict(), "u0": self.u0.to_dict(),
                "output_times": [float(t) for t in (self.output_times or (0.0, self.T))]}


def _canonical_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class Ensemble:
    """Simulated paths sampled at the output times.

    Attributes
    ----------
    values : ndarray, shape (paths, n_times, n_nodes)
    resolution : float, optional
        Largest cell width of the underlying partition.
    blowups : tuple of (path, step)
        Paths aborted by the blow-up guard (``on_blowup="record"`` only).
    """

    config: EnsembleConfig
    times: np.ndarray
    nodes: np.ndarray
    masses: np.ndarray
    values: np.ndarray = field(repr=False)
    fingerprint: str
    bc: str = "neumann"
    level: int | None = None
    resolution: float | None = None
    blowups: tuple = ()

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def path_keys(self):
        """Philox key ``(seed, path)`` of every path."""
        return [(self.config.seed, p) for p in range(self.n_paths)]

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t = {t} is not an output time")
        return i

    def node_index(self, x: float) -> int:
        i = int(np.argmin(np.abs(self.nodes - x)))
        if abs(self.nodes[i] - x) > 1e-9:
            raise ValueError(f"x = {x} is not a grid node")
        return i

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.times, self.nodes, self.values):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def manifest(self) -> dict:
        return {"fingerprint": self.fingerprint, "seed": int(self.config.seed),
                "paths": int(self.n_paths), "content_hash": self.content_hash(),
                "blowups": [list(b) for b in self.blowups]}

    def records(self):
        """Rows ``(path, t, x, u)`` for the trajectory CSV."""
        rows = []
        for p in range(self.n_paths):
            for i, t in enumerate(self.times):
                for j, x in enumerate(self.nodes):
                    rows.append((p, float(t), float(x), float(self.values[p, i, j])))
        return rows


def _thread_count(threads):
    if threads is None:
        env = os.environ.get("FSL_THREADS")
        if env:
            threads = int(env)
        else:
            threads = os.cpu_count() or 1
    return max(1, int(threads))


def simulate_ensemble(config: EnsembleConfig, evaluator: KernelEvaluator,
                      threads: int | None = None) -> Ensemble:
    """Simulate independent paths of the splitting scheme.

    Paths are processed in fixed chunks that may run on several threads;
    every path reads only its own random stream, so the output is identical
    for any thread count.

    Raises
    ------
    NonFinite
        Blow-up with ``on_blowup="raise"``; message names path and step.
    """
    cfg = config
    p = evaluator.matrix(cfg.dt)
    basis = evaluator.basis
    m = evaluator.masses
    n_nodes = len(m)
    u0 = cfg.u0.evaluate(basis)
    noise = NoiseModel(cfg.seed, cfg.dt, m)
    out_idx = cfg.step_indices()
    n_steps = cfg.n_steps
    values = np.empty((cfg.paths, len(out_idx), n_nodes))
    need_noise = not cfg.g.is_zero
    blowups = []

    def run_chunk(start):
        stop = min(start + cfg.chunk_paths, cfg.paths)
        rows = stop - start
        u = np.tile(u0, (rows, 1))
        alive = np.ones(rows, dtype=bool)
        local_blowups = []
        k = 0
        if out_idx[0] == 0:
            values[start:stop, 0] = u
            k = 1
        step = 0
        while step < n_steps:
            nblk = min(cfg.block_steps, n_steps - step)
            if need_noise:
                z = np.stack([noise.standard_normals(q, step, nblk)
                              for q in range(start, stop)], axis=1)
                z *= np.sqrt(m * cfg.dt)
            for b in range(nblk):
                dw = z[b] if need_noise else None
                u = _advance(p, m, u, step * cfg.dt, cfg.dt, cfg.f, cfg.g, dw)
                step += 1
                with np.errstate(invalid="ignore"):
                    bad = alive & ~(np.abs(u) <= BLOWUP_LEVEL).all(axis=1)
                if bad.any():
                    for r in np.flatnonzero(bad):
                        if cfg.on_blowup == "raise":
                            node = int(np.flatnonzero(~(np.abs(u[r]) <= BLOWUP_LEVEL))[0])
                            raise NonFinite(
                                f"path {start + r} blew up at step {step} "
                                f"(t = {step * cfg.dt:g}), node {node}",
                                path=start + r, step=step, node=node)
                        local_blowups.append((start + int(r), step))
                    alive &= ~bad
                    u[~alive] = np.nan
                if k < len(out_idx) and out_idx[k] == step:
                    values[start:stop, k] = u
                    k += 1
        return local_blowups

    starts = list(range(0, cfg.paths, cfg.chunk_paths))
    nthreads = min(_thread_count(threads), len(starts))
    if nthreads > 1:
        with ThreadPoolExecutor(max_workers=nthreads) as pool:
            for res in pool.map(run_chunk, starts):
                blowups.extend(res)
    else:
        for s in starts:
            blowups.extend(run_chunk(s))
    times = out_idx * cfg.dt
    fp = _canonical_hash({"config": cfg.fingerprint_dict(), "bc": basis.bc,
                          "nodes": len(basis.nodes), "modes": basis.n_modes,
                          "tolerance": evaluator.tolerance})
    prob = basis.problem
    level = prob.level if prob is not None else None
    resolution = prob.resolution if prob is not None else None
    return Ensemble(cfg, times, basis.nodes, m, values, fp, basis.bc, level,
                    resolution, tuple(sorted(blowups)))


# ---------------------------------------------------------------------------
# Picard iteration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PicardResult:
    """Fixed point of the discrete mild equation.

    Attributes
    ----------
    values : ndarray, shape (steps + 1, n_nodes)
    distances : ndarray
        Sup-norm distance between successive iterates.
    ratios : ndarray
        Ratios of successive distances.
    """

    times: np.ndarray
    values: np.ndarray
    iterations: int
    distances: np.ndarray
    ratios: np.ndarray


def picard_reference(evaluator: KernelEvaluator, u0: np.ndarray, f: Coefficient,
                     g: Coefficient, increments: np.ndarray, dt: float,
                     tol: float = 1e-12, max_iter: int = 500,
                     burn_in: int = 10, max_cells: int = 64,
                     max_steps: int = 256) -> PicardResult:
    """Solve the discretised mild equation by Picard iteration.

    The iteration map sends a space-time field ``u`` to

        u(t_m) = T_{t_m} u_0 + sum_{j<m} T_{(m-j) dt} [M (dt f(u_j)) + g(u_j) dW_j],

    with the same frozen increments throughout, starting from ``u = 0``.
    All heat semigroups are evaluated exactly in the spectral basis.

    Raises
    ------
    NoContraction
        The distance between iterates grows after ``burn_in`` iterations or
        ``max_iter`` is exhausted.
    """
    basis = evaluator.basis
    inc = np.asarray(increments, float)
    steps, n_nodes = inc.shape
    if n_nodes - 1 > max_cells:
        raise ValueError(f"Picard reference limited to {max_cells} cells")
    if steps > max_steps:
        raise ValueError(f"Picard reference limited to {max_steps} steps")
    phi = basis.eigenvectors
    lam = basis.eigenvalues
    m = basis.masses
    t = np.arange(steps + 1) * dt
    # conv[k, i, j] = exp(-lam_k (i - j) dt) for j < i, zero otherwise
    lag = np.arange(steps + 1)[:, None] - np.arange(steps)[None, :]
    mask = lag > 0
    decay = np.where(mask[None], np.exp(-lam[:, None, None] * np.where(mask, lag, 0) * dt), 0.0)
    free = np.exp(-np.outer(t, lam)) * (phi.T @ (m * u0))

    u = np.zeros((steps + 1, n_nodes))
    distances = []
    for it in range(1, max_iter + 1):
        src = m * (dt * f(t[:-1, None], u[:-1])) + g(t[:-1, None], u[:-1]) * inc
        beta = src @ phi  # (steps, K)
        modal = free + np.einsum("kij,jk->ik", decay, beta)
        new = modal @ phi.T
        if not np.all(np.isfinite(new)):
            raise NonFinite(f"Picard iterate {it} is not finite")
        dist = float(np.abs(new - u).max())
        distances.append(dist)
        u = new
        if dist < tol:
            break
        if it > burn_in and dist > distances[-2]:
            raise NoContraction(
                f"iterate distance grew from {distances[-2]:.3e} to {dist:.3e} "
                f"at iteration {it}")
    else:
        raise NoContraction(f"no convergence to {tol} within {max_iter} iterations "
                            f"(last distance {distances[-1]:.3e})")
    d = np.asarray(distances)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = d[1:] / d[:-1]
    return PicardResult(t, u, len(d), d, ratios)
