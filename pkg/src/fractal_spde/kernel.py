"""Heat kernel, semigroup and resolvent built from a spectral basis.

``p_t(x, y) = sum_k exp(-lam_k t) phi_k(x) phi_k(y)`` is truncated at the
smallest number of modes whose tail is provably below a tolerance.  The
tail of the modes that are present is summed exactly using their sup-norms;
modes beyond the basis are bounded through the fitted Weyl constants
``lam_k >= C0 k^(1/gamma)`` and ``|phi_k|_inf <= C2 k^(delta/2)``.  When the
basis is complete there is no such remainder.

The module also provides numerical checks of the standard kernel estimates:
on-diagonal decay, spatial and temporal regularity, the Laplace transform
relation with the resolvent and the delta-approximation bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import NonpositiveLambda, TimeTooSmall, WindowTooSmall
from .ifs import Exponents, LevelPartition, delta_approximant
from .spectral import (
    NEUMANN,
    SpectralBasis,
    _linear_fit,
    asymptotics_report,
)

__all__ = [
    "KernelEvaluator",
    "BoundsReport",
    "DeltaResolventReport",
    "kernel_value",
    "semigroup_apply",
    "resolvent_matrix",
    "resolvent_value",
    "laplace_check",
    "lipschitz_constant",
    "delta_resolvent_check",
    "kernel_bounds_report",
    "kernel_records",
    "mass_defect",
    "chapman_kolmogorov_error",
    "one_to_inf_norm",
]

DEFAULT_TOLERANCE = 1e-8
DEFAULT_T_MIN = 1e-4
MIDPOINT_STEPS = 2 ** 8


def _interp_weights(nodes: np.ndarray, x):
    """Left index and linear weight for points ``x`` (clamped to [0, 1])."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    j = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    w = (x - nodes[j]) / (nodes[j + 1] - nodes[j])
    return j, np.clip(w, 0.0, 1.0)


def _sample(nodes: np.ndarray, values: np.ndarray, x) -> np.ndarray:
    """Piecewise-linear evaluation of nodal ``values`` along axis 0."""
    j, w = _interp_weights(nodes, x)
    if values.ndim == 1:
        return (1 - w) * values[j] + w * values[j + 1]
    return (1 - w)[:, None] * values[j] + w[:, None] * values[j + 1]


class KernelEvaluator:
    """Truncated spectral heat kernel on the grid nodes.

    Parameters
    ----------
    basis : SpectralBasis
    tolerance : float
        Uniform bound on the truncation error of ``p_t(x, y)``.
    t_min : float
        Smallest admissible time.
    exponents : Exponents, optional
        Needed only when the basis is incomplete; defaults to
        ``basis.exponents``.
    """

    def __init__(self, basis: SpectralBasis, tolerance: float = DEFAULT_TOLERANCE,
                 t_min: float = DEFAULT_T_MIN, exponents: Exponents | None = None):
        if tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if t_min <= 0:
            raise ValueError("t_min must be positive")
        self.basis = basis
        self.tolerance = float(tolerance)
        self.t_min = float(t_min)
        self.exponents = exponents if exponents is not None else basis.exponents
        self._sup2 = basis.sup_norms ** 2
        self._cache: dict = {}
        self.weyl_constants = None
        if not basis.complete:
            if self.exponents is None:
                raise ValueError("an incomplete basis needs exponents for the tail bound")
            rep = asymptotics_report(basis, self.exponents)
            self.weyl_constants = (rep.constants["C0"], rep.constants["C2"])

    @property
    def nodes(self) -> np.ndarray:
        return self.basis.nodes

    @property
    def masses(self) -> np.ndarray:
        return self.basis.masses

    def remainder_bound(self, t: float) -> float:
        """Bound on the contribution of modes missing from the basis."""
        if self.weyl_constants is None:
            return 0.0
        c0, c2 = self.weyl_constants
        g, d = self.exponents.gamma, self.exponents.delta
        total = 0.0
        k0 = self.basis.n_modes + 1
        chunk = 4096
        while True:
            k = np.arange(k0, k0 + chunk, dtype=float)
            terms = c2 ** 2 * k ** d * np.exp(-c0 * k ** (1.0 / g) * t)
            total += float(terms.sum())
            if terms[-1] < 1e-30 * max(total, 1e-300) or k0 > 1e8:
                break
            k0 += chunk
        return total

    def n_terms(self, t: float) -> int:
        """Smallest mode count meeting the tolerance at time ``t``.

        Raises
        ------
        TimeTooSmall
        """
        t = float(t)
        if t < self.t_min:
            raise TimeTooSmall(f"t = {t!r} is below t_min = {self.t_min!r}")
        rest = self.remainder_bound(t)
        if rest > self.tolerance:
            raise TimeTooSmall(
                f"t = {t!r}: tail beyond {self.basis.n_modes} modes is "
                f"{rest:.3e} > tolerance {self.tolerance:.1e}")
        terms = np.exp(-self.basis.eigenvalues * t) * self._sup2
        # tail[K] = sum of the terms with index >= K (0-based)
        tail = np.concatenate([np.cumsum(terms[::-1])[::-1], [0.0]]) + rest
        return int(np.argmax(tail <= self.tolerance))

    def truncation_error(self, t: float) -> float:
        k = self.n_terms(t)
        terms = np.exp(-self.basis.eigenvalues * t) * self._sup2
        return float(terms[k:].sum() + self.remainder_bound(t))

    def _modes(self, t: float):
        k = max(self.n_terms(t), 1)
        return self.basis.eigenvectors[:, :k], np.exp(-self.basis.eigenvalues[:k] * t)

    def matrix(self, t: float) -> np.ndarray:
        """Kernel matrix ``P[i, j] = p_t(x_i, x_j)``; exactly symmetric."""
        key = float(t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        phi, decay = self._modes(t)
        half = phi * np.sqrt(decay)
        p = half @ half.T
        p = 0.5 * (p + p.T)
        p.setflags(write=False)
        if len(self._cache) > 16:
            self._cache.clear()
        self._cache[key] = p
        return p

    def diagonal(self, t: float) -> np.ndarray:
        phi, decay = self._modes(t)
        return (phi ** 2) @ decay

    def value(self, t: float, x, y) -> np.ndarray:
        """``p_t`` at coordinates, interpolated linearly between nodes."""
        phi, decay = self._modes(t)
        fx = _sample(self.nodes, phi, x)
        fy = _sample(self.nodes, phi, y)
        out = np.sum(fx * fy * decay, axis=-1)
        return out if out.size > 1 else float(out[0])

    def apply(self, t: float, field_values: np.ndarray) -> np.ndarray:
        """``T_t h``; at ``t = 0`` the projection onto all modes."""
        if t == 0:
            return self.basis.coefficients(field_values) @ self.basis.eigenvectors.T
        phi, decay = self._modes(t)
        c = self.basis.coefficients(field_values)[..., :phi.shape[1]]
        return (c * decay) @ phi.T


def kernel_value(evaluator: KernelEvaluator, t: float, x, y):
    """Heat kernel ``p_t(x, y)`` (coordinates, linear between nodes)."""
    return evaluator.value(t, x, y)


def semigroup_apply(evaluator: KernelEvaluator, t: float, field_values) -> np.ndarray:
    """Apply the heat semigroup to a nodal field (or a stack of fields)."""
    return evaluator.apply(t, np.asarray(field_values, dtype=float))


def mass_defect(evaluator: KernelEvaluator, t: float) -> np.ndarray:
    """Row integrals ``sum_y p_t(x, y) m_y - 1`` for every node."""
    return evaluator.matrix(t) @ evaluator.masses - 1.0


def chapman_kolmogorov_error(evaluator: KernelEvaluator, s: float, t: float) -> float:
    """``max |sum_z p_s(x,z) p_t(z,y) m_z - p_{s+t}(x,y)|``."""
    ps, pt = evaluator.matrix(s), evaluator.matrix(t)
    return float(np.abs((ps * evaluator.masses) @ pt - evaluator.matrix(s + t)).max())


def one_to_inf_norm(evaluator: KernelEvaluator, t: float) -> float:
    """``sup_h |T_t h|_inf / |h|_1`` over the discrete measure.

    On a discrete measure the supremum is attained at normalised point
    masses, ``h = e_j / m_j``, for which ``T_t h = p_t(., x_j)``.
    """
    m = evaluator.masses
    best = 0.0
    for start in range(0, len(m), 256):
        j = np.arange(start, min(start + 256, len(m)))
        h = np.zeros((len(j), len(m)))
        h[np.arange(len(j)), j] = 1.0 / m[j]
        best = max(best, float(np.abs(evaluator.apply(t, h)).max()))
    return best


# ---------------------------------------------------------------------------
# resolvent
# ---------------------------------------------------------------------------

def _check_lambda(lam):
    if not lam > 0:
        raise NonpositiveLambda(f"resolvent parameter must be positive, got {lam!r}")


def resolvent_matrix(basis: SpectralBasis, lam: float = 1.0) -> np.ndarray:
    """``rho_lam(x_i, x_j) = sum_k phi_k(x_i) phi_k(x_j) / (lam + lam_k)``."""
    _check_lambda(lam)
    phi = basis.eigenvectors
    r = (phi / (lam + basis.eigenvalues)) @ phi.T
    return 0.5 * (r + r.T)


def resolvent_value(basis: SpectralBasis, lam: float, x, y):
    """Resolvent density at coordinates (linear between nodes)."""
    _check_lambda(lam)
    fx = _sample(basis.nodes, basis.eigenvectors, x)
    fy = _sample(basis.nodes, basis.eigenvectors, y)
    out = np.sum(fx * fy / (lam + basis.eigenvalues), axis=-1)
    return out if out.size > 1 else float(out[0])


def laplace_check(evaluator: KernelEvaluator, pairs, lam: float = 1.0,
                  t_lo: float = 1e-4, t_hi: float = 50.0):
    """Compare quadrature of ``exp(-lam t) p_t(x, y)`` with the series.

    The integral over ``[t_lo, t_hi]`` is computed by adaptive quadrature in
    ``log t``.  It is compared against the resolvent series restricted to
    the same window, ``sum_k phi phi (e^{-a t_lo} - e^{-a t_hi}) / a`` with
    ``a = lam + lam_k``.  The part of the full resolvent outside the window
    is returned separately so the two routes can be reconciled.

    Parameters
    ----------
    pairs : sequence of (i, j)
        Node index pairs.

    Returns
    -------
    list of dict
        Keys ``i, j, quadrature, series_window, series_full, outside``.
    """
    _check_lambda(lam)
    b = evaluator.basis
    out = []
    for i, j in pairs:
        prod = b.eigenvectors[i] * b.eigenvectors[j]

        def integrand(u):
            t = np.exp(u)
            phi, decay = evaluator._modes(t)
            k = len(decay)
            return np.exp(-lam * t) * float(prod[:k] @ decay) * t

        val, _ = quad(integrand, np.log(t_lo), np.log(t_hi), epsabs=1e-11,
                      epsrel=1e-10, limit=400)
        a = lam + b.eigenvalues
        window = float(np.sum(prod * (np.exp(-a * t_lo) - np.exp(-a * t_hi)) / a))
        full = float(np.sum(prod / a))
        out.append(dict(i=int(i), j=int(j), quadrature=val, series_window=window,
                        series_full=full, outside=full - window))
    return out


def lipschitz_constant(nodes: np.ndarray, kernel_matrix: np.ndarray) -> float:
    """Largest slope of ``y -> K(x, y)`` between neighbouring nodes.

    This is the Lipschitz constant of the piecewise-linear interpolant,
    maximised over the rows.
    """
    slopes = np.abs(np.diff(kernel_matrix, axis=1)) / np.diff(nodes)[None, :]
    return float(slopes.max())


@dataclass(frozen=True)
class DeltaResolventReport:
    """Delta-approximation errors and their bounds.

    ``error`` and ``bound`` compare the smoothed resolvent with its point
    value; ``time_error`` and ``time_bound`` the time-integrated heat kernel
    error; ``convolution_lhs`` and ``convolution_rhs`` the energy inequality
    for ``h = f_n^x - f_m^x``.
    """

    x1: float
    x2: float
    m: int
    n: int
    lipschitz: float
    error: float
    bound: float
    time_horizon: float
    time_error: float
    time_bound: float
    convolution_lhs: float
    convolution_rhs: float

    @property
    def ratio(self) -> float:
        return self.error / self.bound

    @property
    def passed(self) -> bool:
        return (self.error <= self.bound and self.time_error <= self.time_bound
                and self.convolution_lhs <= self.convolution_rhs * (1 + 1e-12))


def _midpoint_energy(coef: np.ndarray, eig: np.ndarray, gram: np.ndarray,
                     t: float, steps: int = MIDPOINT_STEPS) -> float:
    """Midpoint rule in time for ``int_0^t |sum_k c_k e^{-lam_k s} phi_k|^2 ds``.

    The spatial integral is the node-mass sum, evaluated through the Gram
    matrix ``Phi^T M Phi`` of the basis.
    """
    ds = t / steps
    s = (np.arange(steps) + 0.5) * ds
    a = np.exp(-np.outer(s, eig)) * coef
    return float(np.sum((a @ gram) * a) * ds)


def delta_resolvent_check(basis: SpectralBasis, grid: LevelPartition,
                          x1: float, x2: float, m: int, n: int,
                          lipschitz: float | None = None, t: float = 1.0,
                          resolvent: np.ndarray | None = None,
                          gram: np.ndarray | None = None) -> DeltaResolventReport:
    """Quantify how well delta approximants reproduce point evaluations.

    Parameters
    ----------
    basis : SpectralBasis
        Complete basis on the nodes of ``grid``.
    grid : LevelPartition
        Partition the basis was built on; must be at least as fine as
        levels ``m`` and ``n``.
    x1, x2 : float
        Centres in the attractor.
    m, n : int
        Levels of the approximants centred at ``x1`` and ``x2``.
    lipschitz : float, optional
        Lipschitz constant of the unit resolvent; estimated from the grid
        when omitted.
    t : float
        Horizon of the time-integrated check.
    resolvent, gram : ndarray, optional
        Precomputed unit resolvent matrix and basis Gram matrix, for reuse
        across calls.

    Raises
    ------
    NotInSet
    """
    spec = grid.spec
    r = spec.r_max
    rho = resolvent if resolvent is not None else resolvent_matrix(basis, 1.0)
    L1 = lipschitz if lipschitz is not None else lipschitz_constant(basis.nodes, rho)
    f1 = delta_approximant(spec, grid if grid.level == m else None, x1, m)
    f2 = delta_approximant(spec, grid if grid.level == n else None, x2, n)
    w1 = f1.node_weights(grid)
    w2 = f2.node_weights(grid)
    smoothed = float(w1 @ rho @ w2)
    j1, a1 = _interp_weights(basis.nodes, x1)
    j2, a2 = _interp_weights(basis.nodes, x2)
    e1 = np.zeros(len(basis.nodes))
    e1[j1] += 1 - a1
    e1[j1 + 1] += a1
    e2 = np.zeros(len(basis.nodes))
    e2[j2] += 1 - a2
    e2[j2 + 1] += a2
    point = float(e1 @ rho @ e2)
    error = abs(smoothed - point)
    bound = 2.0 * L1 * (r ** n + r ** m)

    phi = basis.eigenvectors
    eig = basis.eigenvalues
    # heat kernel smoothed in its first slot, minus the point value at x2
    coef = phi.T @ w2 - phi.T @ e2
    if gram is None:
        gram = basis.gram()
    time_error = _midpoint_energy(coef, eig, gram, t)
    time_bound = 4.0 * L1 * np.exp(2.0 * t) * r ** n

    fm = delta_approximant(spec, None, x2, m).node_weights(grid)
    h = w2 - fm
    ch = phi.T @ h
    lhs = _midpoint_energy(ch, eig, gram, t)
    rhs = 0.5 * np.exp(2.0 * t) * float(h @ rho @ h)
    return DeltaResolventReport(float(x1), float(x2), int(m), int(n), L1, error,
                                bound, float(t), time_error, float(time_bound),
                                lhs, rhs)


# ---------------------------------------------------------------------------
# kernel estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    """Outcome of one numerical check; ``value`` is the worst observed ratio
    or deviation."""

    passed: bool
    value: float
    note: str = ""


@dataclass(frozen=True)
class BoundsReport:
    """Empirical counterparts of the heat kernel and resolvent constants.

    Attributes
    ----------
    decay : ExponentReport-like tuple
        (predicted slope, fitted slope, stderr, rms residual).
    C5, C6, C7, C11, L1 : float
        Fitted constants of the on-diagonal bound, the spatial and temporal
        regularity bounds, the global-in-time bound and the resolvent
        Lipschitz constant.
    checks : dict
        Name to :class:`CheckResult`.
    """

    predicted_slope: float
    fitted_slope: float
    slope_stderr: float
    slope_residual: float
    C5: float
    C6: float
    C7: float
    C11: float
    L1: float
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def summary(self) -> str:
        lines = [
            f"on-diagonal decay slope: fitted {self.fitted_slope:.6f} "
            f"(stderr {self.slope_stderr:.2e}), predicted {self.predicted_slope:.6f}",
            f"C5 = {self.C5:.6g}  C6 = {self.C6:.6g}  C7 = {self.C7:.6g}  "
            f"C11 = {self.C11:.6g}  L1 = {self.L1:.6g}",
        ]
        for name, c in self.checks.items():
            flag = "PASS" if c.passed else "FAIL"
            extra = f"  {c.note}" if c.note else ""
            lines.append(f"[{flag}] {name}: {c.value:.6g}{extra}")
        return "\n".join(lines)

    def constant_records(self):
        return [("C5", self.C5), ("C6", self.C6), ("C7", self.C7),
                ("C11", self.C11), ("L1", self.L1),
                ("decay_slope", self.fitted_slope),
                ("decay_slope_predicted", self.predicted_slope)]


def kernel_bounds_report(evaluator: KernelEvaluator, exponents: Exponents | None = None,
                         T: float = 0.1, times=None, t_low: float = 1e-3,
                         slope_tolerance: float = 0.10,
                         global_horizon: float = 50.0) -> BoundsReport:
    """Fit the decay and regularity constants of the heat kernel.

    Parameters
    ----------
    evaluator : KernelEvaluator
    exponents : Exponents, optional
    T : float
        Upper end of the decay window ``[t_low, T]``.
    times : array_like, optional
        Explicit time grid; 21 log-spaced points by default.
    slope_tolerance : float
        Relative tolerance of the decay slope check.

    Notes
    -----
    The kernel matrix is positive semidefinite, so the supremum over
    ``(x, y)`` is attained on the diagonal.
    """
    ex = exponents if exponents is not None else evaluator.exponents
    if ex is None:
        raise ValueError("exponents are required")
    gd = ex.gamma_delta
    t_low = max(t_low, evaluator.t_min)
    if times is None:
        times = np.geomspace(t_low, T, 21)
    times = np.asarray(sorted(times), dtype=float)
    if len(times) < 4:
        raise WindowTooSmall("at least 4 time points are needed")
    nodes = evaluator.nodes
    diag = np.array([evaluator.diagonal(t) for t in times])
    sup = diag.max(axis=1)
    slope, _, se, rms = _linear_fit(np.log(times), np.log(sup))
    c5 = float(np.max(sup * times ** gd))

    c6 = 0.0
    offsets = [1, 2, 4, 8, 16, 32, 64]
    for t in times:
        p = evaluator.matrix(t)
        scale = t ** (-0.5 - 0.5 * gd)
        for s in offsets:
            if s >= len(nodes):
                break
            dx = np.sqrt(nodes[s:] - nodes[:-s])
            diff = np.abs(p[s:] - p[:-s]).max(axis=1)
            c6 = max(c6, float(np.max(diff / dx) / scale))

    ds = np.diff(diag, axis=0)
    worst_increase = float(ds.max()) if ds.size else 0.0
    monotone = worst_increase <= 1e-12 * float(sup.max())
    c7 = 0.0
    for a in range(len(times)):
        for b2 in range(a + 1, len(times)):
            denom = times[a] ** (-gd) - times[b2] ** (-gd)
            c7 = max(c7, float(np.max(np.abs(diag[a] - diag[b2])) / denom))

    glob_t = np.geomspace(t_low, global_horizon, 25)
    glob_sup = np.array([evaluator.diagonal(t).max() for t in glob_t])
    c11 = float(np.max(glob_sup / (1.0 + glob_t ** (-gd))))

    rho = resolvent_matrix(evaluator.basis, 1.0)
    L1 = lipschitz_constant(nodes, rho)

    checks = {}
    rel = abs(slope + gd) / gd
    checks["decay_slope"] = CheckResult(rel <= slope_tolerance, rel,
                                        f"relative error vs -{gd:.6f}")
    checks["diagonal_nonincreasing"] = CheckResult(monotone, worst_increase)
    mass_t = np.geomspace(max(1e-3, evaluator.t_min), 10.0, 13)
    if evaluator.basis.bc == NEUMANN:
        md = max(float(np.abs(mass_defect(evaluator, t)).max()) for t in mass_t)
        checks["mass_conservation"] = CheckResult(md <= 1e-8, md)
    else:
        md = max(float(mass_defect(evaluator, t).max()) for t in mass_t)
        checks["mass_subconservation"] = CheckResult(md <= 1e-8, md)
    ck = chapman_kolmogorov_error(evaluator, 0.1, 0.1)
    checks["chapman_kolmogorov"] = CheckResult(ck <= 1e-6, ck)
    pos_t = [t for t in (1e-2, 1e-1, 1.0) if t >= evaluator.t_min]
    neg = max(float(-evaluator.matrix(t).min()) for t in pos_t)
    checks["positivity"] = CheckResult(neg <= evaluator.tolerance, max(neg, 0.0))
    t_mid = float(times[len(times) // 2])
    opn = one_to_inf_norm(evaluator, t_mid)
    gap = abs(opn - float(evaluator.matrix(t_mid).max()))
    checks["operator_norm_identity"] = CheckResult(gap <= 1e-12 * opn, gap)
    checks["finite_constants"] = CheckResult(
        bool(np.all(np.isfinite([c5, c6, c7, c11, L1]))), max(c5, c6, c7, c11, L1))
    return BoundsReport(-gd, slope, se, rms, c5, c6, c7, c11, L1, checks)


def kernel_records(evaluator: KernelEvaluator, times, node_indices=None):
    """Rows ``(t, x, y, value)`` of the kernel CSV."""
    nodes = evaluator.nodes
    idx = np.arange(len(nodes)) if node_indices is None else np.asarray(node_indices)
    rows = []
    for t in times:
        p = evaluator.matrix(t)
        for i in idx:
            for j in idx:
                rows.append((float(t), float(nodes[i]), float(nodes[j]), float(p[i, j])))
    return rows
