"""Discrete spectral theory of the measure-geometric Laplacian.

The operator ``d/dmu d/dx`` is discretised as a Stieltjes string: the nodes
are the partition cell endpoints, each cell hands half of its mass to either
endpoint, and neighbouring nodes are coupled by springs of stiffness
``1/h`` where ``h`` is the Euclidean gap (gaps of the fractal carry length
but no mass).  With difference matrix ``D``, spring weights ``W`` and
lumped masses ``M`` the generalised problem reads

    K phi = lam M phi,    K = D^T W D.

Writing ``B = W^(1/2) D M^(-1/2)`` gives ``M^(-1/2) K M^(-1/2) = B^T B``,
so the eigenpairs follow from the singular value decomposition of a
bidiagonal matrix.  This keeps full relative accuracy for the small
eigenvalues and produces an exactly zero Neumann ground state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConvergenceFailure, DegeneratePartition, WindowTooSmall
from .ifs import Exponents, LevelPartition

__all__ = [
    "NEUMANN",
    "DIRICHLET",
    "Eigenproblem",
    "SpectralBasis",
    "ExponentReport",
    "assemble_eigenproblem",
    "solve_spectrum",
    "asymptotics_report",
    "spectrum_records",
]

NEUMANN = "neumann"
DIRICHLET = "dirichlet"
_BC_ALIASES = {"n": NEUMANN, "neumann": NEUMANN, "d": DIRICHLET, "dirichlet": DIRICHLET}


def _normalise_bc(bc: str) -> str:
    try:
        return _BC_ALIASES[str(bc).lower()]
    except KeyError:
        raise ValueError(f"unknown boundary condition {bc!r}") from None


@dataclass(frozen=True)
class Eigenproblem:
    """Mass-lumped string discretisation on the partition nodes.

    Attributes
    ----------
    bc : str
        ``"neumann"`` or ``"dirichlet"``.
    nodes : ndarray
        All cell endpoints, including boundary nodes.
    masses : ndarray
        Lumped measure of each node; sums to one.
    level : int, optional
        Partition level the nodes come from.
    resolution : float, optional
        Largest admissible cell width ``r_max**level``.
    """

    bc: str
    nodes: np.ndarray
    masses: np.ndarray
    level: int | None = None
    resolution: float | None = None

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def stiffness(self) -> np.ndarray:
        """Spring constants ``1/h`` between neighbouring nodes."""
        return 1.0 / self.gaps

    @property
    def free(self) -> np.ndarray:
        """Indices of the unknowns (all nodes except Dirichlet boundaries)."""
        n = len(self.nodes)
        if self.bc == DIRICHLET:
            return np.arange(1, n - 1)
        return np.arange(n)

    @property
    def dimension(self) -> int:
        return len(self.free)

    def apply_stiffness(self, v: np.ndarray) -> np.ndarray:
        """``K v`` on the full node vector (boundary rows included)."""
        flux = self.stiffness[:, None] * np.diff(v, axis=0) if v.ndim == 2 \
            else self.stiffness * np.diff(v)
        out = np.zeros_like(v, dtype=float)
        out[:-1] -= flux
        out[1:] += flux
        return out

    def stiffness_matrix(self) -> np.ndarray:
        """Dense ``K`` restricted to the free nodes."""
        n = len(self.nodes)
        k = np.zeros((n, n))
        w = self.stiffness
        i = np.arange(n - 1)
        k[i, i] += w
        k[i + 1, i + 1] += w
        k[i, i + 1] -= w
        k[i + 1, i] -= w
        f = self.free
        return k[np.ix_(f, f)]

    def mass_vector(self) -> np.ndarray:
        return self.masses[self.free]

    def string_factor(self) -> np.ndarray:
        """Bidiagonal ``W^(1/2) D M^(-1/2)`` restricted to the free nodes."""
        n = len(self.nodes)
        sw = np.sqrt(self.stiffness)
        sm = np.sqrt(self.masses)
        b = np.zeros((n - 1, n))
        i = np.arange(n - 1)
        b[i, i] = -sw / sm[:-1]
        b[i, i + 1] = sw / sm[1:]
        return b[:, self.free]


def assemble_eigenproblem(partition: LevelPartition, bc: str) -> Eigenproblem:
    """Lump cell masses onto endpoints and set up the string problem.

    Raises
    ------
    DegeneratePartition
        Fewer than two cells.
    """
    bc = _normalise_bc(bc)
    if len(partition) < 2:
        raise DegeneratePartition(
            f"partition has {len(partition)} cell(s); at least 2 are required")
    masses = np.zeros(len(partition.nodes))
    half = 0.5 * partition.mass
    np.add.at(masses, partition.left_node, half)
    np.add.at(masses, partition.right_node, half)
    if np.any(np.diff(partition.nodes) <= 0):
        raise DegeneratePartition("partition nodes are not strictly increasing")
    return Eigenproblem(bc, partition.nodes.copy(), masses, partition.level,
                        partition.threshold)


@dataclass(frozen=True)
class SpectralBasis:
    """``L^2(mu)``-orthonormal eigenpairs sampled on every node.

    Attributes
    ----------
    eigenvalues : ndarray, shape (K,)
        Ascending.
    eigenvectors : ndarray, shape (n_nodes, K)
        ``eigenvectors[:, k]`` samples the k-th eigenfunction; Dirichlet
        boundary rows are zero.
    complete : bool
        True when every eigenpair of the discrete problem is present.
    """

    bc: str
    nodes: np.ndarray
    masses: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    dimension: int
    exponents: Exponents | None = None
    problem: Eigenproblem | None = field(default=None, repr=False)

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def complete(self) -> bool:
        return self.n_modes == self.dimension

    @property
    def k_trust(self) -> int:
        """Number of eigenpairs considered free of discretisation artefacts."""
        return max(1, min(self.n_modes, self.dimension // 4))

    @property
    def sup_norms(self) -> np.ndarray:
        return np.abs(self.eigenvectors).max(axis=0)

    def gram(self) -> np.ndarray:
        """Discrete ``mu``-weighted Gram matrix of the eigenfunctions."""
        phi = self.eigenvectors
        return phi.T @ (self.masses[:, None] * phi)

    def residuals(self) -> np.ndarray:
        """Relative residual ``|K phi - lam M phi| / (lam |phi|)`` per mode."""
        prob = self.problem
        if prob is None:
            raise ValueError("basis was built without its eigenproblem")
        f = prob.free
        phi = self.eigenvectors
        kphi = prob.apply_stiffness(phi)[f]
        mphi = self.masses[f, None] * phi[f]
        res = np.linalg.norm(kphi - self.eigenvalues * mphi, axis=0)
        scale = np.abs(self.eigenvalues) * np.linalg.norm(phi[f], axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(scale > 0, res / scale, res)

    def coefficients(self, field_values: np.ndarray) -> np.ndarray:
        """Modal coefficients ``<h, phi_k>_mu`` of a nodal field (or fields)."""
        h = np.asarray(field_values, dtype=float)
        if h.ndim == 1:
            return self.eigenvectors.T @ (self.masses * h)
        return (h * self.masses) @ self.eigenvectors


def _fix_signs(phi: np.ndarray) -> np.ndarray:
    """Make the first clearly nonzero entry of every column positive."""
    scale = np.abs(phi).max(axis=0)
    first = np.argmax(np.abs(phi) > 1e-8 * scale, axis=0)
    sgn = np.sign(phi[first, np.arange(phi.shape[1])])
    sgn[sgn == 0] = 1.0
    return phi * sgn


def _svd(b: np.ndarray):
    try:
        return scipy.linalg.svd(b, full_matrices=False, lapack_driver="gesdd",
                                check_finite=True)
    except np.linalg.LinAlgError:
        pass
    try:
        return scipy.linalg.svd(b, full_matrices=False, lapack_driver="gesvd",
                                check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(
            f"singular value iteration did not converge for a "
            f"{b.shape[0]}x{b.shape[1]} string factor: {exc}") from exc


def solve_spectrum(problem: Eigenproblem, K: int | None = None,
                   exponents: Exponents | None = None) -> SpectralBasis:
    """Lowest ``K`` eigenpairs of the string problem.

    Eigenfunctions are normalised so that ``sum_j phi(x_j)**2 m_j = 1``
    and signed so that their first nonzero entry is positive.  For Neumann
    conditions the ground state is the constant function with eigenvalue
    exactly zero.

    Raises
    ------
    ConvergenceFailure
        Neither LAPACK SVD driver converged.
    """
    dim = problem.dimension
    if K is None:
        K = dim
    K = int(K)
    if not 1 <= K <= dim:
        raise ValueError(f"K = {K} must lie in [1, {dim}]")
    b = problem.string_factor()
    _, s, vt = _svd(b)
    m = problem.mass_vector()
    v = vt.T
    if problem.bc == NEUMANN:
        # B is (n-1) x n; its kernel is spanned by sqrt(m), i.e. phi = 1
        vecs = v[:, ::-1] / np.sqrt(m)[:, None]
        lam = np.concatenate([[0.0], s[::-1] ** 2])
        vecs = np.hstack([np.ones((dim, 1)), vecs])
    else:
        lam = s[::-1] ** 2
        vecs = v[:, ::-1] / np.sqrt(m)[:, None]
    lam = lam[:K]
    vecs = vecs[:, :K]
    norms = np.sqrt(np.sum(m[:, None] * vecs ** 2, axis=0))
    vecs = _fix_signs(vecs / norms)
    full = np.zeros((len(problem.nodes), K))
    full[problem.free] = vecs
    if not np.all(np.isfinite(full)):
        raise ConvergenceFailure("eigenvectors contain non-finite entries")
    return SpectralBasis(problem.bc, problem.nodes, problem.masses, lam, full,
                         dim, exponents, problem)


@dataclass(frozen=True)
class ExponentReport:
    """A fitted scaling exponent next to its predicted value.

    Attributes
    ----------
    quantity : str
    predicted, estimated, stderr : float
    residual : float
        Root-mean-square residual of the log-log fit.
    window : tuple
        Range of the regressor used in the fit.
    constants : dict
        Auxiliary fitted constants, keyed by name.
    """

    quantity: str
    predicted: float
    estimated: float
    stderr: float
    residual: float
    window: tuple
    constants: dict = field(default_factory=dict)

    @property
    def relative_error(self) -> float:
        return abs(self.estimated - self.predicted) / abs(self.predicted)


def _linear_fit(x, y):
    """Least-squares slope, intercept, slope stderr and rms residual."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    dof = max(len(x) - 2, 1)
    s2 = float(res @ res) / dof
    sxx = float(np.sum((x - x.mean()) ** 2))
    se = np.sqrt(s2 / sxx) if sxx > 0 else np.inf
    return float(coef[0]), float(coef[1]), float(se), float(np.sqrt(np.mean(res ** 2)))


def asymptotics_report(basis: SpectralBasis, exponents: Exponents | None = None,
                       window: tuple | None = None,
                       min_points: int = 8) -> ExponentReport:
    """Fit the Weyl slope and the eigenvalue/eigenfunction constants.

    Parameters
    ----------
    basis : SpectralBasis
    exponents : Exponents, optional
        Defaults to ``basis.exponents``.
    window : (k_lo, k_hi), optional
        1-based inclusive range of k.  Defaults to ``(2, k_trust)``.
    min_points : int
        Minimum number of eigenvalues in the window.

    Returns
    -------
    ExponentReport
        ``constants`` holds ``C0`` and ``C1`` (min and max of
        ``lam_k k^(-1/gamma)``) and ``C2`` (max of ``|phi_k|_inf / k^(delta/2)``).

    Raises
    ------
    WindowTooSmall
    """
    ex = exponents if exponents is not None else basis.exponents
    if ex is None:
        raise ValueError("exponents are required for the asymptotics report")
    k_lo, k_hi = window if window is not None else (2, basis.k_trust)
    k_lo = max(int(k_lo), 1)
    k_hi = min(int(k_hi), basis.n_modes)
    k = np.arange(k_lo, k_hi + 1)
    lam = basis.eigenvalues[k - 1]
    keep = lam > 0
    k, lam = k[keep], lam[keep]
    if len(k) < min_points:
        raise WindowTooSmall(
            f"window ({k_lo}, {k_hi}) holds {len(k)} positive eigenvalues; "
            f"at least {min_points} needed")
    slope, _, se, rms = _linear_fit(np.log(k), np.log(lam))
    ratio = lam * k ** (-1.0 / ex.gamma)
    sup = basis.sup_norms[k - 1]
    c2 = float(np.max(sup / k ** (ex.delta / 2)))
    return ExponentReport(
        "weyl_slope", ex.weyl_slope, slope, se, rms, (int(k[0]), int(k[-1])),
        {"C0": float(ratio.min()), "C1": float(ratio.max()), "C2": c2})


def spectrum_records(basis: SpectralBasis, exponents: Exponents | None = None):
    """Rows ``(k, lambda, sup_norm, weyl_ratio)`` for the spectrum CSV."""
    ex = exponents if exponents is not None else basis.exponents
    inv_g = ex.weyl_slope if ex is not None else 1.0
    sup = basis.sup_norms
    rows = []
    for i, lam in enumerate(basis.eigenvalues):
        k = i + 1
        rows.append((k, float(lam), float(sup[i]), float(lam) * k ** (-inv_g)))
    return rows
