"""Statistics of simulated ensembles: moments, Hoelder and Lyapunov exponents.

Standard errors come from batch means: the paths are split into contiguous
batches, the statistic is recomputed on every batch and the spread of the
batch values gives the error bar.  This stays honest for the heavy-tailed
moments produced by multiplicative noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientLags, InsufficientPaths, WindowTooSmall, WrongRegime
from .ifs import Exponents
from .spde import Ensemble
from .spectral import NEUMANN, _linear_fit

__all__ = [
    "CheckRow",
    "MomentEstimate",
    "HolderFit",
    "LyapunovEstimate",
    "IntermittencyReport",
    "batch_means",
    "moment_estimate",
    "holder_fit",
    "lyapunov_estimate",
    "intermittency_report",
    "moment_stability",
    "moment_finiteness_report",
    "DEFAULT_BATCHES",
]

DEFAULT_BATCHES = 20


@dataclass(frozen=True)
class CheckRow:
    """One line of a report CSV.

    Rows with ``asserted=False`` are informational and do not affect the
    overall verdict of a report.
    """

    check_id: str
    predicted: float
    estimated: float
    stderr: float
    passed: bool
    asserted: bool = True

    def as_tuple(self):
        return (self.check_id, float(self.predicted), float(self.estimated),
                float(self.stderr), bool(self.passed))


def _batch_split(n_paths: int, n_batches: int):
    b = min(n_batches, n_paths)
    if b < 2:
        raise InsufficientPaths(f"{n_paths} path(s) cannot form 2 batches")
    size = n_paths // b
    return b, size


def batch_means(samples: np.ndarray, n_batches: int = DEFAULT_BATCHES):
    """Mean over axis 0 and its batch-means standard error.

    The first ``n_batches * (n // n_batches)`` samples are used for the error
    bar; the point estimate uses all samples.
    """
    x = np.asarray(samples, dtype=float)
    b, size = _batch_split(x.shape[0], n_batches)
    mean = x.mean(axis=0)
    bm = x[: b * size].reshape(b, size, *x.shape[1:]).mean(axis=1)
    se = bm.std(axis=0, ddof=1) / np.sqrt(b)
    return mean, se


@dataclass(frozen=True)
class MomentEstimate:
    """Estimate of ``E|u(t, x)|^p`` with its batch-means standard error."""

    p: float
    t: float
    x: float
    value: float
    stderr: float
    paths: int


def moment_estimate(ensemble: Ensemble, p: float, t: float, x: float,
                    n_batches: int = DEFAULT_BATCHES) -> MomentEstimate:
    """Monte Carlo ``E|u(t, x)|^p`` at an output time and grid node.

    Paths removed by the blow-up guard make the estimate infinite.
    """
    if p < 1:
        raise ValueError("moment order must be >= 1")
    ti = ensemble.time_index(t)
    xi = ensemble.node_index(x)
    u = ensemble.values[:, ti, xi]
    if np.isnan(u).any():
        return MomentEstimate(float(p), float(t), float(x), np.inf, np.inf, len(u))
    mean, se = batch_means(np.abs(u) ** p, n_batches)
    return MomentEstimate(float(p), float(ensemble.times[ti]), float(ensemble.nodes[xi]),
                          float(mean), float(se), len(u))


# ---------------------------------------------------------------------------
# Hoelder exponents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HolderFit:
    """Log-log fit of increment moments against their lag.

    Attributes
    ----------
    mode : str
        ``"temporal"`` or ``"spatial"``.
    q : float
    alpha : float
        Fitted slope divided by ``q``.
    stderr : float
        Batch-means standard error of ``alpha``.
    lags : ndarray
    moments : ndarray
        Supremum over locations of ``E|increment|^q`` at each lag.
    residual : float
        Root-mean-square residual of the fit in log space.
    predicted : float or None
    """

    mode: str
    q: float
    alpha: float
    stderr: float
    lags: np.ndarray
    moments: np.ndarray
    residual: float
    predicted: float | None = None
    n_paths: int = 0

    def records(self):
        """Plot data rows ``(log_lag, log_moment)``."""
        return [(float(np.log(a)), float(np.log(b))) for a, b in zip(self.lags, self.moments)]


def _pair_groups(nodes: np.ndarray, min_sep: float, node_subset=None):
    idx = np.arange(len(nodes)) if node_subset is None else np.asarray(node_subset)
    i, j = np.triu_indices(len(idx), 1)
    i, j = idx[i], idx[j]
    sep = nodes[j] - nodes[i]
    keep = sep >= min_sep * (1 - 1e-9)
    i, j, sep = i[keep], j[keep], sep[keep]
    key = np.round(sep, 12)
    lags, inverse = np.unique(key, return_inverse=True)
    return i, j, lags, inverse


def _slope_alpha(lags, moments, q):
    slope, _, _, rms = _linear_fit(np.log(lags), np.log(moments))
    return slope / q, rms


def holder_fit(ensemble: Ensemble, mode: str, q: float, *, nodes=None,
               base_time: float | None = None, time: float | None = None,
               min_separation: float | None = None, min_lags: int = 4,
               predicted: float | None = None,
               n_batches: int = DEFAULT_BATCHES) -> HolderFit:
    """Estimate a Hoelder exponent from increment moments.

    Temporal mode uses the increments ``u(t0 + h, x) - u(t0, x)`` between the
    base time ``t0`` (default: the first output time) and every later output
    time.  Spatial mode uses ``u(t, x) - u(t, y)`` at one output time
    (default: the last) for all node pairs at least ``min_separation`` apart
    (default: twice the partition resolution), grouped by separation.  In
    both modes the supremum over locations of ``E|increment|^q`` is
    regressed on the lag in log-log scale and ``alpha = slope / q``.

    Raises
    ------
    InsufficientLags
        Fewer than ``min_lags`` lags.
    InsufficientPaths
    """
    vals = ensemble.values
    n_paths = vals.shape[0]
    b, size = _batch_split(n_paths, n_batches)
    if np.isnan(vals).any():
        raise ValueError("ensemble contains blown-up paths")
    if nodes is None:
        nodes = np.arange(len(ensemble.nodes))
        if ensemble.bc != NEUMANN:
            nodes = nodes[1:-1]
    nodes = np.asarray(nodes)

    if mode == "temporal":
        t_idx = 0 if base_time is None else ensemble.time_index(base_time)
        later = np.arange(t_idx + 1, len(ensemble.times))
        if len(later) < min_lags:
            raise InsufficientLags(f"{len(later)} temporal lags; need {min_lags}")
        lags = ensemble.times[later] - ensemble.times[t_idx]
        base = vals[:, t_idx, nodes]
        full = np.empty((len(later), len(nodes)))
        per_batch = np.empty((b, len(later), len(nodes)))
        for k, li in enumerate(later):
            inc = np.abs(vals[:, li, nodes] - base) ** q
            full[k] = inc.mean(axis=0)
            per_batch[:, k] = inc[: b * size].reshape(b, size, -1).mean(axis=1)
        moments = full.max(axis=1)
        batch_moments = per_batch.max(axis=2)
    elif mode == "spatial":
        t_idx = len(ensemble.times) - 1 if time is None else ensemble.time_index(time)
        if min_separation is None:
            if ensemble.resolution is None:
                raise ValueError("min_separation is required for this ensemble")
            min_separation = 2.0 * ensemble.resolution
        i, j, lags, group = _pair_groups(ensemble.nodes, min_separation, nodes)
        if len(lags) < min_lags:
            raise InsufficientLags(f"{len(lags)} spatial lags; need {min_lags}")
        field_t = vals[:, t_idx]
        full = np.full(len(lags), -np.inf)
        batch_moments = np.full((b, len(lags)), -np.inf)
        chunk = max(1, 2_000_000 // n_paths)
        for s in range(0, len(i), chunk):
            ii, jj, gg = i[s:s + chunk], j[s:s + chunk], group[s:s + chunk]
            inc = np.abs(field_t[:, ii] - field_t[:, jj]) ** q
            mean = inc.mean(axis=0)
            bmean = inc[: b * size].reshape(b, size, -1).mean(axis=1)
            np.maximum.at(full, gg, mean)
            for bb in range(b):
                np.maximum.at(batch_moments[bb], gg, bmean[bb])
        moments = full
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if np.any(moments <= 0):
        raise ValueError("increment moments vanish; no noise in the ensemble?")
    alpha, rms = _slope_alpha(lags, moments, q)
    batch_alpha = np.array([_slope_alpha(lags, bm, q)[0] for bm in batch_moments])
    se = float(batch_alpha.std(ddof=1) / np.sqrt(b))
    return HolderFit(mode, float(q), float(alpha), se, np.asarray(lags, float),
                     np.asarray(moments, float), rms, predicted, n_paths)


# ---------------------------------------------------------------------------
# Lyapunov exponents and intermittency
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovEstimate:
    """Growth rate of ``log E|u(t, x)|^p``.

    ``slope`` is the least-squares slope over the window; ``lower`` and
    ``upper`` are the smallest and largest values of ``(1/t) log E|u|^p``
    over the last half of the window, used as finite-horizon stand-ins for
    the lower and upper limits.
    """

    p: float
    x: float
    slope: float
    stderr: float
    lower: float
    upper: float
    times: np.ndarray = field(repr=False)
    log_moments: np.ndarray = field(repr=False)


def lyapunov_estimate(ensemble: Ensemble, p: float, x: float, window=None,
                      n_batches: int = DEFAULT_BATCHES) -> LyapunovEstimate:
    """Fit the moment Lyapunov exponent at node ``x``.

    Parameters
    ----------
    window : (t_start, t_end), optional
        Output-time window; defaults to all output times.

    Raises
    ------
    WindowTooSmall
        Fewer than 4 output times in the window.
    """
    xi = ensemble.node_index(x)
    t = ensemble.times
    lo, hi = (t[0], t[-1]) if window is None else window
    sel = np.flatnonzero((t >= lo - 1e-12) & (t <= hi + 1e-12))
    if len(sel) < 4:
        raise WindowTooSmall(f"{len(sel)} output times in window; need 4")
    u = np.abs(ensemble.values[:, sel, xi]) ** p
    b, size = _batch_split(u.shape[0], n_batches)
    if np.isnan(u).any():
        inf = float("inf")
        return LyapunovEstimate(float(p), float(ensemble.nodes[xi]), inf, inf, inf,
                                inf, t[sel], np.full(len(sel), inf))
    logm = np.log(u.mean(axis=0))
    ts = t[sel]
    slope, _, _, _ = _linear_fit(ts, logm)
    bm = np.log(u[: b * size].reshape(b, size, -1).mean(axis=1))
    slopes = np.array([_linear_fit(ts, row)[0] for row in bm])
    se = float(slopes.std(ddof=1) / np.sqrt(b))
    half = ts >= ts[0] + 0.5 * (ts[-1] - ts[0])
    half &= ts > 0
    running = logm[half] / ts[half]
    return LyapunovEstimate(float(p), float(ensemble.nodes[xi]), float(slope), se,
                            float(running.min()), float(running.max()), ts, logm)


def moment_stability(ensemble: Ensemble, p: float, x: float, t: float,
                     factor: float = 2.0, n_batches: int = DEFAULT_BATCHES):
    """Compare the moment from the first half of the paths with all paths.

    Returns ``(half_estimate, full_estimate, ratio, stable)`` where
    ``stable`` means both are finite and their ratio lies in
    ``[1/factor, factor]``.
    """
    ti = ensemble.time_index(t)
    xi = ensemble.node_index(x)
    u = np.abs(ensemble.values[:, ti, xi]) ** p
    half = u[: len(u) // 2]
    a, b_ = float(np.mean(half)), float(np.mean(u))
    ok = bool(np.isfinite(a) and np.isfinite(b_) and b_ > 0
              and 1.0 / factor <= a / b_ <= factor)
    ratio = a / b_ if b_ > 0 else float("inf")
    return a, b_, ratio, ok


@dataclass(frozen=True)
class IntermittencyReport:
    """Checks of exponential second-moment growth and finite higher moments."""

    rows: list
    moments: list = field(default_factory=list, repr=False)
    lyapunov: list = field(default_factory=list, repr=False)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows if r.asserted)

    def plot_records(self):
        """Rows ``(t, p, x, log_moment)``."""
        out = []
        for ly in self.lyapunov:
            for t, lm in zip(ly.times, ly.log_moments):
                out.append((float(t), float(ly.p), float(ly.x), float(lm)))
        return out

    def summary(self) -> str:
        lines = []
        for r in self.rows:
            flag = "PASS" if r.passed else "FAIL"
            if not r.asserted:
                flag = "INFO " + flag
            lines.append(f"[{flag}] {r.check_id}: estimated {r.estimated:.6g} "
                         f"(stderr {r.stderr:.3g}), predicted {r.predicted:.6g}")
        lines.extend(self.notes)
        return "\n".join(lines)


def _check_regime(ensemble: Ensemble):
    cfg = ensemble.config
    problems = []
    if ensemble.bc != NEUMANN:
        problems.append("boundary condition must be Neumann")
    if not cfg.f.is_zero:
        problems.append("drift must vanish")
    if not (cfg.g.is_zero or cfg.g.kind == "linear"):
        problems.append("diffusion coefficient must be linear, g(u) = sigma u")
    if not cfg.u0.is_positive_constant:
        problems.append("initial condition must be a positive constant")
    if problems:
        raise WrongRegime("; ".join(problems))
    sigma = 0.0 if cfg.g.is_zero else abs(cfg.g.a)
    return sigma, cfg.u0.c


def _finiteness_rows(ensemble: Ensemble, p_list, x, n_batches, factor=2.0,
                     assert_doubling=True):
    xs = f"{float(x):.6g}"
    xi = ensemble.node_index(x)
    times = ensemble.times
    rows, lyaps, uppers = [], [], []
    for p in p_list:
        ly = lyapunov_estimate(ensemble, p, x, n_batches=n_batches)
        lyaps.append(ly)
        uppers.append(ly.upper)
        worst_ratio, all_ok = 1.0, True
        for t in times[1:]:
            _, _, ratio, ok = moment_stability(ensemble, p, x, t, factor)
            all_ok &= ok
            if abs(np.log(ratio)) >= abs(np.log(worst_ratio)):
                worst_ratio = ratio
        sup_m = float(np.max(np.mean(np.abs(ensemble.values[:, :, xi]) ** p, axis=0)))
        if np.isnan(sup_m):
            sup_m = float("inf")
        rows.append(CheckRow(f"moment_finite_p{p:g}[x={xs}]", float("inf"), sup_m,
                             0.0, bool(np.isfinite(sup_m))))
        rows.append(CheckRow(f"moment_doubling_ratio_p{p:g}[x={xs}]", 1.0, worst_ratio,
                             0.0, bool(all_ok), assert_doubling))
    diffs = np.diff(uppers) if len(uppers) > 1 else np.zeros(1)
    mono = bool(np.all(diffs >= -1e-12)) and bool(np.all(np.isfinite(uppers)))
    rows.append(CheckRow(f"upper_proxy_monotone_in_p[x={xs}]", 0.0,
                         float(np.min(diffs)), 0.0, mono))
    return rows, lyaps


def _default_nodes(ensemble: Ensemble):
    return ensemble.nodes[np.linspace(0, len(ensemble.nodes) - 1, 5).round().astype(int)]


def _discrepancy_note(exponents: Exponents) -> str:
    return ("note: the growth-in-p exponent of the upper moment bound appears both as "
            f"1/(1-gamma) = {1 / (1 - exponents.gamma):.6f} and as "
            f"1/(1-gamma*delta) = {1 / (1 - exponents.gamma_delta):.6f}; they agree "
            "only when delta = 1. Only finiteness is checked.")


def moment_finiteness_report(ensemble: Ensemble, p_list=(2, 4, 8), nodes=None,
                             exponents: Exponents | None = None, factor: float = 2.0,
                             n_batches: int = DEFAULT_BATCHES) -> IntermittencyReport:
    """Finiteness and path-doubling stability of p-th moments.

    Works for any coefficients in the closed family.  At every test node and
    order ``p`` the moments must be finite at all output times, and the
    estimate from the first half of the paths must stay within ``factor`` of
    the estimate from all paths.  Growth proxies must be nondecreasing in
    ``p``.
    """
    if nodes is None:
        nodes = _default_nodes(ensemble)
    rows, lyaps = [], []
    for x in nodes:
        r, ly = _finiteness_rows(ensemble, p_list, x, n_batches, factor)
        rows.extend(r)
        lyaps.extend(ly)
    notes = []
    if ensemble.blowups:
        notes.append(f"{len(ensemble.blowups)} path(s) exceeded the blow-up level")
    if exponents is not None:
        notes.append(_discrepancy_note(exponents))
    return IntermittencyReport(rows, [], lyaps, notes)


def intermittency_report(ensemble: Ensemble, p_list=(2, 4, 8), nodes=None,
                         exponents: Exponents | None = None,
                         evaluator=None, n_batches: int = DEFAULT_BATCHES,
                         n_se: float = 3.0) -> IntermittencyReport:
    """Check the operational signature of weak intermittency.

    Requires Neumann conditions, zero drift, ``g(u) = sigma u`` and a
    positive constant initial value ``c``.  Checks, at every test node:

    * ``E u(t, x)^2 + 3 SE >= c^2 exp(sigma^2 t)`` at every output time;
    * the fitted second-moment growth rate exceeds ``sigma^2 - 3 SE`` and is
      positive when ``sigma > 0``;
    * every p-th moment is finite over the horizon;
    * the upper growth proxies are nondecreasing in ``p``.

    Path-doubling ratios are reported as informational rows: with linear
    noise the p-th moments for ``p >= 4`` are dominated by rare paths and
    their Monte Carlo estimates are not stable at feasible path counts.

    Raises
    ------
    WrongRegime
    """
    sigma, c = _check_regime(ensemble)
    if nodes is None:
        nodes = _default_nodes(ensemble)
    rows, moments, lyaps, notes = [], [], [], []
    times = ensemble.times
    t_end = float(times[-1])
    for x in nodes:
        xs = f"{float(x):.6g}"
        worst_gap = np.inf
        worst = None
        for t in times[1:]:
            est = moment_estimate(ensemble, 2, t, x, n_batches)
            moments.append(est)
            bound = c * c * np.exp(sigma * sigma * t)
            gap = est.value + n_se * est.stderr - bound * (1 - 1e-12)
            if gap < worst_gap:
                worst_gap, worst = gap, (est, bound)
        est, bound = worst
        rows.append(CheckRow(f"second_moment_lower_bound[x={xs}]", bound, est.value,
                             est.stderr, bool(worst_gap >= 0)))
        final = moment_estimate(ensemble, 2, t_end, x, n_batches)
        rows.append(CheckRow(f"second_moment_at_T[x={xs}]", c * c * np.exp(sigma ** 2 * t_end),
                             final.value, final.stderr,
                             final.value + n_se * final.stderr
                             >= c * c * np.exp(sigma ** 2 * t_end) * (1 - 1e-12)))
        ly2 = lyapunov_estimate(ensemble, 2, x, n_batches=n_batches)
        ok = ly2.slope >= sigma ** 2 - n_se * ly2.stderr - 1e-12
        if sigma > 0:
            ok = ok and ly2.slope > 0
        rows.append(CheckRow(f"lyapunov_2[x={xs}]", sigma ** 2, ly2.slope, ly2.stderr, ok))
        finite_rows, ly_p = _finiteness_rows(ensemble, p_list, x, n_batches,
                                              assert_doubling=False)
        rows.extend(finite_rows)
        lyaps.extend(ly_p)
    if evaluator is not None:
        grid = np.union1d(times[1:], np.linspace(times[1], t_end, 64))
        diag_min = min(float(evaluator.diagonal(t).min()) for t in grid)
        rows.append(CheckRow("kernel_diagonal_at_least_one", 1.0, diag_min, 0.0,
                             diag_min >= 1.0 - 1e-9))
    if ensemble.blowups:
        notes.append(f"{len(ensemble.blowups)} path(s) exceeded the blow-up level")
    if exponents is not None:
        notes.append(_discrepancy_note(exponents))
    return IntermittencyReport(rows, moments, lyaps, notes)
