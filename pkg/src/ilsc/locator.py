"""Scatterer and UT localisation from a sparse channel estimate.

Pipeline: count paths (MDL on the spatially smoothed UT-side covariance),
pick and cluster energetic lattice points into virtual anchors (VAs),
split them into LoS subarray centres and scatterers, intersect bearing
lines by weighted least squares, then refine with delay differences.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .channel import steering_matrix
from .config import SPEED_OF_LIGHT, SystemConfig
from .dictionary import PolarLattice
from .estimator import SparseChannelEstimate
from .numerics import hermitian_eig, kmeans

LOS = "G"
SCATTERER = "S"


class DegenerateGeometryError(ValueError):
    """Bearing lines do not determine a unique intersection."""


# ---------------------------------------------------------------- path count

def smoothed_covariance(y: np.ndarray, k_smooth: int) -> np.ndarray:
    """Forward spatial smoothing of ``Y^H Y`` with window ``N_UT - k_smooth``."""
    r = y.conj().T @ y
    n = r.shape[0]
    w = n - k_smooth
    acc = np.zeros((w, w), dtype=complex)
    for i in range(k_smooth + 1):
        acc += r[i:i + w, i:i + w]
    acc /= k_smooth + 1
    return (acc + acc.conj().T) / 2


def mdl_scores(eigenvalues: np.ndarray, n_ut: int, k_smooth: int, n_bs: int) -> np.ndarray:
    """MDL criterion for every candidate order ``0 .. N_UT - K - 1``."""
    lam = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    top = lam[0] if lam.size else 0.0
    lam = np.maximum(lam, max(top, 1e-300) * 1e-10)
    w = n_ut - k_smooth
    scores = np.empty(w)
    for order in range(w):
        tail = lam[order:w]
        q = w - order
        am = np.mean(tail)
        gm = math.exp(np.mean(np.log(tail)))
        fit = n_bs * q * math.log(am / gm)
        penalty = 0.5 * order * (2 * n_ut - order - k_smooth) * math.log(n_bs)
        scores[order] = fit + penalty
    return scores


def estimate_num_mpc(y: np.ndarray, k_smooth: int, n_bs: int, return_all: bool = False):
    """Number of resolvable paths from ``(M, P, N_UT)`` measurements.

    Each subcarrier votes with the MDL minimiser; the mode wins (ties go
    to the smaller count). All-zero data gives 0.
    """
    y = np.asarray(y)
    n_ut = y.shape[2]
    if not 1 <= k_smooth < n_ut:
        raise ValueError(f"k_smooth={k_smooth} must satisfy 1 <= k_smooth < {n_ut}")
    votes = []
    for m in range(y.shape[0]):
        cov = smoothed_covariance(y[m], k_smooth)
        if not np.any(cov):
            votes.append(0)
            continue
        eig = hermitian_eig(cov).eigenvalues
        votes.append(int(np.argmin(mdl_scores(eig, n_ut, k_smooth, n_bs))))
    counts = Counter(votes)
    best = max(counts.values())
    answer = min(v for v, c in counts.items() if c == best)
    return (answer, votes) if return_all else answer


# ------------------------------------------------------------ virtual anchors

@dataclass
class VaRecord:
    """One virtual anchor on the polar lattice.

    ``r`` is ``inf`` (and so are ``x``, ``y``) when the anchor sits on the
    far-field ring.
    """

    index: int
    theta: float
    r: float
    energy: float
    cls: str | None = None
    ut_theta: float | None = None

    @property
    def x(self) -> float:
        return self.r * math.cos(self.theta)

    @property
    def y(self) -> float:
        return self.r * math.sin(self.theta)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def finite(self) -> bool:
        return math.isfinite(self.r)

    def to_dict(self) -> dict:
        fin = lambda v: v if v is None or math.isfinite(v) else None
        return {"index": self.index, "theta": self.theta, "r": fin(self.r), "x": fin(self.x),
                "y": fin(self.y), "energy": self.energy, "cls": self.cls, "ut_theta": self.ut_theta}


def cluster_coordinates(lattice: PolarLattice, indices) -> np.ndarray:
    """``(sin theta, 1/r)`` of lattice points in grid-step units.

    ``sin`` is divided by the angle step and ``1/r`` by the broadside ring
    step ``eta / (4 R)``, so leakage of one path onto neighbouring rings at
    the same angle stays closer together than two distinct angles.
    """
    idx = np.asarray(indices)
    sin_step = 2.0 / lattice.n_angles
    ring_step = lattice.eta / (4 * lattice.rayleigh_distance)
    return np.column_stack([lattice.flat_sin[idx] / sin_step, lattice.flat_inv_r[idx] / ring_step])


def extract_and_cluster(estimate: SparseChannelEstimate, lattice: PolarLattice, n_paths: int,
                        seed: int = 0, flags: list | None = None) -> list[VaRecord]:
    """Threshold lattice energies, cluster survivors and keep each cluster's peak.

    Survivors are lattice points whose energy summed over UT antennas and
    subcarriers exceeds ``N_UT * sum_m noise_var[m]``. Clustering runs in
    ``(sin theta, 1/r)`` scaled by :func:`cluster_coordinates`. If fewer than ``n_paths`` points survive, the
    cluster count drops to the survivor count and a flag is appended.
    """
    flags = flags if flags is not None else []
    if n_paths < 1:
        raise ValueError("need at least one path to cluster")
    energy = estimate.energy_per_atom()
    thr = estimate.coeffs.shape[2] * float(np.sum(estimate.noise_var))
    keep = np.flatnonzero(energy > thr)
    if len(keep) == 0:
        flags.append("no-survivors")
        return []
    k = n_paths
    if len(keep) < k:
        flags.append(f"cluster-count-reduced:{k}->{len(keep)}")
        k = len(keep)
    pts = cluster_coordinates(lattice, keep)
    labels, _ = kmeans(pts, k, seed=seed)
    vas = []
    for j in range(k):
        members = keep[labels == j]
        if len(members) == 0:
            continue
        best = int(members[np.argmax(energy[members])])
        th, r = lattice.polar(best)
        vas.append(VaRecord(best, float(th), float(r), float(energy[best])))
    vas.sort(key=lambda v: -v.energy)
    return vas


def map_and_partition(vas: list[VaRecord], ut_aperture: float):
    """Split anchors into LoS subarray centres and scatterers.

    The strongest anchor, and every anchor within ``ut_aperture`` meters of
    it, are LoS; the others are scatterers. Far-field anchors only join the
    LoS set when they are the strongest.
    """
    if not vas:
        raise ValueError("no anchors to partition")
    anchor = max(vas, key=lambda v: v.energy)
    los, sc = [], []
    for v in vas:
        if v is anchor:
            near = True
        elif anchor.finite and v.finite:
            near = float(np.hypot(v.x - anchor.x, v.y - anchor.y)) <= ut_aperture
        else:
            near = (not anchor.finite and not v.finite and v.theta == anchor.theta)
        v.cls = LOS if near else SCATTERER
        (los if near else sc).append(v)
    return los, sc


def ut_angle_grid(n_ut: int, grid_factor: int) -> np.ndarray:
    """``sin(theta)`` grid ``-1 + 2 n / (grid_factor N_UT)``, which contains 0."""
    n = grid_factor * n_ut
    return -1 + 2 * np.arange(n) / n


def ut_side_match(estimate: SparseChannelEstimate, vas: list[VaRecord], n_ut: int,
                  spacing: float, wavelengths, grid_factor: int = 2):
    """Departure angle at the UT for every anchor via a far-field scan.

    For an anchor's coefficient row ``h[m, :]`` the score of a grid angle is
    ``max_m |sum_n h[m, n] a_n(theta, m)|^2``, where the row already carries
    the conjugated UT response.

    Returns:
        array of angles in radians, one per anchor (also stored on the anchors).
    """
    grid = ut_angle_grid(n_ut, grid_factor)
    out = np.empty(len(vas))
    resp = [steering_matrix(grid, np.zeros_like(grid), n_ut, spacing, lam) for lam in wavelengths]
    for i, v in enumerate(vas):
        rows = estimate.coeffs[:, v.index, :]
        score = np.max(np.stack([np.abs(rows[m] @ resp[m]) ** 2 for m in range(len(resp))]), axis=0)
        out[i] = math.asin(grid[int(np.argmax(score))])
        v.ut_theta = float(out[i])
    return out


# ---------------------------------------------------------- coarse position

def ring_weight(lattice: PolarLattice, theta: float, r: float) -> float:
    """``1 / |r - nearest neighbouring ring distance|^2`` at the nearest grid angle.

    The far-field ring borrows the weight of ring 1.
    """
    n = int(np.argmin(np.abs(lattice.sin_theta - math.sin(theta))))
    dist = lattice.ring_distances(n)
    if lattice.n_rings < 2:
        return 1.0
    if not math.isfinite(r):
        s = 1
        r = dist[1]
    else:
        finite = np.where(np.isfinite(dist), dist, np.inf)
        s = int(np.argmin(np.abs(finite - r)))
        s = max(s, 1)
    nbrs = [dist[j] for j in (s - 1, s + 1) if 0 <= j < lattice.n_rings and math.isfinite(dist[j])]
    gap = min(abs(r - q) for q in nbrs) if nbrs else math.inf
    if not math.isfinite(gap) or gap == 0:
        return 1.0
    return 1.0 / gap ** 2


@dataclass
class CoarseFix:
    x: float
    y: float
    phi: float
    residual: float


def _wls_rows(points: np.ndarray, directions: np.ndarray):
    """Rows ``[sin a, -cos a] . p = sin a x_l - cos a y_l`` of lines through ``points``."""
    s, c = np.sin(directions), np.cos(directions)
    h = np.column_stack([s, -c])
    rhs = s * points[:, 0] - c * points[:, 1]
    return h, rhs


def wls_solve(h: np.ndarray, rhs: np.ndarray, weights: np.ndarray):
    """Weighted least squares ``(H^T W H)^-1 H^T W y`` with a conditioning check."""
    w = np.asarray(weights, dtype=float)
    normal = h.T @ (w[:, None] * h)
    if np.linalg.cond(normal) > 1e12:
        raise DegenerateGeometryError("bearing lines are (nearly) parallel")
    sol = np.linalg.solve(normal, h.T @ (w * rhs))
    res = float(np.sum(w * (h @ sol - rhs) ** 2))
    return sol, res


def coarse_wls(los: list[VaRecord], scatterers: list[VaRecord], lattice: PolarLattice | None,
               phi_grid_size: int = 721, weights: np.ndarray | None = None) -> CoarseFix:
    """UT position by intersecting bearing lines from the anchors.

    With LoS anchors the array orientation is the mean of
    ``theta_BS + theta_UT`` over them; scatterer lines run at
    ``phi - theta_UT`` and LoS lines along the UT array axis
    ``phi - pi/2``. Without LoS anchors ``phi`` is scanned over
    ``phi_grid_size`` points in ``[0, pi)`` and the smallest weighted
    residual wins. A LoS anchor on the far-field ring contributes the BS
    bearing line through the origin instead; far-field scatterer anchors
    contribute nothing.

    Args:
        weights: optional explicit per-anchor weights in ``los + scatterers``
            order; by default they come from the lattice ring spacing (or
            are all 1 when ``lattice`` is None).
    """
    anchors = list(los) + list(scatterers)
    if weights is None:
        weights = np.array([1.0 if lattice is None else ring_weight(lattice, v.theta, v.r)
                            for v in anchors])
    weights = np.asarray(weights, dtype=float)
    is_los = np.array([i < len(los) for i in range(len(anchors))], dtype=bool)
    finite = np.array([v.finite for v in anchors], dtype=bool)
    far_los = is_los & ~finite
    mask = finite | far_los
    pts = np.array([[v.x, v.y] if v.finite else [0.0, 0.0] for v in anchors]).reshape(-1, 2)
    ut_th = np.array([0.0 if v.ut_theta is None else v.ut_theta for v in anchors])
    bs_th = np.array([v.theta for v in anchors])

    def solve(phi):
        dirs = np.where(is_los, phi - math.pi / 2, phi - ut_th)
        dirs = np.where(far_los, bs_th, dirs)
        h, rhs = _wls_rows(pts[mask], dirs[mask])
        return wls_solve(h, rhs, weights[mask])

    if len(los):
        if any(v.ut_theta is None for v in los):
            raise ValueError("LoS anchors need UT-side angles")
        phi = float(np.mean([v.theta + v.ut_theta for v in los]))
        if mask.sum() < 2:
            raise DegenerateGeometryError("need at least two usable anchors with LoS")
        sol, res = solve(phi)
        return CoarseFix(float(sol[0]), float(sol[1]), phi, res)

    if mask.sum() < 3:
        raise DegenerateGeometryError("need at least three finite anchors without LoS")
    best = None
    for phi in np.linspace(0.0, math.pi, phi_grid_size, endpoint=False):
        try:
            sol, res = solve(phi)
        except DegenerateGeometryError:
            continue
        if best is None or res < best[2]:
            best = (sol, phi, res)
    if best is None:
        raise DegenerateGeometryError("no orientation gives a well-posed intersection")
    sol, phi, res = best
    return CoarseFix(float(sol[0]), float(sol[1]), float(phi), res)


# ------------------------------------------------------------------- delays

def delay_grid(m_sub: int, bandwidth: float, oversample: int = 10) -> np.ndarray:
    """Delays ``0, 1/(10 BW), ...`` covering one unambiguous period ``M / BW``."""
    return np.arange(m_sub * oversample) / (oversample * bandwidth)


def delay_peak(spectrum: np.ndarray, step: float) -> float:
    """Parabolic refinement of the circular argmax of a sampled spectrum."""
    n = len(spectrum)
    j = int(np.argmax(spectrum))
    if n < 3:
        return j * step
    a, b, c = spectrum[(j - 1) % n], spectrum[j], spectrum[(j + 1) % n]
    den = a - 2 * b + c
    off = 0.5 * (a - c) / den if den < 0 else 0.0
    return (j + float(np.clip(off, -0.5, 0.5))) * step


def circular_mean(values, period: float) -> float:
    ang = 2 * np.pi * np.asarray(values) / period
    mean = math.atan2(float(np.mean(np.sin(ang))), float(np.mean(np.cos(ang))))
    return (mean * period / (2 * np.pi)) % period


def path_delays(estimate: SparseChannelEstimate, vas: list[VaRecord], freqs,
                bandwidth: float, oversample: int = 10) -> np.ndarray:
    """Per-anchor delay modulo ``M / BW`` from the frequency response of its row."""
    freqs = np.asarray(freqs, dtype=float)
    m_sub = len(freqs)
    grid = delay_grid(m_sub, bandwidth, oversample)
    period = m_sub / bandwidth
    step = grid[1] - grid[0] if len(grid) > 1 else period
    steer = np.exp(2j * np.pi * np.outer(freqs - freqs[0], grid))  # (M, G)
    out = np.empty(len(vas))
    for i, v in enumerate(vas):
        rows = estimate.coeffs[:, v.index, :]  # (M, N)
        spec = np.abs(rows.T @ steer) ** 2      # (N, G)
        taus = [delay_peak(spec[n], step) for n in range(spec.shape[0])]
        # referencing the phase to f_0 changes nothing in magnitude
        out[i] = circular_mean(taus, period)
    return out


def tdoa_measure(estimate: SparseChannelEstimate, los: list[VaRecord], scatterers: list[VaRecord],
                 freqs, bandwidth: float, oversample: int = 10) -> np.ndarray:
    """Delay of each scatterer path relative to the mean LoS delay, in ``[0, M/BW)``."""
    if len(freqs) < 2:
        raise ValueError("delay estimation needs at least two subcarriers")
    period = len(freqs) / bandwidth
    d_los = path_delays(estimate, los, freqs, bandwidth, oversample)
    d_sc = path_delays(estimate, scatterers, freqs, bandwidth, oversample)
    ref = circular_mean(d_los, period) if len(d_los) else 0.0
    return (d_sc - ref) % period


def geometric_tdoa(ut_xy, scatterer_xy) -> np.ndarray:
    """``(|p_l| + |p - p_l| - |p|) / c`` for each scatterer."""
    p = np.asarray(ut_xy, dtype=float)
    s = np.asarray(scatterer_xy, dtype=float).reshape(-1, 2)
    return (np.hypot(s[:, 0], s[:, 1]) + np.hypot(s[:, 0] - p[0], s[:, 1] - p[1])
            - math.hypot(*p)) / SPEED_OF_LIGHT


def unwrap_tdoa(tdoa_wrapped, predicted, period: float) -> np.ndarray:
    """Pick the alias ``tau + k period`` closest to the predicted delay difference."""
    tdoa_wrapped = np.asarray(tdoa_wrapped, dtype=float)
    k = np.round((np.asarray(predicted, dtype=float) - tdoa_wrapped) / period)
    return tdoa_wrapped + k * period


# ------------------------------------------------------------- refinement

def tdoa_loss(ut_xy, scatterer_xy, tdoa) -> float:
    return float(np.sum((np.asarray(tdoa) - geometric_tdoa(ut_xy, scatterer_xy)) ** 2))


def tdoa_gradient(ut_xy, scatterer_xy, tdoa):
    """Analytic gradient of the loss with respect to the UT and each scatterer.

    Returns:
        ``(grad_ut (2,), grad_scatterers (L, 2), singular mask (L,), ut_singular)``;
        entries whose norm is non-differentiable are zero and flagged.
    """
    p = np.asarray(ut_xy, dtype=float)
    s = np.asarray(scatterer_xy, dtype=float).reshape(-1, 2)
    resid = np.asarray(tdoa) - geometric_tdoa(p, s)
    d_ps = p[None, :] - s
    n_ps = np.hypot(d_ps[:, 0], d_ps[:, 1])
    n_s = np.hypot(s[:, 0], s[:, 1])
    n_p = math.hypot(*p)
    sing = (n_ps == 0) | (n_s == 0)
    ut_sing = n_p == 0 or bool(np.any(n_ps == 0))
    safe = lambda v: np.where(v == 0, 1.0, v)
    u_ps = d_ps / safe(n_ps)[:, None]
    u_s = s / safe(n_s)[:, None]
    u_p = p / (n_p if n_p > 0 else 1.0)
    c = SPEED_OF_LIGHT
    g_ut = np.sum(-2 * resid[:, None] * (u_ps - u_p[None, :]) / c, axis=0)
    g_sc = -2 * resid[:, None] * (u_s - u_ps) / c
    g_sc[sing] = 0.0
    if ut_sing:
        g_ut[:] = 0.0
    return g_ut, g_sc, sing, ut_sing


def _armijo(f, x0: float, f0: float, grad: float, first_step: float = 0.1,
            c1: float = 1e-4, shrink: float = 0.5, max_halvings: int = 60):
    """Backtracking line search along ``-grad`` for a scalar coordinate."""
    if grad == 0.0 or not math.isfinite(grad):
        return x0, f0
    step = first_step / abs(grad)
    for _ in range(max_halvings):
        x = x0 - step * grad
        fx = f(x)
        if fx <= f0 - c1 * step * grad * grad:
            return x, fx
        step *= shrink
    return x0, f0


@dataclass
class RefineResult:
    ut: np.ndarray
    scatterers: np.ndarray
    loss_trace: list
    flags: list


def refine_gradient(ut_xy, scatterer_xy, tdoa, t_grd: int = 10, update_scatterers: bool = True,
                    first_step: float = 0.1) -> RefineResult:
    """Coordinate descent on the delay-difference loss with Armijo steps.

    Each iteration updates UT ``x``, UT ``y`` and then every scatterer
    coordinate in turn. The first trial step moves the coordinate by
    ``first_step`` meters.
    """
    p = np.array(ut_xy, dtype=float)
    s = np.array(scatterer_xy, dtype=float).reshape(-1, 2)
    tdoa = np.asarray(tdoa, dtype=float)
    flags: list[str] = []
    loss = tdoa_loss(p, s, tdoa)
    trace = [loss]
    for it in range(t_grd):
        for axis in (0, 1):
            g_ut, _, _, ut_sing = tdoa_gradient(p, s, tdoa)
            if ut_sing:
                flags.append(f"iter{it}:ut-nondifferentiable")
                continue

            def f(val, axis=axis):
                q = p.copy()
                q[axis] = val
                return tdoa_loss(q, s, tdoa)

            p[axis], loss = _armijo(f, p[axis], loss, float(g_ut[axis]), first_step)
        if update_scatterers:
            for l in range(len(s)):
                for axis in (0, 1):
                    _, g_sc, sing, _ = tdoa_gradient(p, s, tdoa)
                    if sing[l]:
                        flags.append(f"iter{it}:scatterer{l}-nondifferentiable")
                        continue

                    def f(val, l=l, axis=axis):
                        q = s.copy()
                        q[l, axis] = val
                        return tdoa_loss(p, q, tdoa)

                    s[l, axis], loss = _armijo(f, s[l, axis], loss, float(g_sc[l, axis]), first_step)
        trace.append(loss)
    return RefineResult(p, s, trace, flags)


# ------------------------------------------------------------------ pipeline

@dataclass
class LocationReport:
    """Everything the location stage produces for one trial.

    Positions are Cartesian meters with the BS at the origin; ``tdoa`` is
    in seconds and lists one value per finite scatterer anchor, in the order
    of ``refined_scatterers``.
    """

    n_paths: int
    vas: list
    coarse_ut: np.ndarray | None = None
    coarse_phi: float | None = None
    los_only_ut: np.ndarray | None = None
    tdoa: np.ndarray = field(default_factory=lambda: np.zeros(0))
    refined_ut: np.ndarray | None = None
    refined_scatterers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    loss_trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def los_vas(self):
        return [v for v in self.vas if v.cls == LOS]

    @property
    def scatterer_vas(self):
        return [v for v in self.vas if v.cls == SCATTERER]

    def to_dict(self) -> dict:
        arr = lambda a: None if a is None else np.asarray(a, dtype=float).tolist()
        return {
            "n_paths": int(self.n_paths),
            "vas": [v.to_dict() for v in self.vas],
            "coarse_ut": arr(self.coarse_ut),
            "coarse_phi": self.coarse_phi,
            "los_only_ut": arr(self.los_only_ut),
            "tdoa": arr(self.tdoa),
            "refined_ut": arr(self.refined_ut),
            "refined_scatterers": arr(self.refined_scatterers),
            "loss_trace": [float(v) for v in self.loss_trace],
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LocationReport":
        vas = []
        for v in data.get("vas", []):
            r = v["r"] if v["r"] is not None else math.inf
            vas.append(VaRecord(int(v["index"]), float(v["theta"]), float(r), float(v["energy"]),
                                v.get("cls"), v.get("ut_theta")))
        opt = lambda k: None if data.get(k) is None else np.asarray(data[k], dtype=float)
        return cls(
            n_paths=int(data["n_paths"]),
            vas=vas,
            coarse_ut=opt("coarse_ut"),
            coarse_phi=data.get("coarse_phi"),
            los_only_ut=opt("los_only_ut"),
            tdoa=np.asarray(data.get("tdoa") or [], dtype=float),
            refined_ut=opt("refined_ut"),
            refined_scatterers=np.asarray(data.get("refined_scatterers") or [], dtype=float).reshape(-1, 2),
            loss_trace=list(data.get("loss_trace", [])),
            flags=list(data.get("flags", [])),
        )


def locate(estimate: SparseChannelEstimate, measurements_y: np.ndarray, lattice: PolarLattice,
           cfg: SystemConfig, seed: int = 0, n_paths: int | None = None) -> LocationReport:
    """Run the full localisation chain on one estimate.

    Args:
        estimate: projected-domain channel estimate on ``lattice``.
        measurements_y: ``(M, P, N_UT)`` measurements for path counting.
        lattice: lattice the estimate lives on.
        cfg: system parameters.
        seed: k-means seed.
        n_paths: skip MDL and use this path count.
    """
    flags: list[str] = []
    if n_paths is None:
        n_paths = estimate_num_mpc(measurements_y, cfg.smoothing, cfg.n_bs)
    report = LocationReport(n_paths=n_paths, vas=[], flags=flags)
    if n_paths < 1:
        flags.append("no-paths")
        return report
    vas = extract_and_cluster(estimate, lattice, n_paths, seed=seed, flags=flags)
    report.vas = vas
    if not vas:
        return report
    los, sc = map_and_partition(vas, cfg.ut_aperture)
    ut_side_match(estimate, vas, cfg.n_ut, cfg.spacing, cfg.wavelengths, cfg.ut_grid_factor)
    finite_los = [v for v in los if v.finite]
    if finite_los:
        report.los_only_ut = np.mean([v.position for v in finite_los], axis=0)
    try:
        fix = coarse_wls(los if cfg.los else [], sc, lattice)
    except DegenerateGeometryError as exc:
        flags.append(f"coarse-failed:{exc}")
        if report.los_only_ut is not None:
            report.coarse_ut = report.los_only_ut.copy()
            report.refined_ut = report.los_only_ut.copy()
        return report
    report.coarse_ut = np.array([fix.x, fix.y])
    report.coarse_phi = fix.phi
    finite_sc = [v for v in sc if v.finite]
    report.refined_ut = report.coarse_ut.copy()
    report.refined_scatterers = np.array([v.position for v in finite_sc]).reshape(-1, 2)
    if not finite_sc or not los or cfg.m_subcarriers < 2:
        flags.append("refinement-skipped")
        return report
    period = cfg.m_subcarriers / cfg.bandwidth
    wrapped = tdoa_measure(estimate, los, finite_sc, cfg.subcarrier_freqs, cfg.bandwidth)
    predicted = geometric_tdoa(report.coarse_ut, report.refined_scatterers)
    tdoa = unwrap_tdoa(wrapped, predicted, period)
    report.tdoa = tdoa
    res = refine_gradient(report.coarse_ut, report.refined_scatterers, tdoa, cfg.t_grd)
    report.refined_ut = res.ut
    report.refined_scatterers = res.scatterers
    report.loss_trace = res.loss_trace
    flags.extend(res.flags)
    return report
