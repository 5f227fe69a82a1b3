"""Geometry and optimization over box-intersect-simplex ambiguity sets and
the empirical l1 / modified chi-square baseline balls.

The parametric set is {theta : ||theta - center||_inf <= radius} intersected
with the probability simplex.  Its linear maximization has an exact greedy
solution and an equivalent risk-measure (CVaR-style) dual used as a
cross-check.  Baseline sets live on the N observed atoms around the uniform
empirical vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .quantiles import chi2_quantile

__all__ = [
    "BoxSimplexSet",
    "EmpiricalBall",
    "InfeasibleSetError",
    "LowerLevelResult",
    "cdf_envelope",
    "clip_bounds",
    "cvar_value",
    "empirical_cdf_envelope",
    "empirical_linear_max",
    "empirical_radius",
    "enumerate_vertices",
    "hausdorff_pair",
    "linear_max",
    "linf_distance",
    "project_box_simplex",
    "project_simplex",
    "regularized_max",
]


class InfeasibleSetError(ValueError):
    """The clipped box does not intersect the simplex."""


@dataclass(frozen=True)
class BoxSimplexSet:
    """An l_inf ball around center intersected with the probability simplex.

    Bounds are clipped into [0, 1]; infeasible sets (sum l > 1 or sum u < 1)
    are representable and flagged rather than rejected, so stability sweeps
    can probe the boundary.
    """

    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))
        if center.ndim != 1:
            raise ValueError("center must be a vector")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        l = np.maximum(0.0, self.center - self.radius)
        u = np.minimum(1.0, self.center + self.radius)
        return l, u

    @property
    def feasible(self) -> bool:
        l, u = self.bounds()
        return bool(l.sum() <= 1.0 + 1e-12 and u.sum() >= 1.0 - 1e-12)

    def contains(self, theta, tol: float = 1e-9) -> bool:
        theta = np.asarray(theta, dtype=float)
        l, u = self.bounds()
        return bool(
            np.all(theta >= l - tol)
            and np.all(theta <= u + tol)
            and abs(theta.sum() - 1.0) <= tol
        )


@dataclass(frozen=True)
class EmpiricalBall:
    """Baseline ambiguity ball on N atoms around the uniform empirical vector."""

    kind: str  # "l1" | "chi2"
    atom_count: int
    radius: float

    def __post_init__(self):
        if self.kind not in ("l1", "chi2"):
            raise ValueError(f"unknown ball kind {self.kind!r}")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")
        if self.kind == "chi2" and self.atom_count < 2:
            raise ValueError("chi2 ball needs at least 2 atoms")


@dataclass(frozen=True)
class LowerLevelResult:
    """Maximizer and optimal value of a lower-level problem."""

    maximizer: np.ndarray
    value: float


def clip_bounds(set_: BoxSimplexSet) -> tuple[np.ndarray, np.ndarray, bool]:
    """Clipped per-coordinate bounds and the feasibility flag."""
    l, u = set_.bounds()
    return l, u, set_.feasible


def _require_feasible(set_: BoxSimplexSet) -> tuple[np.ndarray, np.ndarray]:
    l, u = set_.bounds()
    if not (l.sum() <= 1.0 + 1e-12 and u.sum() >= 1.0 - 1e-12):
        raise InfeasibleSetError(
            f"box/simplex intersection empty: sum l = {l.sum():.6g}, sum u = {u.sum():.6g}"
        )
    return l, u


def linear_max(set_: BoxSimplexSet, c) -> LowerLevelResult:
    """max theta'c over the set by greedy fill.

    Start at the lower bounds and hand the remaining budget 1 - sum(l) to
    coordinates in decreasing c order up to their upper bounds; ties break
    toward the lowest index.
    """
    c = np.asarray(c, dtype=float)
    l, u = _require_feasible(set_)
    theta = l.copy()
    budget = 1.0 - l.sum()
    # stable sort on -c keeps the lowest index first among ties
    for j in np.argsort(-c, kind="stable"):
        if budget <= 0.0:
            break
        step = min(budget, u[j] - l[j])
        theta[j] += step
        budget -= step
    return LowerLevelResult(maximizer=theta, value=float(theta @ c))


def cvar_value(set_: BoxSimplexSet, c) -> float:
    """Risk-measure dual of linear_max, evaluated exactly by sorting.

    The dual is l'c + inf_d [(1 - sum l) d + sum_j (u_j - l_j) (c_j - d)+],
    a discrete CVaR-type expression whose infimum sits at one of the c_j
    breakpoints.  When no clipping is active (sum l + sum u = 2) the second
    term equals (1 - sum l) times the level-0.5 CVaR of c under the
    distribution proportional to u - l.
    """
    c = np.asarray(c, dtype=float)
    l, u = _require_feasible(set_)
    base = float(l @ c)
    slack = 1.0 - l.sum()
    if slack <= 1e-15:
        return base
    w = u - l
    order = np.argsort(c, kind="stable")
    cs = c[order]
    ws = w[order]
    # h(d) = slack*d + sum_j w_j (c_j - d)+ is convex piecewise linear with
    # slope slack - sum w <= 0 on the far left and slack >= 0 on the right,
    # so the minimum is attained at a breakpoint.
    tail = np.concatenate([np.cumsum((ws * cs)[::-1])[::-1], [0.0]])
    wtail = np.concatenate([np.cumsum(ws[::-1])[::-1], [0.0]])
    vals = slack * cs + tail[1:] - wtail[1:] * cs
    return base + float(vals.min())


def project_box_simplex(set_: BoxSimplexSet, y) -> np.ndarray:
    """Euclidean projection onto the set.

    theta_j(tau) = clip(y_j - tau, l_j, u_j) with tau found by monotone
    bisection so the coordinates sum to 1 (tolerance 1e-12 on the sum), then
    polished exactly on the identified free coordinates.
    """
    y = np.asarray(y, dtype=float)
    l, u = _require_feasible(set_)
    if set_.radius == 0.0 or np.all(u - l <= 0.0):
        return l.copy()

    lo = float((y - u).min())
    hi = float((y - l).max())
    assert _sum_at(y, lo, l, u) >= 1.0 - 1e-12 and _sum_at(y, hi, l, u) <= 1.0 + 1e-12, (
        "bisection bracket failed on a feasible set"
    )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _sum_at(y, mid, l, u) >= 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, abs(lo), abs(hi)):
            break
    tau = 0.5 * (lo + hi)
    theta = np.clip(y - tau, l, u)

    # exact polish: resolve tau on the strictly free coordinates
    free = (theta > l + 1e-12) & (theta < u - 1e-12)
    if free.any():
        clipped_sum = theta[~free].sum()
        tau_exact = (y[free].sum() - (1.0 - clipped_sum)) / free.sum()
        cand = np.clip(y - tau_exact, l, u)
        if abs(cand.sum() - 1.0) <= abs(theta.sum() - 1.0):
            theta = cand
    if abs(theta.sum() - 1.0) > 1e-12:
        # fall back to renormalizing the free mass; keeps the sum exact
        gap = 1.0 - theta.sum()
        room = np.where(gap > 0, u - theta, theta - l)
        total = room.sum()
        if total > 0:
            theta = theta + gap * room / total
    return theta


def _sum_at(y, tau, l, u) -> float:
    return float(np.clip(y - tau, l, u).sum())


def regularized_max(set_: BoxSimplexSet, c, lam: float) -> LowerLevelResult:
    """max theta'c - lam ||theta||^2; unique maximizer Proj(c / (2 lam))."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    c = np.asarray(c, dtype=float)
    theta = project_box_simplex(set_, c / (2.0 * lam))
    value = float(theta @ c - lam * (theta @ theta))
    return LowerLevelResult(maximizer=theta, value=value)


def linf_distance(set_: BoxSimplexSet, point) -> float:
    """min over the set of ||point - theta||_inf, by bisection on the radius.

    The l_inf ball of radius t around the point meets the set iff the
    coordinate intervals [max(l, p - t), min(u, p + t)] are nonempty and their
    lower/upper sums straddle 1.
    """
    p = np.asarray(point, dtype=float)
    l, u = _require_feasible(set_)

    def hits(t: float) -> bool:
        lo = np.maximum(l, p - t)
        hi = np.minimum(u, p + t)
        return bool(np.all(lo <= hi + 1e-15) and lo.sum() <= 1.0 + 1e-15 and hi.sum() >= 1.0 - 1e-15)

    if hits(0.0):
        return 0.0
    t_hi = 1.0
    while not hits(t_hi):
        t_hi *= 2.0
        if t_hi > 1e6:
            raise RuntimeError("distance bisection failed to bracket")
    t_lo = 0.0
    while t_hi - t_lo > 1e-10:
        mid = 0.5 * (t_lo + t_hi)
        if hits(mid):
            t_hi = mid
        else:
            t_lo = mid
    return t_hi


def enumerate_vertices(set_: BoxSimplexSet) -> np.ndarray:
    """All vertices of the box/simplex polytope (practical for dim <= 6).

    At a vertex at most one coordinate is strictly between its bounds; the
    rest sit at l or u with the free coordinate absorbing the budget.
    """
    l, u = _require_feasible(set_)
    n = set_.dim
    verts: list[np.ndarray] = []
    for mask in range(1 << n):
        base = np.where([(mask >> j) & 1 for j in range(n)], u, l)
        s = base.sum()
        if abs(s - 1.0) <= 1e-12:
            verts.append(base)
            continue
        for f in range(n):
            v = base.copy()
            need = 1.0 - (s - base[f])
            if l[f] - 1e-12 <= need <= u[f] + 1e-12:
                v[f] = min(max(need, l[f]), u[f])
                if abs(v.sum() - 1.0) <= 1e-9:
                    verts.append(v)
    uniq: list[np.ndarray] = []
    for v in verts:
        if not any(np.max(np.abs(v - w)) <= 1e-10 for w in uniq):
            uniq.append(v)
    return np.array(uniq)


def _sample_in_set(set_: BoxSimplexSet, rng: np.random.Generator, count: int, max_attempts: int = 10**6):
    """Rejection-sample uniform simplex points lying in the box."""
    l, u = set_.bounds()
    out: list[np.ndarray] = []
    attempts = 0
    n = set_.dim
    while len(out) < count and attempts < max_attempts:
        batch = min(4096, max_attempts - attempts)
        attempts += batch
        g = rng.exponential(size=(batch, n))
        pts = g / g.sum(axis=1, keepdims=True)
        ok = np.all(pts >= l, axis=1) & np.all(pts <= u, axis=1)
        out.extend(pts[ok][: count - len(out)])
    return np.array(out) if out else None


def hausdorff_pair(
    setA: BoxSimplexSet,
    setB: BoxSimplexSet,
    sample_count: int = 64,
    seed: int = 0,
) -> tuple[float, float]:
    """Sampled Hausdorff lower estimate and the center/radius upper bound.

    bound = ||centerA - centerB||_inf + |radiusA - radiusB|.  The sampled
    estimate takes the max l_inf distance from points of each set to the
    other; when rejection sampling starves (thin sets) it falls back to exact
    vertex enumeration for dim <= 6.
    """
    for s in (setA, setB):
        _require_feasible(s)
    bound = float(np.max(np.abs(setA.center - setB.center)) + abs(setA.radius - setB.radius))
    rng = np.random.default_rng(seed)
    sampled = 0.0
    for src, dst in ((setA, setB), (setB, setA)):
        pts = _sample_in_set(src, rng, sample_count)
        if pts is None or len(pts) < sample_count:
            if src.dim > 6:
                raise RuntimeError("rejection sampling failed and dim > 6 blocks vertex fallback")
            pts = enumerate_vertices(src)
        for p in pts:
            sampled = max(sampled, linf_distance(dst, p))
    return sampled, bound


def empirical_radius(kind: str, N: int, alpha: float) -> float:
    """Concentration radii: l1 uses sqrt((2/N) log(2/alpha)); chi2 uses the
    (1-alpha) chi-square quantile with N-1 degrees of freedom over N."""
    if N < 2:
        raise ValueError("N must be >= 2")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if kind == "l1":
        return float(np.sqrt((2.0 / N) * np.log(2.0 / alpha)))
    if kind == "chi2":
        return chi2_quantile(N - 1, 1.0 - alpha) / N
    raise ValueError(f"unknown ball kind {kind!r}")


def project_simplex(z: np.ndarray) -> np.ndarray:
    """Euclidean projection of z onto the probability simplex (sort method)."""
    srt = np.sort(z)[::-1]
    css = np.cumsum(srt) - 1.0
    idx = np.arange(1, z.shape[0] + 1)
    rho = np.nonzero(srt - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(z - tau, 0.0)


def _l1_greedy(N: int, rho: float, c: np.ndarray) -> np.ndarray:
    """Exact maximizer of p'c over the l1 ball around uniform on the simplex.

    Shifts up to rho/2 mass from the smallest-c atoms to the single largest-c
    atom, moving only while the swap strictly gains; the constant-c tie case
    therefore returns the uniform vector.
    """
    p = np.full(N, 1.0 / N)
    budget = rho / 2.0
    if budget <= 0:
        return p
    target = int(np.argmax(c))
    for i in np.argsort(c, kind="stable"):
        if budget <= 1e-15 or c[i] >= c[target]:
            break
        take = min(budget, p[i])
        p[i] -= take
        p[target] += take
        budget -= take
    return p


def _chi2_argmax(N: int, rho: float, c: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Exact maximizer of p'c over the modified chi-square ball on the simplex.

    KKT: p_i = max(0, 1/N + (c_i - mu) / (gamma N)); for fixed gamma the
    simplex multiplier mu reduces to a simplex projection, and gamma is found
    by bisection on the constraint residual N ||p - uniform||^2 = rho.
    """
    p_hat = np.full(N, 1.0 / N)
    if rho <= 0 or c.max() - c.min() <= 1e-15:
        return p_hat
    # when the least-norm point of the optimal LP face (uniform over the
    # argmax atoms) already satisfies the ball constraint, the constraint is
    # slack and that point is the gamma -> 0 limit
    top = c >= c.max() - 1e-15
    p_face = top / top.sum()
    if float(N * ((p_face - p_hat) @ (p_face - p_hat))) <= rho:
        return p_face

    def p_of(gamma: float) -> np.ndarray:
        return project_simplex(p_hat + c / (gamma * N))

    def resid(gamma: float) -> float:
        q = p_of(gamma)
        return float(N * ((q - p_hat) @ (q - p_hat)) - rho)

    g_hi = 1.0
    while resid(g_hi) > 0:
        g_hi *= 2.0
        if g_hi > 1e18:
            break
    g_lo = g_hi / 2.0
    while resid(g_lo) < 0:
        g_lo /= 2.0
        if g_lo < 1e-18:
            break
    for _ in range(120):
        mid = 0.5 * (g_lo + g_hi)
        r = resid(mid)
        if r > 0:
            g_lo = mid
        else:
            g_hi = mid
        if abs(r) <= tol or g_hi - g_lo <= 1e-15 * g_hi:
            break
    return p_of(g_hi)


def _project_l1_simplex(N: int, rho: float, y: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Projection onto simplex intersect the l1 ball around uniform.

    KKT: p_i = max(0, 1/N + soft_gamma(y_i - 1/N - mu)) with the simplex
    multiplier mu solved by inner bisection and the l1 multiplier gamma by
    outer bisection on the ball residual; gamma = 0 when the plain simplex
    projection already satisfies the ball constraint.
    """
    u = 1.0 / N
    p_hat = np.full(N, u)
    t = np.sort(y - p_hat)
    t_orig = y - p_hat
    suffix = np.concatenate([np.cumsum(t[::-1])[::-1], [0.0]])

    def mass_at(gamma: float, mus: np.ndarray) -> np.ndarray:
        # sum_i max(0, u + soft_gamma(t_i - mu)) for a vector of mu values
        h = np.searchsorted(t, mus + gamma, side="right")
        n_high = N - h
        s_high = suffix[h]
        a = np.searchsorted(t, mus - gamma - u, side="right")
        b = np.searchsorted(t, mus - gamma, side="left")
        n_ll = b - a
        s_ll = suffix[a] - suffix[b]
        n_mid = np.maximum(h - b, 0)
        return (
            n_high * (u - gamma) + s_high - n_high * mus
            + n_ll * (u + gamma) + s_ll - n_ll * mus
            + n_mid * u
        )

    def p_at(gamma: float, mu: float) -> np.ndarray:
        z = t_orig - mu
        shrunk = np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)
        return np.maximum(0.0, p_hat + shrunk)

    def p_of(gamma: float) -> np.ndarray:
        # exact simplex multiplier: the atom mass is piecewise linear and
        # nonincreasing in mu with breakpoints at t +- gamma and t + gamma + u
        bps = np.sort(np.concatenate([t - gamma, t + gamma, t + gamma + u]))
        vals = mass_at(gamma, bps)
        above = np.nonzero(vals >= 1.0)[0]
        if above.size == 0:
            # crossing sits left of every breakpoint: all atoms in the
            # high-linear regime, mass = 1 + sum t - N (gamma + mu)
            mu = (float(t.sum()) / N) - gamma
        else:
            k = above[-1]
            if k == bps.shape[0] - 1 or vals[k] <= 1.0:
                mu = bps[k]
            else:
                s0, s1 = vals[k], vals[k + 1]
                mu = bps[k] + (s0 - 1.0) * (bps[k + 1] - bps[k]) / (s0 - s1)
        return p_at(gamma, float(mu))

    base = project_simplex(y)
    if np.abs(base - p_hat).sum() <= rho + tol:
        return base

    g_lo, g_hi = 0.0, 1.0
    while np.abs(p_of(g_hi) - p_hat).sum() > rho:
        g_hi *= 2.0
        if g_hi > 1e12:
            break
    for _ in range(60):
        mid = 0.5 * (g_lo + g_hi)
        r = float(np.abs(p_of(mid) - p_hat).sum()) - rho
        if r > 0:
            g_lo = mid
        else:
            g_hi = mid
        if abs(r) <= tol:
            break
    return p_of(g_hi)


def _project_chi2_simplex(N: int, rho: float, y: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Projection onto simplex intersect the chi-square ball (one multiplier).

    The ball is Euclidean around the simplex centroid, so the KKT system
    reduces to projecting (y + gamma * uniform) / (1 + gamma) onto the
    simplex with gamma found by bisection on the radius residual.
    """
    p_hat = np.full(N, 1.0 / N)
    s2 = rho / N
    base = project_simplex(y)
    if (base - p_hat) @ (base - p_hat) <= s2 + tol:
        return base

    def p_of(gamma: float) -> np.ndarray:
        return project_simplex((y + gamma * p_hat) / (1.0 + gamma))

    def resid(gamma: float) -> float:
        q = p_of(gamma)
        return float((q - p_hat) @ (q - p_hat) - s2)

    g_lo, g_hi = 0.0, 1.0
    while resid(g_hi) > 0:
        g_hi *= 2.0
        if g_hi > 1e18:
            break
    for _ in range(120):
        mid = 0.5 * (g_lo + g_hi)
        r = resid(mid)
        if r > 0:
            g_lo = mid
        else:
            g_hi = mid
        if abs(r) <= tol or g_hi - g_lo <= 1e-15 * max(1.0, g_hi):
            break
    return p_of(g_hi)


def empirical_linear_max(kind: str, N: int, rho: float, c, lam: float = 0.0) -> LowerLevelResult:
    """Maximize p'c - lam ||p||^2 over the baseline ball on N atoms.

    lam = 0 uses the exact greedy (l1) or dual-bisection (chi2) solution;
    lam > 0 reduces to the Euclidean projection of c / (2 lam) onto the set
    because the objective is -lam ||p - c/(2 lam)||^2 up to a constant.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (N,):
        raise ValueError(f"c must have length {N}")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if kind not in ("l1", "chi2"):
        raise ValueError(f"unknown ball kind {kind!r}")
    if rho == 0.0:
        p = np.full(N, 1.0 / N)
    elif lam == 0.0:
        p = _l1_greedy(N, rho, c) if kind == "l1" else _chi2_argmax(N, rho, c)
    else:
        y = c / (2.0 * lam)
        p = _project_l1_simplex(N, rho, y) if kind == "l1" else _project_chi2_simplex(N, rho, y)
    value = float(p @ c - lam * (p @ p))
    return LowerLevelResult(maximizer=p, value=value)


def cdf_envelope(set_: BoxSimplexSet, component_cdfs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pointwise CDF bounds over the set.

    component_cdfs has one column per component evaluated on a grid; per grid
    point the upper envelope maximizes theta'F(t) and the lower one minimizes
    it, with the nominal curve at the set center.
    """
    F = np.asarray(component_cdfs, dtype=float)
    if F.ndim != 2 or F.shape[1] != set_.dim:
        raise ValueError("component_cdfs must be (grid, n) with n matching the set")
    if np.any(F < -1e-12) or np.any(F > 1 + 1e-12):
        raise ValueError("CDF values must lie in [0, 1]")
    if np.any(np.diff(F, axis=0) < -1e-12):
        raise ValueError("each CDF column must be nondecreasing along the grid")
    upper = np.array([linear_max(set_, F[t]).value for t in range(F.shape[0])])
    lower = np.array([-linear_max(set_, -F[t]).value for t in range(F.shape[0])])
    nominal = F @ set_.center
    return lower, upper, nominal


def empirical_cdf_envelope(kind: str, N: int, rho: float, k) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form CDF band of a baseline ball at a point with k of N atoms
    at or below it.

    l1: k/N +- rho/2, clipped to [0, 1] (the usual concentration band, kept
    even at k = 0 and k = N).  chi2: k/N +- sqrt(rho k (N - k)) / N, which is
    exact for the atom-supported ball in all clamping regimes.
    """
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or np.any(k > N):
        raise ValueError("k must lie in [0, N]")
    base = k / N
    if kind == "l1":
        half = rho / 2.0
        lower = np.maximum(0.0, base - half)
        upper = np.minimum(1.0, base + half)
    elif kind == "chi2":
        spread = np.sqrt(rho * k * (N - k)) / N
        lower = np.maximum(0.0, base - spread)
        upper = np.minimum(1.0, base + spread)
    else:
        raise ValueError(f"unknown ball kind {kind!r}")
    return lower, upper
