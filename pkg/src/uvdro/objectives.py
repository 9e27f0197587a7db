"""Training objectives: ERM, CVaR-DRO, covariate-shift DRO, and the
transport-smoothed unmeasured-variable DRO dual estimator.

The robust estimator evaluated here is

    (1/a) * sqrt( (1/n) sum_i [l_i - sum_j (B_ij - B_ji) - eta]_+^2 )
        + (L/n) * sum_ij (Dx_ij + Dc_ij) B_ij + eta + ridge * ||w||^2

minimized over the transport matrix B >= 0 (zero diagonal) and cutoff
eta >= 0. Passing Dc = 0 gives the covariate-shift variant. A brute-force
primal oracle for the inner supremum backs the duality tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.special

from uvdro.distances import DistanceMatrix
from uvdro.models import Dataset, ModelParams, loss_vector, weighted_loss_grad

__all__ = [
    "RobustnessConfig",
    "DualState",
    "ObjectiveValue",
    "PrimalWitness",
    "OracleConvergenceError",
    "erm_objective",
    "cvar_objective",
    "uvdro_objective",
    "solve_eta",
    "uvdro_gradients",
    "minimize_dual",
    "primal_inner_sup_oracle",
]

OBJECTIVES = ("erm", "cvar_dro", "covshift_dro", "uv_dro")


@dataclass(frozen=True)
class RobustnessConfig:
    """Robustness knobs: minority size alpha, Lipschitz bound L, ridge, objective."""

    alpha: float
    lipschitz: float
    ridge: float = 0.0
    objective: str = "uv_dro"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.lipschitz < 0.0:
            raise ValueError(f"lipschitz must be >= 0, got {self.lipschitz}")
        if self.ridge < 0.0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")


@dataclass(frozen=True)
class DualState:
    """Transport matrix B (nonnegative, zero diagonal) and cutoff eta >= 0."""

    transport: np.ndarray = field(repr=False)
    eta: float = 0.0

    def __post_init__(self):
        b = np.array(self.transport, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError(f"transport must be square, got shape {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ValueError("transport contains non-finite entries")
        if np.any(b < -1e-12):
            raise ValueError("transport entries must be nonnegative")
        if np.any(np.abs(np.diag(b)) > 1e-12):
            raise ValueError("transport diagonal must be zero")
        np.clip(b, 0.0, None, out=b)
        np.fill_diagonal(b, 0.0)
        b.flags.writeable = False
        if self.eta < -1e-12:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        object.__setattr__(self, "transport", b)
        object.__setattr__(self, "eta", max(float(self.eta), 0.0))

    @property
    def size(self) -> int:
        return self.transport.shape[0]


@dataclass(frozen=True)
class ObjectiveValue:
    """Objective total with its decomposition recorded at evaluation time."""

    total: float
    robust_term: float
    transport_cost: float
    eta_term: float
    ridge_term: float

    def __post_init__(self):
        parts = self.robust_term + self.transport_cost + self.eta_term + self.ridge_term
        if abs(self.total - parts) > 1e-9 * max(1.0, abs(self.total)):
            raise ValueError(
                f"decomposition does not add up: total={self.total}, parts={parts}"
            )


@dataclass(frozen=True)
class PrimalWitness:
    """Feasible witness h for the inner supremum and its objective value."""

    h: np.ndarray = field(repr=False)
    value: float = 0.0

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        if np.any(h < -1e-9):
            raise ValueError("witness must be nonnegative")
        if float(np.mean(h * h)) > 1.0 + 1e-9:
            raise ValueError("witness violates the mean-square ball")
        h.flags.writeable = False
        object.__setattr__(self, "h", h)


class OracleConvergenceError(RuntimeError):
    """Primal oracle ran out of iterations; carries the best witness found."""

    def __init__(self, message: str, witness: PrimalWitness):
        super().__init__(message)
        self.witness = witness


def _ridge_term(params: ModelParams | None, ridge: float) -> float:
    if params is None or ridge == 0.0:
        return 0.0
    return float(ridge * np.sum(params.weights * params.weights))


def erm_objective(losses, params: ModelParams | None = None, ridge: float = 0.0) -> ObjectiveValue:
    """Mean loss plus the ridge penalty on weights."""
    losses = np.asarray(losses, dtype=float)
    if np.any(losses < 0.0):
        raise ValueError("losses must be nonnegative")
    mean = float(losses.mean())
    rt = _ridge_term(params, ridge)
    return ObjectiveValue(
        total=mean + rt, robust_term=mean, transport_cost=0.0, eta_term=0.0, ridge_term=rt
    )


def cvar_objective(losses, alpha: float):
    """Worst-alpha-fraction mean via the dual form; returns (value, eta_star).

    eta_star is the lower empirical quantile among the minimizers of
    (1/(alpha n)) sum (l - eta)_+ + eta.
    """
    losses = np.asarray(losses, dtype=float)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    n = losses.size
    asc = np.sort(losses)
    idx = max(0, math.ceil(n * (1.0 - alpha) - 1e-12) - 1)
    eta = float(asc[idx])
    hinge = np.clip(losses - eta, 0.0, None)
    value = float(hinge.mean() / alpha + eta)
    return value, eta


def solve_eta(adjusted_losses, alpha: float) -> float:
    """Exact minimizer of eta -> (1/alpha) sqrt(mean (a - eta)_+^2) + eta over eta >= 0.

    The map is convex and coercive. Bisection on its subgradient
    1 - mean[(a - eta)_+] / (alpha * sqrt(mean (a - eta)_+^2)) localizes the
    minimizer, then the stationarity condition is solved in closed form on
    the bracketed active set (it is quadratic in eta there). The refinement
    matters: downstream quasi-Newton solvers need gradients consistent to
    machine precision, well past bisection accuracy.
    """
    a = np.asarray(adjusted_losses, dtype=float)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    n = a.size
    top = float(a.max(initial=0.0))
    if top <= 0.0:
        return 0.0

    def deriv(eta):
        hinge = np.clip(a - eta, 0.0, None)
        msq = float(np.mean(hinge * hinge))
        if msq == 0.0:
            return 1.0
        return 1.0 - float(hinge.mean()) / (alpha * math.sqrt(msq))

    if deriv(0.0) >= 0.0:
        return 0.0
    lo, hi = 0.0, top
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if deriv(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-6 * max(1.0, top):
            break
    mid = 0.5 * (lo + hi)

    # stationarity on the active set S = {a_i > eta}: with A = sum_S a,
    # Q = sum_S a^2, s = |S|, squaring mean hinge = alpha * rms gives
    # (s^2 - alpha^2 n s) eta^2 - 2 A (s - alpha^2 n) eta + (A^2 - alpha^2 n Q) = 0
    active = a > mid
    s = int(active.sum())
    if s > 0:
        asel = a[active]
        big_a = float(asel.sum())
        big_q = float(asel @ asel)
        c2 = s * s - alpha * alpha * n * s
        c1 = -2.0 * big_a * (s - alpha * alpha * n)
        c0 = big_a * big_a - alpha * alpha * n * big_q
        roots = []
        if abs(c2) > 1e-30:
            disc = c1 * c1 - 4.0 * c2 * c0
            if disc >= 0.0:
                sq = math.sqrt(disc)
                roots = [(-c1 - sq) / (2.0 * c2), (-c1 + sq) / (2.0 * c2)]
        elif abs(c1) > 1e-30:
            roots = [-c0 / c1]
        slack = 1e-9 * max(1.0, top)
        for eta in roots:
            if lo - slack <= eta <= hi + slack and eta >= 0.0:
                if np.all(a[active] >= eta - slack) and np.all(a[~active] <= eta + slack):
                    return float(eta)

    # fall back to a tight bisection (kink minimizers land here)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if deriv(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, top):
            break
    return 0.5 * (lo + hi)


def _combined_distance(d_x: DistanceMatrix, d_c: DistanceMatrix | None, n: int) -> np.ndarray:
    if d_x.size != n:
        raise ValueError(f"feature distance matrix is {d_x.size}x{d_x.size}, expected {n}x{n}")
    if d_c is None:
        return d_x.entries
    if d_c.size != n:
        raise ValueError(f"uv distance matrix is {d_c.size}x{d_c.size}, expected {n}x{n}")
    return d_x.entries + d_c.entries


def _robust_parts(losses, dsum, transport, eta, alpha, lipschitz):
    """Shared math for the dual estimator; returns (robust, cost, hinge, rms)."""
    n = losses.size
    netflow = transport.sum(axis=1) - transport.sum(axis=0)
    hinge = np.clip(losses - netflow - eta, 0.0, None)
    msq = float(np.mean(hinge * hinge))
    rms = math.sqrt(msq) if msq > 0.0 else 0.0
    robust = rms / alpha
    cost = (lipschitz / n) * float(np.vdot(dsum, transport))
    return robust, cost, hinge, rms


def uvdro_objective(
    losses,
    d_x: DistanceMatrix,
    d_c: DistanceMatrix | None,
    dual: DualState,
    cfg: RobustnessConfig,
    params: ModelParams | None = None,
) -> ObjectiveValue:
    """Dual estimator value at a feasible (B, eta).

    The covariate-shift variant is this same function with d_c identically
    zero (d_c=None is accepted as shorthand). The ridge term requires params;
    without them it is reported as 0.
    """
    losses = np.asarray(losses, dtype=float)
    n = losses.size
    dsum = _combined_distance(d_x, d_c, n)
    if dual.size != n:
        raise ValueError(f"transport matrix is {dual.size}x{dual.size}, expected {n}x{n}")
    robust, cost, _, _ = _robust_parts(
        losses, dsum, dual.transport, dual.eta, cfg.alpha, cfg.lipschitz
    )
    rt = _ridge_term(params, cfg.ridge)
    return ObjectiveValue(
        total=robust + cost + dual.eta + rt,
        robust_term=robust,
        transport_cost=cost,
        eta_term=dual.eta,
        ridge_term=rt,
    )


def uvdro_gradients(
    data: Dataset,
    params: ModelParams,
    d_x: DistanceMatrix,
    d_c: DistanceMatrix | None,
    dual: DualState,
    cfg: RobustnessConfig,
    loss_kind: str,
):
    """Analytic gradients of the dual estimator at fixed (B, eta).

    Returns ((grad_weights, grad_bias), grad_transport). With all hinges zero
    the robust term is flat and only the ridge and transport-cost gradients
    survive (0 is a valid subgradient at the kink).
    """
    losses = loss_vector(params, data, loss_kind)
    n = losses.size
    dsum = _combined_distance(d_x, d_c, n)
    if dual.size != n:
        raise ValueError(f"transport matrix is {dual.size}x{dual.size}, expected {n}x{n}")
    _, _, hinge, rms = _robust_parts(
        losses, dsum, dual.transport, dual.eta, cfg.alpha, cfg.lipschitz
    )
    if rms > 0.0:
        w = hinge / (n * rms)
    else:
        w = np.zeros(n)
    gw, gb = weighted_loss_grad(params, data, loss_kind, w)
    gw = gw / cfg.alpha + 2.0 * cfg.ridge * params.weights
    gb = gb / cfg.alpha
    grad_b = (cfg.lipschitz / n) * dsum - (w[:, None] - w[None, :]) / cfg.alpha
    return (gw, gb), grad_b


def _softplus(x, mu):
    z = x / mu
    return np.maximum(x, 0.0) + mu * np.log1p(np.exp(-np.abs(z)))


def _eta_smooth(a, alpha, mu):
    """Minimizer of the softplus-smoothed cutoff objective over eta >= 0."""

    def deriv(eta):
        sp = _softplus(a - eta, mu)
        sg = scipy.special.expit((a - eta) / mu)
        rms = math.sqrt(float(np.mean(sp * sp)))
        if rms == 0.0:
            return 1.0
        return 1.0 - float(np.mean(sp * sg)) / (alpha * rms)

    if deriv(0.0) >= 0.0:
        return 0.0
    lo, hi = 0.0, float(np.max(a)) + 40.0 * mu
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if deriv(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def minimize_dual(
    losses,
    d_x: DistanceMatrix,
    d_c: DistanceMatrix | None,
    alpha: float,
    lipschitz: float,
    max_iter: int = 2000,
):
    """Jointly minimize the dual estimator over (B, eta) at fixed losses.

    The value function of B (with eta inner-minimized) is convex but loses
    differentiability where the optimal eta collapses every hinge, which
    stalls quasi-Newton solvers. So the hinge is smoothed with a softplus and
    the smoothing width is driven to ~1e-12 by continuation, with L-BFGS-B
    warm-started at every level; the reported value re-evaluates the exact
    objective at the final transport matrix. Used by reduction/duality tests
    and diagnostics, not by the training loop.
    """
    losses = np.asarray(losses, dtype=float)
    n = losses.size
    dsum = _combined_distance(d_x, d_c, n)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if lipschitz < 0.0:
        raise ValueError(f"lipschitz must be >= 0, got {lipschitz}")
    cost_grad = (lipschitz / n) * dsum
    diag = np.eye(n, dtype=bool).ravel()
    bounds = [(0.0, 0.0) if d else (0.0, None) for d in diag]
    scale = max(1.0, float(np.max(np.abs(losses), initial=0.0)))

    def make_fun(mu):
        def fun(x):
            b = x.reshape(n, n)
            a = losses - (b.sum(axis=1) - b.sum(axis=0))
            eta = _eta_smooth(a, alpha, mu)
            sp = _softplus(a - eta, mu)
            sg = scipy.special.expit((a - eta) / mu)
            rms = math.sqrt(float(np.mean(sp * sp)))
            value = rms / alpha + float(np.vdot(dsum, b)) * (lipschitz / n) + eta
            w = sp * sg / (n * rms) if rms > 0.0 else np.zeros(n)
            grad = cost_grad - (w[:, None] - w[None, :]) / alpha
            return value, grad.ravel()

        return fun

    x = np.zeros(n * n)
    for mu in (1e-2 * scale, 1e-5 * scale, 1e-8 * scale, 1e-12 * scale):
        fun = make_fun(mu)
        f_prev = None
        for _ in range(4):
            res = scipy.optimize.minimize(
                fun,
                x,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": max_iter, "ftol": 1e-16, "gtol": 1e-12},
            )
            x = res.x
            if f_prev is not None and f_prev - res.fun <= 1e-15 * max(1.0, abs(f_prev)):
                break
            f_prev = res.fun
    b = x.reshape(n, n)
    netflow = b.sum(axis=1) - b.sum(axis=0)
    eta = solve_eta(losses - netflow, alpha)
    state = DualState(transport=b, eta=eta)
    robust, cost, _, _ = _robust_parts(losses, dsum, state.transport, eta, alpha, lipschitz)
    value = ObjectiveValue(
        total=robust + cost + eta,
        robust_term=robust,
        transport_cost=cost,
        eta_term=eta,
        ridge_term=0.0,
    )
    return value, state


def _pair_constraints(cap: np.ndarray, n: int):
    """Band constraints -cap[j,i] <= h_i - h_j <= cap[i,j] as (i, j, lo, hi).

    The two directed halfspaces of a pair are one convex set; merging them
    into an interval halves the work per alternating-projection sweep.
    """
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            hi = float(cap[i, j]) if np.isfinite(cap[i, j]) else math.inf
            lo = -float(cap[j, i]) if np.isfinite(cap[j, i]) else -math.inf
            if hi < math.inf or lo > -math.inf:
                pairs.append((i, j, lo, hi))
    return pairs


def _project_feasible(z, pairs, sqrt_n, max_sweeps=3000, tol=1e-13):
    """Nearest point of {h >= 0, mean h^2 <= 1, h_i - h_j <= c_ij} to z.

    Dykstra's alternating projections cycling through the pairwise
    halfspaces, the nonnegative orthant, and the norm ball, each with its
    own correction term. Pure-Python sweep; intended for test-scale n only,
    where plain float lists beat numpy per-element dispatch.

    Returns (h, sweeps) with sweeps the number of full cycles used.
    """
    x = [float(v) for v in np.asarray(z, dtype=float)]
    n = len(x)
    m = len(pairs)
    corr = [0.0] * m
    p_nn = [0.0] * n
    p_ball = [0.0] * n
    nsq = sqrt_n * sqrt_n
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        delta = 0.0
        for k in range(m):
            i, j, lo, hi = pairs[k]
            t = corr[k]
            zi = x[i] + t
            zj = x[j] - t
            diff = zi - zj
            if diff > hi:
                v = 0.5 * (diff - hi)
            elif diff < lo:
                v = 0.5 * (diff - lo)
            else:
                v = 0.0
            corr[k] = v
            nzi = zi - v
            nzj = zj + v
            delta += abs(nzi - x[i]) + abs(nzj - x[j])
            x[i] = nzi
            x[j] = nzj
        for i in range(n):
            zn = x[i] + p_nn[i]
            new = zn if zn > 0.0 else 0.0
            p_nn[i] = zn - new
            delta += abs(new - x[i])
            x[i] = new
        s = 0.0
        y = [0.0] * n
        for i in range(n):
            yi = x[i] + p_ball[i]
            y[i] = yi
            s += yi * yi
        mx = 0.0
        if s > nsq:
            scale = sqrt_n / math.sqrt(s)
            for i in range(n):
                new = y[i] * scale
                p_ball[i] = y[i] - new
                delta += abs(new - x[i])
                x[i] = new
                if new > mx:
                    mx = new
        else:
            for i in range(n):
                new = y[i]
                p_ball[i] = 0.0
                delta += abs(new - x[i])
                x[i] = new
                if new > mx:
                    mx = new
        if delta <= tol * (1.0 + mx):
            break
    return np.asarray(x), sweeps


def _violation(h, pairs, n):
    """Largest constraint violation of h (0 when feasible)."""
    v = max(0.0, -float(h.min(initial=0.0)))
    v = max(v, float(h @ h) / n - 1.0)
    hl = h.tolist()
    for i, j, lo, hi in pairs:
        diff = hl[i] - hl[j]
        if diff - hi > v:
            v = diff - hi
        if lo - diff > v:
            v = lo - diff
    return v


def _pocs_repair(h, pairs, sqrt_n, max_sweeps=500):
    """Plain cyclic projections into the feasible set (no Dykstra memory)."""
    x = np.array(h, dtype=float)
    for _ in range(max_sweeps):
        xl = x.tolist()
        worst = 0.0
        for i, j, lo, hi in pairs:
            diff = xl[i] - xl[j]
            if diff > hi:
                v = 0.5 * (diff - hi)
            elif diff < lo:
                v = 0.5 * (diff - lo)
            else:
                continue
            xl[i] -= v
            xl[j] += v
            if abs(v) > worst:
                worst = abs(v)
        x = np.maximum(np.asarray(xl), 0.0)
        nrm = float(np.linalg.norm(x))
        if nrm > sqrt_n:
            x *= sqrt_n / nrm
        if worst <= 1e-13:
            break
    # exact feasibility: clipping and shrinking never re-violate the caps
    x = np.maximum(x, 0.0)
    nrm = float(np.linalg.norm(x))
    if nrm > sqrt_n:
        x *= (1.0 - 1e-15) * sqrt_n / nrm
    return x


def primal_inner_sup_oracle(
    losses,
    d: DistanceMatrix,
    alpha: float,
    lipschitz: float,
    eta: float,
    h0=None,
    max_outer: int = 600,
    max_sweeps: int = 2000,
    tol: float = 1e-9,
) -> PrimalWitness:
    """Brute-force inner supremum max_h (1/n) sum h_i (l_i - eta).

    Feasible set: h >= 0, (1/n) sum h_i^2 <= 1, and h_i - h_j bounded by
    alpha * lipschitz * D_ij (the cap that makes (1/alpha) * sup + eta the
    exact primal counterpart of the dual estimator). Solved by projected
    gradient ascent whose projection runs Dykstra alternating projections,
    over a ladder of proximal step sizes; every iterate must pass a
    feasibility certificate before it counts. Test-scale only (n <= 32).

    max_outer bounds the total number of ascent steps across the ladder.
    Raises OracleConvergenceError carrying the best feasible witness if that
    budget runs out before the ladder completes.
    """
    losses = np.asarray(losses, dtype=float)
    n = losses.size
    if n > 32:
        raise ValueError(f"oracle is limited to n <= 32, got n={n}")
    if d.size != n:
        raise ValueError(f"distance matrix is {d.size}x{d.size}, expected {n}x{n}")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if lipschitz < 0.0:
        raise ValueError(f"lipschitz must be >= 0, got {lipschitz}")
    g = (losses - eta) / n
    cap = alpha * lipschitz * d.entries if np.isfinite(lipschitz) else None
    pairs = _pair_constraints(cap, n) if cap is not None else []
    sqrt_n = math.sqrt(n)

    if h0 is not None:
        h = _pocs_repair(np.asarray(h0, dtype=float), pairs, sqrt_n)
    else:
        h = np.zeros(n)
    gscale = float(np.max(np.abs(losses - eta))) + 1e-12
    sigma0 = 4.0 * n * sqrt_n / gscale

    # ascend through a ladder of proximal step sizes, each level warm-started
    # at the best certified point so far. Iterates that still violate the
    # certificate after repair are discarded along with the rest of that
    # level (larger steps only get worse).
    best_h = h.copy()
    best_f = float(g @ h)
    used = 0
    exhausted = False
    # fractional levels first: when the pair caps are tight relative to the
    # norm ball, a sigma0-sized step from the origin projects straight back
    # and the ascent stalls; sub-sigma0 steps stay near-feasible and climb
    mults = (0.015625, 0.125, 1.0, 8.0, 64.0, 512.0, 4096.0)
    # a level creeping along a face can gain just over tol forever; cap it and
    # let the next level's larger step cross the face in a few moves instead
    level_cap = max(2, max_outer // (2 * len(mults)))
    for mult in mults:
        sigma = mult * sigma0
        h = best_h.copy()
        prev_f = best_f
        flats = 0
        steps = 0
        while steps < level_cap:
            if used >= max_outer:
                exhausted = True
                break
            used += 1
            steps += 1
            h, _ = _project_feasible(h + sigma * g, pairs, sqrt_n, max_sweeps=max_sweeps)
            if _violation(h, pairs, n) > 1e-9 * (1.0 + float(np.max(np.abs(h)))):
                # a sweep-truncated projection can carry residual violations
                # on the scale of the truncation; cyclic repair restores exact
                # feasibility at a comparable value cost, which beats
                # discarding the step outright
                h = _pocs_repair(h, pairs, sqrt_n)
                if _violation(h, pairs, n) > 1e-9 * (1.0 + float(np.max(np.abs(h)))):
                    break
            f = float(g @ h)
            if f > best_f:
                best_f = f
                best_h = h.copy()
            if f <= prev_f + tol * max(1.0, abs(f)):
                flats += 1
                if flats >= 2:
                    break
            else:
                flats = 0
            prev_f = f
        if exhausted:
            break
    converged = not exhausted

    final = _pocs_repair(best_h, pairs, sqrt_n)
    witness = PrimalWitness(h=final, value=float(g @ final))
    if not converged:
        raise OracleConvergenceError(
            f"primal oracle did not stabilize within {max_outer} ascent steps", witness
        )
    return witness
