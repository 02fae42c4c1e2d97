"""Entropic optimal transport between 1-D point clouds.

Everything here works on empirical measures: ``n`` scalar support points with
a nonnegative weight vector summing to one.  Plans are dense ``n x n``
matrices.  The solver is plain Sinkhorn scaling with an automatic switch to
log-domain updates when the Gibbs kernel underflows, plus a moment-matched
closed form for Gaussian-like inputs that is projected back onto the marginal
polytope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "SinkhornError",
    "TransportPlan",
    "build_cost_matrix",
    "closed_form_params",
    "closed_form_plan",
    "fixed_plan",
    "hull_equality_witness",
    "ot_objective",
    "project_to_simplex",
    "sinkhorn_plan",
]

#: Feasibility slack used when validating marginals of a finished plan.
FEASIBILITY_TOL = 1e-6


class SinkhornError(RuntimeError):
    """Raised when the scaling iteration cannot produce a feasible plan."""


@dataclass(frozen=True)
class TransportPlan:
    """A dense coupling between two weighted point clouds.

    Attributes:
        values: ``(n, n)`` nonnegative matrix whose row sums approximate
            ``row_marginal`` and column sums ``col_marginal``.
        row_marginal: weights of the source points.
        col_marginal: weights of the target points.
        iterations: scaling iterations spent building the plan (0 for fixed
            plans).
        residual: sup-norm marginal violation reported by the solver.
    """

    values: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def marginal_residual(self) -> float:
        """Recompute the sup-norm violation of both marginal constraints."""
        row = np.abs(self.values.sum(axis=1) - self.row_marginal).max()
        col = np.abs(self.values.sum(axis=0) - self.col_marginal).max()
        return float(max(row, col))

    def validate(self, tol: float = FEASIBILITY_TOL) -> None:
        """Raise ``ValueError`` unless this is a feasible transport plan."""
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError(f"plan must be square, got shape {self.values.shape}")
        if np.any(self.values < 0):
            raise ValueError("plan entries must be nonnegative")
        res = self.marginal_residual()
        if res > tol:
            raise ValueError(f"plan marginals violated: residual {res:.3e} > {tol:.1e}")
        total = float(self.values.sum())
        if abs(total - 1.0) > tol * self.n:
            raise ValueError(f"plan total mass {total!r} differs from 1")


def _as_points(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"{name} must be a nonempty 1-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def _check_marginal(m: np.ndarray, n: int, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {m.shape}")
    if np.any(m < 0):
        raise ValueError(f"{name} must be nonnegative")
    if abs(m.sum() - 1.0) > 1e-8:
        raise ValueError(f"{name} must sum to 1, got {m.sum()!r}")
    return m


def build_cost_matrix(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared distances ``C[i, j] = (x[i] - y[j])**2``."""
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"point clouds must match in size: {x.size} vs {y.size}")
    return (x[:, None] - y[None, :]) ** 2


def fixed_plan(kind: str, n: int) -> TransportPlan:
    """Degenerate plans for the two regularization extremes.

    ``"diagonal"`` couples each point with its like-indexed partner
    (``diag(1/n)``, the unregularized same-index limit); ``"uniform"`` is the
    independent coupling (every entry ``1/n**2``, the infinite-regularization
    limit).  Both have uniform marginals.
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if kind == "diagonal":
        values = np.eye(n) / n
    elif kind == "uniform":
        values = np.full((n, n), 1.0 / n**2)
    else:
        raise ValueError(f"unknown fixed plan kind {kind!r}")
    unif = np.full(n, 1.0 / n)
    return TransportPlan(values, unif, unif)


def ot_objective(
    cost: np.ndarray,
    plan: TransportPlan,
    epsilon: float,
) -> float:
    """Transport cost plus entropic penalty of ``plan`` under ``cost``.

    Returns ``sum(C * P) + epsilon * KL(P || mu nu^T)`` with the convention
    ``0 * log 0 = 0``.
    """
    cost = np.asarray(cost, dtype=float)
    p = plan.values
    if cost.shape != p.shape:
        raise ValueError(f"cost shape {cost.shape} does not match plan {p.shape}")
    if np.any(p < 0):
        raise ValueError("plan entries must be nonnegative")
    linear = float((cost * p).sum())
    if epsilon == 0.0:
        return linear
    outer = plan.row_marginal[:, None] * plan.col_marginal[None, :]
    mask = p > 0
    kl = float(np.sum(p[mask] * np.log(p[mask] / outer[mask])))
    return linear + epsilon * kl


# ---------------------------------------------------------------------------
# Sinkhorn scaling
# ---------------------------------------------------------------------------


def _sinkhorn_dense(K, mu, nu, tol, budget):
    """Classic scaling updates on the kernel itself.

    Returns ``("ok", plan, iterations, residual)`` on convergence.  When a
    zero denominator shows up (the kernel is too small to scale) the result
    is ``("underflow", iterations, residual)``; when the budget runs out it
    is ``("budget", v, iterations, residual)`` so the caller can warm-start
    the log-domain path from ``v``.
    """
    n = K.shape[0]
    v = np.full(n, 1.0 / n)
    res = np.inf
    for it in range(budget):
        Kv = K @ v
        if np.any((Kv == 0.0) & (mu > 0)):
            return ("underflow", it, res)
        u = np.divide(mu, Kv, out=np.zeros_like(mu), where=Kv > 0)
        Ktu = K.T @ u
        if np.any((Ktu == 0.0) & (nu > 0)):
            return ("underflow", it, res)
        v = np.divide(nu, Ktu, out=np.zeros_like(nu), where=Ktu > 0)
        row = np.abs(u * (K @ v) - mu).max()
        col = np.abs(v * (K.T @ u) - nu).max()
        res = float(max(row, col))
        if res < tol:
            plan = u[:, None] * K * v[None, :]
            return ("ok", plan, it + 1, res)
    return ("budget", v, budget, res)


def _dual_residual(log_kernel, log_u, log_v, mu, nu):
    """Sup-norm marginal violation of ``exp(log_u + log_kernel + log_v)``.

    Overflowing trial potentials report ``inf`` rather than raising, which
    lets line searches reject them.
    """
    lr = logsumexp(log_kernel + log_v[None, :], axis=1) + log_u
    lc = logsumexp(log_kernel + log_u[:, None], axis=0) + log_v
    with np.errstate(over="ignore", invalid="ignore"):
        row = np.abs(np.exp(lr) - mu)
        col = np.abs(np.exp(lc) - nu)
    row[np.isnan(row)] = 0.0  # zero-mass rows contribute nothing
    col[np.isnan(col)] = 0.0
    return float(max(row.max(), col.max()))


def _newton_polish(log_kernel, log_u, log_v, mu, nu, tol, budget):
    """Newton steps on the dual potentials, with backtracking.

    The scaling fixed point solves ``grad D = 0`` for the concave dual
    ``D(f, g) = <mu, f> + <nu, g> - sum exp(f_i + logK_ij + g_j)``, whose
    Hessian blocks are the plan itself and its marginals.  Near the fixed
    point this converges quadratically where plain alternation crawls.
    Requires full-support marginals.  Returns
    ``(log_u, log_v, used, residual, converged)``.
    """
    n = mu.size
    res = _dual_residual(log_kernel, log_u, log_v, mu, nu)
    used = 0
    damp = 1e-12
    while used < budget and damp <= 1e6:
        used += 1
        plan = np.exp(log_u[:, None] + log_kernel + log_v[None, :])
        r = plan.sum(axis=1)
        c = plan.sum(axis=0)
        hess = np.block([[np.diag(r), plan], [plan.T, np.diag(c)]])
        # Peaked kernels leave the plan's support graph nearly disconnected,
        # which makes the Hessian singular beyond the usual additive
        # (f + t, g - t) direction; Levenberg-Marquardt damping keeps the
        # steps finite there and fades out when the step is accepted.
        hess[np.diag_indices_from(hess)] += damp * float(r.mean())
        rhs = np.concatenate([mu - r, nu - c])
        try:
            step = np.linalg.solve(hess, rhs)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, rhs, rcond=None)[0]
        scale = 1.0
        accepted = False
        for _ in range(12):
            trial_u = log_u + scale * step[:n]
            trial_v = log_v + scale * step[n:]
            trial_res = _dual_residual(log_kernel, trial_u, trial_v, mu, nu)
            if trial_res < res:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            damp *= 100.0
            continue
        damp = max(damp / 10.0, 1e-14)
        log_u, log_v, res = trial_u, trial_v, trial_res
        if res < tol:
            return log_u, log_v, used, res, True
    return log_u, log_v, used, res, False


def _scale_log_kernel(log_kernel, mu, nu, tol, max_iter, log_v0=None):
    """Sinkhorn scaling in the log domain, with a Newton finisher.

    ``log_kernel`` is any finite matrix of log weights; the result couples
    ``mu`` to ``nu`` as ``exp(log_u[:, None] + log_kernel + log_v[None, :])``.
    Zero-mass marginal entries are honored exactly.  Alternating updates do
    the coarse work; once the residual is small and both marginals have full
    support, Newton steps on the dual potentials finish the job (alternation
    alone can need millions of iterations on hard kernels).  Both kinds of
    step count toward ``max_iter``.

    Returns ``(plan, iterations, residual, log_u, log_v)`` where ``plan`` is
    ``None`` when the budget ran out; callers decide whether that is fatal.
    """
    with np.errstate(divide="ignore"):
        log_mu = np.log(mu)
        log_nu = np.log(nu)
    if log_v0 is None:
        # v starts at 1/n on the support; zero-mass columns never matter.
        log_v = np.where(nu > 0, -np.log(float(nu.size)), -np.inf)
    else:
        log_v = log_v0
    log_u = np.where(mu > 0, -np.log(float(mu.size)), -np.inf)
    full_support = bool(np.all(mu > 0) and np.all(nu > 0))
    res = np.inf
    it = 0
    while it < max_iter:
        lse_r = logsumexp(log_kernel + log_v[None, :], axis=1)
        log_u = log_mu - lse_r
        lse_c = logsumexp(log_kernel + log_u[:, None], axis=0)
        log_v = log_nu - lse_c
        it += 1
        # Column sums now match nu up to roundoff; the live violation is on
        # the row side with the fresh v.
        lse_r2 = logsumexp(log_kernel + log_v[None, :], axis=1)
        with np.errstate(invalid="ignore"):
            row = np.abs(np.exp(log_u + lse_r2) - mu)
        row[~np.isfinite(row)] = 0.0
        res = float(row.max())
        if res < tol:
            break
        if full_support and res < 1e-2 and it < max_iter:
            log_u, log_v, used, res, done = _newton_polish(
                log_kernel, log_u, log_v, mu, nu, tol, max_iter - it
            )
            it += used
            if done:
                break
    if res >= tol:
        return None, it, res, log_u, log_v
    plan = np.exp(log_u[:, None] + log_kernel + log_v[None, :])
    plan[~np.isfinite(plan)] = 0.0
    return plan, it, res, log_u, log_v


def sinkhorn_plan(
    cost: np.ndarray,
    mu: np.ndarray,
    nu: np.ndarray,
    epsilon: float,
    tol: float = 1e-9,
    max_iter: int = 10000,
    log_domain: bool | str = "auto",
) -> TransportPlan:
    """Entropy-regularized plan by alternating marginal scaling.

    Args:
        cost: ``(n, n)`` pairwise cost matrix.
        mu: source weights (nonnegative, sum 1).
        nu: target weights (nonnegative, sum 1).
        epsilon: entropic regularization strength, strictly positive.  The
            unregularized same-index coupling is available separately as
            ``fixed_plan("diagonal", n)``.
        tol: sup-norm marginal tolerance for the stopping rule.
        max_iter: iteration cap; exceeded caps raise ``SinkhornError``.
        log_domain: ``"auto"`` switches to log-domain updates when
            ``exp(-cost / epsilon)`` underflows anywhere; ``True`` forces the
            log path; ``False`` forbids it and raises on underflow.

    Returns:
        A feasible :class:`TransportPlan` (residual below ``tol``).
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost contains non-finite entries")
    n = cost.shape[0]
    mu = _check_marginal(mu, n, "mu")
    nu = _check_marginal(nu, n, "nu")
    if epsilon <= 0:
        raise ValueError(
            f"epsilon must be > 0, got {epsilon!r}; use fixed_plan('diagonal', n) "
            "for the unregularized same-index limit"
        )
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol!r}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter!r}")
    if log_domain not in (True, False, "auto"):
        raise ValueError(f"log_domain must be True, False, or 'auto', got {log_domain!r}")

    log_kernel = -cost / epsilon
    use_log = log_domain is True
    spent = 0
    warm_v = None
    if not use_log:
        with np.errstate(under="ignore"):
            K = np.exp(log_kernel)
        if np.any(K == 0.0):
            if log_domain is False:
                raise SinkhornError(
                    "kernel exp(-cost/epsilon) underflowed; raise epsilon or "
                    "enable the log-domain fallback (log_domain='auto')"
                )
            use_log = True
        else:
            # Hand stubborn instances to the log path, which has the Newton
            # finisher, instead of burning the whole budget on alternation.
            budget = max_iter if log_domain is False else min(1000, max_iter)
            out = _sinkhorn_dense(K, mu, nu, tol, budget)
            if out[0] == "ok":
                _, values, iters, res = out
                return TransportPlan(values, mu, nu, iterations=iters, residual=res)
            if out[0] == "underflow":
                _, spent, res = out
                if log_domain is False:
                    raise SinkhornError(
                        "kernel exp(-cost/epsilon) underflowed during scaling; "
                        "raise epsilon or enable the log-domain fallback "
                        "(log_domain='auto')"
                    )
            else:
                _, v, spent, res = out
                if log_domain is False or spent >= max_iter:
                    raise SinkhornError(
                        f"no convergence after {spent} iterations (residual "
                        f"{res:.3e}, tolerance {tol:.1e}); raise maxIter or epsilon"
                    )
                with np.errstate(divide="ignore"):
                    warm_v = np.log(v)
            use_log = True

    # Small epsilon against a wide cost range makes the kernel so peaked that
    # cold-started alternation either crawls or, worse, wanders to a spurious
    # fixed point once the true pairing's entries underflow out of the
    # numerically live support.  A geometric epsilon ladder avoids both: each
    # rung is solved tightly (the Newton finisher makes that cheap), so the
    # carried dual potentials stay accurate enough that shrinking epsilon
    # never drops a needed kernel entry out of the representable log window.
    # Only the final stage enforces the requested tolerance of the requested
    # kernel, so the returned plan is still its diag(u) K diag(v) scaling.
    max_c = float(cost.max())
    if warm_v is None and max_c > 0 and max_c / epsilon > 200.0:
        log_v = None
        eps_k = max_c / 20.0
        while eps_k > 4.0 * epsilon and spent < max_iter:
            budget = min(300, max_iter - spent)
            _, used, _, _, log_v = _scale_log_kernel(
                -cost / eps_k, mu, nu, tol, budget, log_v0=log_v
            )
            spent += used
            eps_next = max(eps_k / 4.0, epsilon)
            log_v = log_v * (eps_k / eps_next)  # rescale the dual potential
            eps_k = eps_next
        # The loop can stop with the potential still in units of a coarser
        # rung; bring it to the requested epsilon's units before the final
        # stage (log potentials scale as 1/epsilon at fixed physical duals).
        if log_v is not None:
            log_v = log_v * (eps_k / epsilon)
        warm_v = log_v

    values, iters, res, _, _ = _scale_log_kernel(
        log_kernel, mu, nu, tol, max_iter - spent, log_v0=warm_v
    )
    if values is None:
        raise SinkhornError(
            f"no convergence after {spent + iters} iterations (residual "
            f"{res:.3e}, tolerance {tol:.1e}); raise maxIter or epsilon"
        )
    return TransportPlan(values, mu, nu, iterations=spent + iters, residual=res)


# ---------------------------------------------------------------------------
# Moment-matched closed form
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClosedFormParams:
    """Scalar moments behind the closed-form coupling."""

    psi: float
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    d_psi: float


def closed_form_params(x: np.ndarray, y: np.ndarray, epsilon: float) -> ClosedFormParams:
    """Moments of the closed-form Gaussian coupling of two 1-D samples.

    ``psi = sqrt(epsilon / 2)`` and ``d_psi = sqrt(4 var(x) var(y) + psi**4)``.
    """
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon!r}")
    psi = float(np.sqrt(epsilon / 2.0))
    var_x = float(np.var(x))
    var_y = float(np.var(y))
    d_psi = float(np.sqrt(4.0 * var_x * var_y + psi**4))
    return ClosedFormParams(
        psi=psi,
        mean_x=float(np.mean(x)),
        mean_y=float(np.mean(y)),
        var_x=var_x,
        var_y=var_y,
        d_psi=d_psi,
    )


def closed_form_plan(
    x: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    cross_covariance: str = "box",
    tol: float = 1e-9,
    max_iter: int = 10000,
) -> TransportPlan:
    """Plan from the bivariate-Gaussian closed form, evaluated on the sample grid.

    The joint density with marginal variances ``var(x)``, ``var(y)`` and
    cross-covariance ``d_psi / 2`` (variant ``"box"``) or
    ``(d_psi - psi**2) / 2`` (variant ``"shifted"``) is evaluated at every
    pair ``(x[i], y[j])``, then rescaled by Sinkhorn iterations until both
    marginals are uniform within ``tol``.  Inputs need at least two points
    and nonzero variance on each side.
    """
    x = _as_points(x, "x")
    y = _as_points(y, "y")
    if x.size != y.size:
        raise ValueError(f"point clouds must match in size: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("closed form needs at least two points per side")
    params = closed_form_params(x, y, epsilon)
    if params.var_x == 0.0 or params.var_y == 0.0:
        raise ValueError("closed form needs nonzero variance on both sides")
    if cross_covariance == "box":
        c = 0.5 * params.d_psi
    elif cross_covariance == "shifted":
        c = 0.5 * (params.d_psi - params.psi**2)
    else:
        raise ValueError(f"unknown cross_covariance variant {cross_covariance!r}")

    det = params.var_x * params.var_y - c * c
    if det == 0.0:
        raise ValueError("degenerate closed-form covariance (det = 0)")
    dx = x[:, None] - params.mean_x
    dy = y[None, :] - params.mean_y
    # Unnormalized log density of the bivariate form; for the "box" variant
    # the matrix is indefinite, so this is a plain quadratic weight rather
    # than a proper density.  The marginal projection below absorbs that.
    quad = (params.var_y * dx**2 - 2.0 * c * dx * dy + params.var_x * dy**2) / det
    log_kernel = -0.5 * quad
    n = x.size
    unif = np.full(n, 1.0 / n)
    values, iters, res, _, _ = _scale_log_kernel(log_kernel, unif, unif, tol, max_iter)
    if values is None:
        raise SinkhornError(
            f"marginal projection did not converge after {iters} iterations "
            f"(residual {res:.3e}, tolerance {tol:.1e}); raise maxIter"
        )
    return TransportPlan(values, unif, unif, iterations=iters, residual=res)


# ---------------------------------------------------------------------------
# Convex-hull distance interpolation witness
# ---------------------------------------------------------------------------


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, n + 1) > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def hull_equality_witness(
    x: np.ndarray,
    points: np.ndarray,
    weights: np.ndarray,
    tol: float = 1e-8,
    pgd_iters: int = 200,
    bisect_depth: int = 64,
) -> np.ndarray:
    """Convex weights realizing an average of squared distances exactly.

    Given a point ``x``, a finite set ``points`` (rows), and convex weights
    ``weights`` over it, the weighted average of squared distances
    ``g = sum_j weights[j] * ||x - points[j]||**2`` always lies between the
    squared distance from ``x`` to the convex hull and the squared distance
    to the farthest vertex.  This returns convex weights ``nu`` with
    ``| ||x - sum_j nu[j] points[j]||**2 - g | <= tol``.

    The two bracket endpoints are the hull point closest to ``x`` (projected
    gradient on the simplex, ``pgd_iters`` fixed iterations with step one
    over the largest squared vertex norm, improved with the nearest vertex)
    and the farthest vertex; bisection along the connecting segment then
    pins the equality to ``bisect_depth`` halvings.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    m, d = pts.shape
    if x.shape != (d,):
        raise ValueError(f"x must have shape ({d},), got {x.shape}")
    w_hat = np.asarray(weights, dtype=float)
    if w_hat.shape != (m,):
        raise ValueError(f"weights must have shape ({m},), got {w_hat.shape}")
    if np.any(w_hat < -1e-12) or abs(w_hat.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be convex (nonnegative, sum 1)")

    sq_dists = ((x[None, :] - pts) ** 2).sum(axis=1)
    target = float(w_hat @ sq_dists)

    def f(nu):
        diff = x - nu @ pts
        return float(diff @ diff)

    # Closest point of the hull: fixed-step projected gradient, keeping the
    # best iterate, then compare with the nearest vertex so the lower end of
    # the bracket is guaranteed not to exceed the target.
    step = 1.0 / max(float((pts**2).sum(axis=1).max()), 1e-30)
    nu = np.full(m, 1.0 / m)
    best_nu, best_val = nu, f(nu)
    for _ in range(pgd_iters):
        grad = pts @ (nu @ pts - x)
        nu = project_to_simplex(nu - step * grad)
        val = f(nu)
        if val < best_val:
            best_nu, best_val = nu, val
    nearest = np.zeros(m)
    nearest[int(np.argmin(sq_dists))] = 1.0
    if f(nearest) < best_val:
        best_nu, best_val = nearest, f(nearest)

    farthest = np.zeros(m)
    farthest[int(np.argmax(sq_dists))] = 1.0

    lo_nu, hi_nu = best_nu, farthest
    if not (f(lo_nu) <= target + 1e-12 and f(hi_nu) >= target - 1e-12):
        raise RuntimeError(
            "bisection bracket failed; the interpolation bound guarantees "
            "existence, so this indicates a bug"
        )

    best = min((abs(f(lo_nu) - target), lo_nu), (abs(f(hi_nu) - target), hi_nu),
               key=lambda t: t[0])
    lo, hi = 0.0, 1.0
    for _ in range(bisect_depth):
        mid = 0.5 * (lo + hi)
        nu_mid = (1.0 - mid) * lo_nu + mid * hi_nu
        val = f(nu_mid)
        if abs(val - target) < best[0]:
            best = (abs(val - target), nu_mid)
        if val <= target:
            lo = mid
        else:
            hi = mid
    if best[0] > tol:
        raise RuntimeError(
            f"witness residual {best[0]:.3e} above tolerance {tol:.1e}; "
            "indicates a bug, not a user error"
        )
    return best[1]
