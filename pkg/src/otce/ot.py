"""Entropic optimal transport between empirical distributions.

The solver keeps the dual potentials ``f`` (rows) and ``g`` (columns) in
cost units, so the plan is always recovered as

    plan[i, j] = exp((f[i] + g[j] - cost[i, j]) / epsilon)

and never from an underflowing Gibbs kernel.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve
from scipy.spatial.distance import cdist

DEFAULT_EPSILON = 0.1
DEFAULT_MAX_ITERS = 1000
DEFAULT_TOL = 1e-9
CHECK_EVERY = 10

# Accelerated solver tuning.
_EPS_DECAY = 0.5
_STAGE_TOL = 1e-2
_STAGE_MAX_SWEEPS = 30
_NEWTON_SWITCH = 1e-3
_FINAL_MAX_SWEEPS = 100
_OMEGA = 1.8
_ABSORB_LOG = 50.0
_MAX_LOG_STEP = 30.0
_RESYNC_EVERY = 10
_MAX_HALVINGS = 30
_MIN_RADIUS = 1e-3
_NEWTON_ROUND = 150
# plan entries above this share of min(a_i, b_j) tie a row and a column into one block
_BLOCK_LINK = 1e-3
# cross-block masses below this share of the largest are left out of the block problem
_BLOCK_DROP = 1e-40
_BLOCK_MAX_STEPS = 30

EXACT_OT_MAX_CELLS = 400


@dataclass(frozen=True)
class Coupling:
    """A transport plan together with how well it meets its marginals.

    ``row_marginal_error`` and ``col_marginal_error`` are L1 deviations of the
    plan's row and column sums from the requested weights.
    """

    plan: np.ndarray
    row_marginal_error: float
    col_marginal_error: float
    iterations_used: int
    epsilon: float
    converged: bool

    @property
    def marginal_error(self) -> float:
        return max(self.row_marginal_error, self.col_marginal_error)

    @property
    def shape(self) -> tuple[int, int]:
        return self.plan.shape


def cost_matrix(source_features, target_features) -> np.ndarray:
    """Squared Euclidean distances between every source and target row."""
    u = np.asarray(source_features, dtype=np.float64)
    v = np.asarray(target_features, dtype=np.float64)
    if u.ndim != 2 or v.ndim != 2:
        raise ValueError("features must be 2-d arrays")
    if u.shape[1] != v.shape[1]:
        raise ValueError(
            f"dimension mismatch: source has d={u.shape[1]}, target has d={v.shape[1]}"
        )
    return cdist(u, v, metric="sqeuclidean")


def median_normalized(cost: np.ndarray) -> np.ndarray:
    """Divide a cost matrix by its median entry (experimental, off by default)."""
    med = float(np.median(cost))
    if med <= 0:
        return np.array(cost, dtype=np.float64)
    return np.asarray(cost, dtype=np.float64) / med


def uniform_weights(k: int) -> np.ndarray:
    return np.full(k, 1.0 / k)


def _check_cost(cost) -> np.ndarray:
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] < 1 or C.shape[1] < 1:
        raise ValueError("cost must be a non-empty 2-d matrix")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost has non-finite entries")
    if np.any(C < 0):
        raise ValueError("cost has negative entries")
    return C


def _check_weights(w, k: int, name: str) -> np.ndarray:
    if w is None:
        return uniform_weights(k)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (k,):
        raise ValueError(f"{name} must have length {k}, got shape {w.shape}")
    if not np.all(w > 0):
        raise ValueError(f"{name} must be strictly positive")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must sum to 1 (got {w.sum()!r})")
    return w


# -- log-sum-exp helpers ------------------------------------------------------


def _lse_rows(M: np.ndarray) -> np.ndarray:
    mx = M.max(axis=1)
    return mx + np.log(np.exp(M - mx[:, None]).sum(axis=1))


def _lse_cols(M: np.ndarray) -> np.ndarray:
    mx = M.max(axis=0)
    return mx + np.log(np.exp(M - mx[None, :]).sum(axis=0))


def _update_f(C, la, g, eps):
    return eps * (la - _lse_rows((g[None, :] - C) / eps))


def _update_g(C, lb, f, eps):
    return eps * (lb - _lse_cols((f[:, None] - C) / eps))


def _plan(C, f, g, eps):
    return np.exp((f[:, None] + g[None, :] - C) / eps)


# -- plain log-domain iterations -------------------------------------------------


def _solve_log(C, a, b, eps, max_iters, tol):
    la, lb = np.log(a), np.log(b)
    f = np.zeros(C.shape[0])
    g = np.zeros(C.shape[1])
    used = 0
    while used < max_iters:
        f = _update_f(C, la, g, eps)
        g = _update_g(C, lb, f, eps)
        used += 1
        if used % CHECK_EVERY == 0:
            # columns are exact after the g update; rows carry the error
            rows = np.exp(f / eps + _lse_rows((g[None, :] - C) / eps))
            if np.abs(rows - a).sum() <= tol:
                break
    return f, g, used


# -- accelerated solver ---------------------------------------------------------


def _scaling_sweeps(C, a, b, eps, f, g, budget, stop_err, check_every):
    """Over-relaxed matrix scaling on a kernel absorbed into (f, g).

    Returns updated potentials, sweeps used and the last measured error.
    """
    la, lb = np.log(a), np.log(b)

    def absorb(f, g):
        f = _update_f(C, la, g, eps)
        g = _update_g(C, lb, f, eps)
        return f, g, _plan(C, f, g, eps)

    f, g, K = absorb(f, g)
    used = 1
    err = float(np.abs(K.sum(axis=1) - a).sum())
    m, n = C.shape
    u, v = np.ones(m), np.ones(n)
    omega = _OMEGA
    prev = np.inf
    sweeps = 0
    while used < budget and err > stop_err:
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            u_new = a / (K @ v)
            if omega != 1.0:
                u_new = u ** (1.0 - omega) * u_new**omega
            v_new = b / (K.T @ u_new)
            if omega != 1.0:
                v_new = v ** (1.0 - omega) * v_new**omega
        used += 1
        sweeps += 1
        ok = np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))
        ok = ok and np.all(u_new > 0) and np.all(v_new > 0)
        if not ok:
            # fold the last good scalings back into the potentials
            f, g = f + eps * np.log(u), g + eps * np.log(v)
            f, g, K = absorb(f, g)
            used += 1
            u, v = np.ones(m), np.ones(n)
            omega = 1.0
            continue
        u, v = u_new, v_new
        if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > _ABSORB_LOG:
            f, g = f + eps * np.log(u), g + eps * np.log(v)
            f, g, K = absorb(f, g)
            used += 1
            u, v = np.ones(m), np.ones(n)
        if sweeps % check_every == 0:
            rows = u * (K @ v)
            cols = v * (K.T @ u)
            err = float(max(np.abs(rows - a).sum(), np.abs(cols - b).sum()))
            if err >= prev:
                omega = 1.0
            prev = err
    return f + eps * np.log(u), g + eps * np.log(v), used, err


def _half_range(x: np.ndarray) -> float:
    return 0.5 * float(x.max() - x.min())


def _to_boundary(x, p, radius, hi):
    """``x + t*p`` with the largest ``t`` in [0, hi] whose half-range is within ``radius``."""
    lo = 0.0
    # half_range(x + t*p) >= t*half_range(p) - half_range(x) bounds the crossing,
    # and the half-range is convex in t, so bisection brackets it
    span_p = _half_range(p)
    if span_p > 0:
        hi = min(hi, (radius + _half_range(x)) / span_p)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _half_range(x + mid * p) <= radius:
            lo = mid
        else:
            hi = mid
    return x + lo * p


def _newton(C, a, b, eps, f, g, budget, tol):
    """Inexact Newton ascent on the dual with rows kept normalized.

    For fixed column potentials ``g`` the best row potentials are closed-form,
    leaving a smooth concave function of ``g`` whose Hessian is
    ``-(diag(colsum) - P^T diag(1/a) P) / eps``.  The Newton system is solved
    by preconditioned conjugate gradients.  Trial steps ``g + t*x`` are scored
    through ``expm1``/``log1p`` so the dual gain stays accurate when it is tiny.
    Every CG product and every trial step costs one pass over ``P`` and counts
    as one iteration.
    """
    la = np.log(a)
    # potentials never need to move by more than the cost span
    max_radius = max(float(C.max() - C.min()), _MAX_LOG_STEP * eps)
    radius = _MAX_LOG_STEP * eps

    def normalized(g):
        f = _update_f(C, la, g, eps)
        return f, _plan(C, f, g, eps)

    f, P = normalized(g)
    used = 1
    since_sync = 0
    while used < budget:
        if since_sync >= _RESYNC_EVERY:
            f, P = normalized(g)
            used += 1
            since_sync = 0
            continue
        colsum = P.sum(axis=0)
        grad = b - colsum
        err = np.abs(grad).sum()
        if err <= tol:
            if since_sync == 0:
                return f, g, used, True
            # entries that underflowed in the tracked plan may have regrown
            since_sync = _RESYNC_EVERY
            continue

        diag = colsum - np.einsum("ij,ij,i->j", P, P, 1.0 / a)
        precond = 1.0 / np.maximum(diag, 1e-300 + 1e-14 * colsum)
        rhs = eps * grad
        x = np.zeros_like(g)
        r = rhs.copy()
        z = precond * r
        p = z.copy()
        rz = r @ z
        rhs_norm = np.abs(rhs).sum()
        # superlinear forcing, but never solve past what the tolerance needs:
        # the linear model predicts the new error from the residual
        forcing = min(0.5, max(min(0.1, np.sqrt(err)), 0.5 * tol / err))
        boundary = False
        # exact arithmetic would finish in n products; more only chases rounding
        cg_stop = min(budget, used + C.shape[1] + 1)
        while used < cg_stop:
            Sp = colsum * p - P.T @ ((P @ p) / a)
            used += 1
            pSp = p @ Sp
            if not pSp > 0:
                # curvature lost to cancellation; the preconditioned
                # gradient is still an ascent direction
                if not np.any(x):
                    x = p
                break
            alpha = rz / pSp
            if _half_range(x + alpha * p) > radius:
                # truncated CG: stop where the path leaves the trust region
                x = _to_boundary(x, p, radius, alpha)
                boundary = True
                break
            x += alpha * p
            r -= alpha * Sp
            if np.abs(r).sum() <= forcing * rhs_norm:
                break
            z = precond * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        if not np.any(x):
            break
        # constant shifts of g are absorbed by the row normalization; centering
        # keeps them from eating the trust radius
        x -= 0.5 * (x.max() + x.min())

        slope = grad @ x
        # gains below this are rounding noise in the dual value
        noise = 1e-12 * (abs(a @ f) + abs(b @ g) + eps)
        xmax = np.abs(x).max()
        step = min(1.0, radius / xmax)
        accepted = False
        for halvings in range(_MAX_HALVINGS):
            if used >= budget:
                break
            used += 1
            if step * xmax > _MAX_LOG_STEP * eps:
                # large moves: re-normalize rows exactly in the log domain
                g_try = g + step * x
                f_try = _update_f(C, la, g_try, eps)
                P_try = _plan(C, f_try, g_try, eps)
                gain = a @ (f_try - f) + step * (b @ x)
                err_try = np.abs(P_try.sum(axis=0) - b).sum()
                if gain >= 1e-4 * step * slope or (err_try < err and gain >= -noise):
                    f, g, P = f_try, g_try, P_try
                    since_sync = 0
                    accepted = True
                    break
                step *= 0.5
                continue
            em1 = np.expm1(step * x / eps)
            q = (P @ em1) / a
            far = q < -0.5
            if np.any(far):
                # q can round below -1 when a row loses almost all its mass
                log_rows = np.log1p(np.where(far, 0.0, q))
                log_rows[far] = np.log((P[far] @ (em1 + 1.0)) / a[far])
            else:
                log_rows = np.log1p(q)
            shrink = np.exp(-log_rows)
            col_try = (em1 + 1.0) * (P.T @ shrink)
            err_try = np.abs(col_try - b).sum()
            gain = step * (b @ x) - eps * (a @ log_rows)
            if gain >= 1e-4 * step * slope or (err_try < err and gain >= -noise):
                P = P * shrink[:, None] * (em1 + 1.0)[None, :]
                f = f - eps * log_rows
                g = g + step * x
                since_sync += 1
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        # grow after a full step to the boundary, shrink to any shortened move
        if halvings == 0:
            if boundary:
                radius = min(2.0 * radius, max_radius)
        else:
            radius = max(step * xmax, _MIN_RADIUS * eps)
    return f, g, used, False


def _block_balance(C, a, b, eps, f, g, tol, budget):
    """Shift weakly coupled blocks of the plan against each other.

    Rows and columns linked by plan entries above ``_BLOCK_LINK * min(a_i, b_j)``
    form blocks.  Moving block ``K`` by ``d_K`` (``f -= d_K`` on its rows,
    ``g += d_K`` on its columns) keeps its internal entries and rescales the
    mass from block ``B`` to block ``K`` by ``exp((d_K - d_B) / eps)``.  The dual
    restricted to these moves is a small concave problem on the block graph
    whose Hessian is a graph Laplacian; Newton with a sparse direct solve
    handles it.  Near-assignment plans split into many such blocks, and the
    directions between them are nearly flat for the fine-level solvers.

    Building the blocks costs two passes over the plan and every check of the
    move against the full dual costs one.  Each block Newton step is charged
    one more although it works on the sparse block graph only.  Returns
    updated potentials and iterations used, at most ``budget``.
    """
    m, n = C.shape
    P = _plan(C, f, g, eps)
    rows, cols = np.nonzero(P > _BLOCK_LINK * np.minimum(a[:, None], b[None, :]))
    links = coo_matrix((np.ones(rows.size), (rows, cols + m)), shape=(m + n, m + n))
    k, label = connected_components(links, directed=False)
    used = 2
    if k < 2:
        return f, g, used
    row_block, col_block = label[:m], label[m:]
    R = csr_matrix((np.ones(m), (row_block, np.arange(m))), shape=(k, m))
    Z = csr_matrix((np.ones(n), (np.arange(n), col_block)), shape=(n, k))
    mass = np.asarray(R @ np.asarray(P @ Z))
    np.fill_diagonal(mass, 0.0)
    if not mass.max() > 0:
        return f, g, used
    src, dst = np.nonzero(mass > _BLOCK_DROP * mass.max())
    w = mass[src, dst]
    net = np.bincount(col_block, weights=b, minlength=k) - np.bincount(row_block, weights=a, minlength=k)
    # a block that lost all its cross mass makes the block problem unbounded
    max_move = max(float(C.max() - C.min()), _MAX_LOG_STEP * eps)

    def value(d):
        with np.errstate(over="ignore"):
            e = w * np.exp((d[dst] - d[src]) / eps)
        return d @ net - eps * e.sum(), e

    d = np.zeros(k)
    val, e = value(d)
    target = 1e-3 * (np.abs(P.sum(axis=0) - b).sum() + tol)
    for _ in range(_BLOCK_MAX_STEPS):
        grad = net - np.bincount(dst, weights=e, minlength=k) + np.bincount(src, weights=e, minlength=k)
        if np.abs(grad).sum() <= target or used >= budget - 1:
            break
        used += 1
        W = coo_matrix((e, (src, dst)), shape=(k, k)).tocsr()
        W = W + W.T
        degree = np.asarray(W.sum(axis=1)).ravel()
        # the ridge pins the constant null direction and any cut the dropped masses open
        ridge = 1e-12 * degree.max() + 1e-300
        L = (diags(degree + ridge) - W).tocsc()
        x = spsolve(L, eps * grad)
        if not np.all(np.isfinite(x)):
            break
        x -= 0.5 * (x.max() + x.min())
        x = _to_boundary(d, x, max_move, 1.0) - d
        slope = grad @ x
        t = 1.0
        for _ in range(60):
            new_val, new_e = value(d + t * x)
            if new_val >= val + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        d = d + t * x
        val, e = new_val, new_e

    # the block problem leaves out dropped and underflowed masses; keep the
    # move only where the full dual gains too
    while np.any(d) and used < budget:
        used += 1
        shift = (d[col_block][None, :] - d[row_block][:, None]) / eps
        with np.errstate(over="ignore", invalid="ignore"):
            gain = d @ net - eps * np.sum(P * np.expm1(shift))
        if gain >= 0:
            return f - d[row_block], g + d[col_block], used
        d *= 0.5
    return f, g, used


def _solve_accelerated(C, a, b, eps, max_iters, tol):
    span = float(C.max() - C.min())
    schedule = []
    e = span
    while e > eps:
        schedule.append(e)
        e *= _EPS_DECAY
    schedule.append(eps)

    f = np.zeros(C.shape[0])
    g = np.zeros(C.shape[1])
    used = 0
    for stage_eps in schedule[:-1]:
        budget = min(max_iters - used, _STAGE_MAX_SWEEPS)
        if budget < 1:
            break
        f, g, k, _ = _scaling_sweeps(C, a, b, stage_eps, f, g, budget, _STAGE_TOL, 1)
        used += k

    # at the target epsilon, alternate a bounded round of sweeps with Newton
    # rounds, each preceded by block balancing; a stalled Newton round falls
    # back to sweeps, and the line searches keep every step safe
    while used < max_iters:
        budget = min(max_iters - used, _FINAL_MAX_SWEEPS)
        f, g, k, err = _scaling_sweeps(
            C, a, b, eps, f, g, budget, max(tol, _NEWTON_SWITCH), CHECK_EVERY
        )
        used += k
        if err <= tol or used >= max_iters:
            break
        while max_iters - used > 2:
            f, g, k = _block_balance(C, a, b, eps, f, g, tol, max_iters - used - 1)
            used += k
            budget = min(max_iters - used, _NEWTON_ROUND)
            f, g, k, done = _newton(C, a, b, eps, f, g, budget, tol)
            used += k
            if done:
                return f, g, used
            if k < budget:
                break
    return f, g, used


def sinkhorn(
    cost,
    a=None,
    b=None,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    *,
    accelerate: bool = True,
) -> Coupling:
    """Solve entropy-regularized optimal transport.

    Minimizes ``<cost, P> - epsilon * H(P)`` with ``H(P) = -sum P log P`` over
    couplings with row sums ``a`` and column sums ``b`` (uniform by default).

    Parameters
    ----------
    cost : (m, n) array
        Nonnegative finite transport costs.
    a, b : array, optional
        Strictly positive marginal weights summing to one.
    epsilon : float
        Entropic regularization weight.
    max_iters : int
        Hard cap on iterations. With ``accelerate`` every sweep, absorption,
        conjugate-gradient product, line-search evaluation and other pass over
        the plan counts as one, and so does every block rebalancing step.
    tol : float
        Target for the largest L1 marginal error.
    accelerate : bool
        If False, run the textbook log-domain iteration (alternating
        log-sum-exp updates of both potentials). If True, warm-start with
        epsilon-scaling and over-relaxed absorbed-kernel sweeps and finish
        with Newton steps on the dual, interleaved with moves that rebalance
        weakly coupled blocks of the plan. Both converge to the same plan.

    Returns
    -------
    Coupling
        Always returned, converged or not; the achieved errors are recorded.
    """
    C = _check_cost(cost)
    m, n = C.shape
    a = _check_weights(a, m, "a")
    b = _check_weights(b, n, "b")
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    if not tol > 0:
        raise ValueError("tol must be positive")

    solve = _solve_accelerated if accelerate else _solve_log
    f, g, used = solve(C, a, b, float(epsilon), int(max_iters), float(tol))
    plan = _plan(C, f, g, epsilon)
    if not np.all(np.isfinite(plan)):
        raise FloatingPointError("internal error: non-finite transport plan")
    row_err = float(np.abs(plan.sum(axis=1) - a).sum())
    col_err = float(np.abs(plan.sum(axis=0) - b).sum())
    return Coupling(
        plan=plan,
        row_marginal_error=row_err,
        col_marginal_error=col_err,
        iterations_used=used,
        epsilon=float(epsilon),
        converged=max(row_err, col_err) <= tol,
    )


def transport_cost(cost, plan) -> float:
    return float(np.sum(np.asarray(cost) * np.asarray(plan)))


# -- exact oracle -------------------------------------------------------------------


def _northwest_corner(a, b):
    m, n = len(a), len(b)
    flow = np.zeros((m, n))
    basic = np.zeros((m, n), dtype=bool)
    supply, demand = a.copy(), b.copy()
    i = j = 0
    while True:
        x = min(supply[i], demand[j])
        flow[i, j] = x
        basic[i, j] = True
        supply[i] -= x
        demand[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if j == n - 1 or (i < m - 1 and supply[i] <= demand[j]):
            i += 1
        else:
            j += 1
    return flow, basic


def _tree_adjacency(basic):
    m, n = basic.shape
    adj = [[] for _ in range(m + n)]
    for i, j in zip(*np.nonzero(basic)):
        adj[i].append(m + j)
        adj[m + j].append(i)
    return adj


def _potentials(C, basic):
    m, n = C.shape
    adj = _tree_adjacency(basic)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nxt in adj[node]:
            if np.isnan(pot[nxt]):
                if node < m:
                    pot[nxt] = C[node, nxt - m] - pot[node]
                else:
                    pot[nxt] = C[nxt, node - m] - pot[node]
                queue.append(nxt)
    return pot[:m], pot[m:], adj


def _tree_path(adj, start, goal):
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt in adj[node]:
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    path = [goal]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def exact_ot(cost, a=None, b=None, max_pivots: int = 10_000):
    """Unregularized optimal transport by the transportation simplex method.

    Intended as a test oracle on tiny instances (at most 400 cells). Returns
    ``(plan, cost_value)`` where ``cost_value = <cost, plan>``.
    """
    C = _check_cost(cost)
    m, n = C.shape
    if m * n > EXACT_OT_MAX_CELLS:
        raise ValueError(f"instance too large for exact_ot: {m}x{n} > {EXACT_OT_MAX_CELLS} cells")
    a = _check_weights(a, m, "a")
    b = _check_weights(b, n, "b")

    flow, basic = _northwest_corner(a, b)
    thresh = -1e-12 * (1.0 + float(C.max()))
    degenerate_run = 0
    for _ in range(max_pivots):
        u, v, adj = _potentials(C, basic)
        reduced = C - u[:, None] - v[None, :]
        reduced[basic] = 0.0
        candidates = np.argwhere(reduced < thresh)
        if len(candidates) == 0:
            break
        if degenerate_run > 50:
            # Bland-style choice to escape degenerate cycling
            i0, j0 = candidates[0]
        else:
            i0, j0 = np.unravel_index(np.argmin(reduced), reduced.shape)

        # cycle: entering cell, then the tree path from column j0 back to row i0
        nodes = _tree_path(adj, m + j0, i0)
        cells = [(int(i0), int(j0))]
        for p, q in zip(nodes[:-1], nodes[1:]):
            cells.append((q, p - m) if p >= m else (p, q - m))
        minus = cells[1::2]
        theta = min(flow[c] for c in minus)
        leaving = next(c for c in minus if flow[c] == theta)
        for k, c in enumerate(cells):
            flow[c] += theta if k % 2 == 0 else -theta
        basic[i0, j0] = True
        basic[leaving] = False
        flow[leaving] = 0.0
        degenerate_run = degenerate_run + 1 if theta == 0 else 0
    else:
        raise RuntimeError("exact_ot did not terminate within max_pivots")

    plan = np.maximum(flow, 0.0)
    return plan, transport_cost(C, plan)
