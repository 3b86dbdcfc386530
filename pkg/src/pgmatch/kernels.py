"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public functions dispatch on :data:`pgmatch._accel.USE_NUMBA`.  Both paths
are deterministic; they agree to floating-point tolerance, not bitwise.
"""
import numpy as np
from scipy.optimize import nnls as _scipy_nnls

from ._accel import USE_NUMBA, njit

_ROOT_ITERS = 100
_ZERO_PROBE = 1e-9


# ---------------------------------------------------------------------------
# per-batch last-layer gradients
# ---------------------------------------------------------------------------

@njit
def _batch_grads_nb(delta, feats, order, offsets):
    nb = offsets.shape[0] - 1
    c = delta.shape[1]
    h = feats.shape[1]
    out = np.zeros((nb, c * h + c))
    for b in range(nb):
        lo = offsets[b]
        hi = offsets[b + 1]
        inv = 1.0 / (hi - lo)
        for s in range(lo, hi):
            i = order[s]
            for k in range(c):
                dk = delta[i, k]
                base = k * h
                for j in range(h):
                    out[b, base + j] += dk * feats[i, j]
                out[b, c * h + k] += dk
        for q in range(c * h + c):
            out[b, q] *= inv
    return out


def _batch_grads_np(delta, feats, order, offsets):
    nb = len(offsets) - 1
    c, h = delta.shape[1], feats.shape[1]
    out = np.empty((nb, c * h + c))
    for b in range(nb):
        idx = order[offsets[b]:offsets[b + 1]]
        d = delta[idx]
        out[b, :c * h] = (d.T @ feats[idx]).ravel()
        out[b, c * h:] = d.sum(axis=0)
        out[b] /= len(idx)
    return out


def batch_grads(delta, feats, order, offsets):
    """Mean last-layer gradient of every batch.

    ``delta`` holds ``softmax - onehot`` per example, ``feats`` the inputs of
    the last layer.  Batch ``b`` is ``order[offsets[b]:offsets[b+1]]``.
    Rows are laid out as row-major weights followed by the bias.
    """
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    order = np.ascontiguousarray(order, dtype=np.int64)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if USE_NUMBA:
        return _batch_grads_nb(delta, feats, order, offsets)
    return _batch_grads_np(delta, feats, order, offsets)


# ---------------------------------------------------------------------------
# ridge-regularised non-negative least squares
# ---------------------------------------------------------------------------

@njit
def _chol_solve(Q, rhs, idx, n):
    # Cholesky on Q[idx[:n], idx[:n]]; returns (x, ok)
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = Q[idx[i], idx[j]]
            for m in range(j):
                s -= L[i, m] * L[j, m]
            if i == j:
                if s <= 1e-13 * max(1.0, Q[idx[i], idx[i]]):
                    return np.zeros(n), False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.zeros(n)
    for i in range(n):
        s = rhs[idx[i]]
        for m in range(i):
            s -= L[i, m] * y[m]
        y[i] = s / L[i, i]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for m in range(i + 1, n):
            s -= L[m, i] * x[m]
        x[i] = s / L[i, i]
    return x, True


@njit
def _nnqp_nb(Q, c):
    """Lawson-Hanson active set for min 0.5 w'Qw - c'w subject to w >= 0."""
    k = c.shape[0]
    w = np.zeros(k)
    passive = np.zeros(k, dtype=np.bool_)
    banned = np.zeros(k, dtype=np.bool_)
    idx = np.zeros(k, dtype=np.int64)
    scale = 1.0
    for j in range(k):
        scale = max(scale, abs(c[j]))
    tol = 1e-13 * scale
    for _outer in range(3 * k + 10):
        grad = c - Q @ w
        best = -1
        gbest = tol
        for j in range(k):
            if not passive[j] and not banned[j] and grad[j] > gbest:
                gbest = grad[j]
                best = j
        if best < 0:
            break
        passive[best] = True
        for _inner in range(3 * k + 10):
            n = 0
            for j in range(k):
                if passive[j]:
                    idx[n] = j
                    n += 1
            z, ok = _chol_solve(Q, c, idx, n)
            if not ok:
                # column dependent on the passive set: it cannot lower the objective
                passive[best] = False
                banned[best] = True
                break
            if n == 0 or np.min(z) > 0.0:
                for m in range(n):
                    w[idx[m]] = z[m]
                break
            alpha = 1.0
            for m in range(n):
                if z[m] <= 0.0:
                    a = w[idx[m]] / (w[idx[m]] - z[m])
                    if a < alpha:
                        alpha = a
            for m in range(n):
                j = idx[m]
                w[j] = w[j] + alpha * (z[m] - w[j])
                if w[j] <= 1e-15 * scale:
                    w[j] = 0.0
                    passive[j] = False
    return w


@njit
def _ridge_nnls_nb(GtG, Gtt, mu):
    k = Gtt.shape[0]
    Q = GtG.copy()
    for j in range(k):
        Q[j, j] += mu
    return _nnqp_nb(Q, Gtt)


@njit
def _objective_nb(A, t, w, lam):
    r = A @ w - t
    return lam * np.dot(w, w) + np.sqrt(np.dot(r, r))


@njit
def _solve_weights_nb(A, t, lam):
    GtG = A.T @ A
    Gtt = A.T @ t
    w0 = _ridge_nnls_nb(GtG, Gtt, 0.0)
    if lam == 0.0:
        return w0
    hi = np.sqrt(np.dot(t, t))
    w_hi = _ridge_nnls_nb(GtG, Gtt, 2.0 * lam * hi)
    r = A @ w_hi - t
    g_hi = np.sqrt(np.dot(r, r)) - hi
    lo = 0.0
    w_lo = w0
    r = A @ w0 - t
    g_lo = np.sqrt(np.dot(r, r))
    if g_lo <= 0.0:
        lo = _ZERO_PROBE * hi
        w_lo = _ridge_nnls_nb(GtG, Gtt, 2.0 * lam * lo)
        r = A @ w_lo - t
        g_lo = np.sqrt(np.dot(r, r)) - lo
    if g_lo > 0.0:
        side = 0
        for _ in range(_ROOT_ITERS):
            if hi - lo <= 1e-15 * hi:
                break
            m = (lo * g_hi - hi * g_lo) / (g_hi - g_lo)
            if not (lo < m < hi):
                m = 0.5 * (lo + hi)
            wm = _ridge_nnls_nb(GtG, Gtt, 2.0 * lam * m)
            r = A @ wm - t
            gm = np.sqrt(np.dot(r, r)) - m
            if gm > 0.0:
                lo, g_lo, w_lo = m, gm, wm
                if side == 1:
                    g_hi *= 0.5
                side = 1
            else:
                hi, g_hi, w_hi = m, gm, wm
                if side == -1:
                    g_lo *= 0.5
                side = -1
            if abs(gm) <= 1e-15 * max(1.0, m):
                break
    best = w_hi
    fbest = _objective_nb(A, t, w_hi, lam)
    f = _objective_nb(A, t, w_lo, lam)
    if f < fbest:
        best = w_lo
        fbest = f
    f = _objective_nb(A, t, w0, lam)
    if f < fbest:
        best = w0
    return best


def _ridge_nnls_np(A, t, mu):
    k = A.shape[1]
    if mu > 0.0:
        A = np.vstack([A, np.sqrt(mu) * np.eye(k)])
        t = np.concatenate([t, np.zeros(k)])
    return _scipy_nnls(A, t, maxiter=50 * max(k, 1))[0]


def _objective_np(A, t, w, lam):
    return lam * float(w @ w) + float(np.linalg.norm(A @ w - t))


def _solve_weights_np(A, t, lam):
    w0 = _ridge_nnls_np(A, t, 0.0)
    if lam == 0.0:
        return w0

    def gap(rho):
        w = _ridge_nnls_np(A, t, 2.0 * lam * rho)
        return w, float(np.linalg.norm(A @ w - t)) - rho

    hi = float(np.linalg.norm(t))
    w_hi, g_hi = gap(hi)
    lo, w_lo, g_lo = 0.0, w0, float(np.linalg.norm(A @ w0 - t))
    if g_lo <= 0.0:
        lo = _ZERO_PROBE * hi
        w_lo, g_lo = gap(lo)
    if g_lo > 0.0:
        side = 0
        for _ in range(_ROOT_ITERS):
            if hi - lo <= 1e-15 * hi:
                break
            m = (lo * g_hi - hi * g_lo) / (g_hi - g_lo)
            if not lo < m < hi:
                m = 0.5 * (lo + hi)
            wm, gm = gap(m)
            if gm > 0.0:
                lo, g_lo, w_lo = m, gm, wm
                if side == 1:
                    g_hi *= 0.5
                side = 1
            else:
                hi, g_hi, w_hi = m, gm, wm
                if side == -1:
                    g_lo *= 0.5
                side = -1
            if abs(gm) <= 1e-15 * max(1.0, m):
                break
    cands = [w_hi, w_lo, w0]
    vals = [_objective_np(A, t, w, lam) for w in cands]
    return cands[int(np.argmin(vals))]


def solve_reg_nnls(A, t, lam):
    """argmin over w >= 0 of ``lam*||w||^2 + ||A w - t||`` (norm not squared).

    Any interior optimum with residual ``rho > 0`` solves the ridge NNLS
    problem with penalty ``2*lam*rho``; the residual of that ridge solution is
    nondecreasing in ``rho``, so the fixed point is bracketed by
    ``[0, ||t||]`` and found with Illinois false position.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.float64)
    if A.shape[1] == 0:
        return np.zeros(0)
    if USE_NUMBA:
        return _solve_weights_nb(A, t, float(lam))
    return _solve_weights_np(A, t, float(lam))


# ---------------------------------------------------------------------------
# greedy matching loop
# ---------------------------------------------------------------------------

@njit
def _omp_nb(G, t, k, lam, eps):
    n = G.shape[0]
    sel = np.zeros(k, dtype=np.int64)
    weights = np.zeros(0)
    available = np.ones(n, dtype=np.bool_)
    hist = np.zeros(k + 1)
    obj = np.sqrt(np.dot(t, t))
    hist[0] = obj
    resid = t.copy()
    m = 0
    while m < k and obj > eps:
        align = G @ resid
        j = -1
        best = 0.0
        for i in range(n):
            if available[i] and align[i] > best:
                best = align[i]
                j = i
        if j < 0:
            break
        sel[m] = j
        m += 1
        available[j] = False
        A = np.ascontiguousarray(G[sel[:m]].T)
        new_w = _solve_weights_nb(A, t, lam)
        new_obj = _objective_nb(A, t, new_w, lam)
        if new_obj > obj:
            new_w = np.zeros(m)
            new_w[:m - 1] = weights
            new_obj = obj
        weights = new_w
        obj = new_obj
        hist[m] = obj
        resid = t - A @ weights
    return sel[:m], weights, hist[:m + 1]


def _omp_np(G, t, k, lam, eps):
    sel, weights = [], np.zeros(0)
    available = np.ones(len(G), dtype=bool)
    obj = float(np.linalg.norm(t))
    hist = [obj]
    resid = t.copy()
    while len(sel) < k and obj > eps:
        align = G @ resid
        align[~available] = -np.inf
        j = int(np.argmax(align))
        if not align[j] > 0.0:
            break
        sel.append(j)
        available[j] = False
        A = G[sel].T
        new_w = _solve_weights_np(A, t, lam)
        new_obj = _objective_np(A, t, new_w, lam)
        if new_obj > obj:
            new_w, new_obj = np.append(weights, 0.0), obj
        weights, obj = new_w, new_obj
        hist.append(obj)
        resid = t - A @ weights
    return np.array(sel, dtype=np.int64), weights, np.array(hist)


def omp_select(G, t, k, lam, eps):
    """Greedy nonnegative OMP; returns (selected, weights, objective history).

    The history starts at ``||t||`` and is non-increasing: when a re-solve
    comes out worse by rounding, the previous weights are kept and the new
    column gets weight zero.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.float64)
    if USE_NUMBA:
        return _omp_nb(G, t, int(k), float(lam), float(eps))
    return _omp_np(G, t, int(k), float(lam), float(eps))


def warmup():
    """Compile (or load from cache) every kernel on tiny inputs."""
    rng = np.random.default_rng(0)
    G = rng.normal(size=(3, 4))
    omp_select(G, G.sum(axis=0), 2, 0.01, 0.0)
    batch_grads(rng.normal(size=(2, 2)), rng.normal(size=(2, 3)), np.arange(2), np.array([0, 2]))
