"""Pure-Python coordinate-descent kernels (numpy).

Array conventions shared with the compiled kernels:

``X``    int32 (n, p)        0-based levels; level 0 is the reference cell
``obs``  int8 (p, n)         1 where row h is observational for node j
``r``    int32 (p,)          level counts
``B``    float64 (p, p, R, D) ``B[j, i, l, k]`` = component k of beta_{j l i}
``B0``   float64 (p, R)      intercepts
``E``    float64 (p, n, R)   linear predictors ``x_h^T beta_{j l .}``
``H``    float64 (p, p)      frozen curvature bounds h_ji (< 0)
``H0``   float64 (p,)        frozen intercept curvature bounds
``W``    float64 (p, p)      penalty weights
``adj``  int8 (p, p)         ``adj[i, j] = 1`` iff beta_{j.i} != 0
``stats`` int64 (4,)         line-search evaluations, stalls, steps, no-progress exits

``E[j]`` is only maintained on the observational rows of node ``j``.
"""
from __future__ import annotations

from collections import deque

import numpy as np

THRESHOLD_RTOL = 1e-12
ICPT_SIGMA = 1e-4  # sufficient-decrease constant of the intercept safeguard
_SQRT2 = np.sqrt(2.0)


def _lse(e: np.ndarray) -> np.ndarray:
    mx = e.max(axis=1)
    return mx + np.log(np.exp(e - mx[:, None]).sum(axis=1))


def _gallop(accept, k0, kmax):
    """Smallest k in [0, kmax] with ``accept(k)`` true, assuming monotonicity.

    Searches outward from ``k0`` with doubling steps, then bisects.
    Returns ``(k, value)`` or ``(-1, 0.0)``.
    """
    k0 = min(max(k0, 0), kmax)
    ok, val = accept(k0)
    best = val
    step = 1
    if ok:
        hi, lo = k0, -1
        while hi > 0:
            c = max(hi - step, 0)
            ok, val = accept(c)
            if not ok:
                lo = c
                break
            hi, best = c, val
            step *= 2
        if hi == 0:
            return 0, best
    else:
        lo = k0
        while True:
            c = min(lo + step, kmax)
            if c == lo:
                return -1, 0.0
            ok, val = accept(c)
            if ok:
                hi, best = c, val
                break
            lo = c
            step *= 2
    while hi - lo > 1:
        c = (lo + hi) // 2
        ok, val = accept(c)
        if ok:
            hi, best = c, val
        else:
            lo = c
    return hi, best


class KernelState:
    def __init__(self, X, obs, r, B, B0, E, H, H0, W, adj, stats, *,
                 lam=0.0, ls_eta=0.9, delta=0.9, alpha0=1.0, max_bt=50,
                 tol=1e-4, max_iter=200):
        self.X, self.obs, self.r = X, obs, r
        self.B, self.B0, self.E = B, B0, E
        self.H, self.H0, self.W = H, H0, W
        self.adj, self.stats = adj, stats
        self.n, self.p = X.shape
        self.R, self.D = B.shape[2], B.shape[3]
        self.lam, self.ls_eta, self.delta, self.alpha0 = lam, ls_eta, delta, alpha0
        self.max_bt, self.tol, self.max_iter = max_bt, tol, max_iter
        self._orows = [np.flatnonzero(obs[j]) for j in range(self.p)]
        self._rows = {}
        self._kprev = {}
        self.indeg = adj.sum(axis=0).astype(np.int64)
        self.outdeg = adj.sum(axis=1).astype(np.int64)

    # bookkeeping -------------------------------------------------------

    def refresh_eta(self):
        for j in range(self.p):
            rj = self.r[j]
            e = np.repeat(self.B0[j, :rj][None, :], self.n, axis=0)
            for i in range(self.p):
                if i == j:
                    continue
                k = self.X[:, i] - 1
                hit = k >= 0
                e[hit] += self.B[j, i, :rj, k[hit]]
            self.E[j, :, :rj] = e

    def refresh_adjacency(self):
        self.indeg[:] = 0
        self.outdeg[:] = 0
        self.adj[:] = 0
        for j in range(self.p):
            for i in range(self.p):
                if i != j:
                    self._sync_adj(j, i)

    def _sync_adj(self, j, i):
        nz = int(np.any(self.B[j, i] != 0.0))
        if nz != self.adj[i, j]:
            self.adj[i, j] = nz
            step = 1 if nz else -1
            self.indeg[j] += step
            self.outdeg[i] += step

    def _group_rows(self, j, i):
        key = (j, i)
        got = self._rows.get(key)
        if got is None:
            rows = self._orows[j]
            rows = rows[self.X[rows, i] >= 1]
            got = (rows, self.X[rows, i] - 1, self.X[rows, j])
            self._rows[key] = got
        return got

    # likelihood pieces -------------------------------------------------

    def node_nll(self, j):
        rows = self._orows[j]
        e = self.E[j, rows, : self.r[j]]
        return float((_lse(e) - e[np.arange(rows.size), self.X[rows, j]]).sum())

    def _grad(self, j, i, rows, k, y):
        rj, di = self.r[j], self.r[i] - 1
        e = self.E[j, rows, :rj]
        lse = _lse(e)
        resid = -np.exp(e - lse[:, None])
        resid[np.arange(rows.size), y] += 1.0
        g = np.zeros((di, rj))
        np.add.at(g, k, resid)
        nll0 = lse - e[np.arange(rows.size), y]
        return g.T, nll0

    def group_grad(self, j, i):
        rows, k, y = self._group_rows(j, i)
        return self._grad(j, i, rows, k, y)[0]

    def intercept_grad(self, j):
        rows = self._orows[j]
        e = self.E[j, rows, : self.r[j]]
        resid = -np.exp(e - _lse(e)[:, None])
        resid[np.arange(rows.size), self.X[rows, j]] += 1.0
        return resid.sum(axis=0)

    def hessian_bounds(self, b):
        for j in range(self.p):
            rj = self.r[j]
            rows = self._orows[j]
            e = self.E[j, rows, :rj]
            pr = np.exp(e - _lse(e)[:, None])
            w = pr * (1.0 - pr)
            self.H0[j] = -max(float(w.sum(axis=0).max(initial=0.0)), b)
            for i in range(self.p):
                if i == j:
                    continue
                k = self.X[rows, i] - 1
                hit = k >= 0
                acc = np.zeros((self.r[i] - 1, rj))
                np.add.at(acc, k[hit], w[hit])
                self.H[j, i] = -max(float(acc.max(initial=0.0)), b)

    # group moves -------------------------------------------------------

    def _trial(self, j, i, rows, k, y, nll0, s, alpha, lw, gnorm):
        rj, di = self.r[j], self.r[i] - 1
        e = self.E[j, rows, :rj] + alpha * s[:, k].T
        val = float((_lse(e) - e[np.arange(rows.size), y] - nll0).sum())
        new = self.B[j, i, :rj, :di] + alpha * s
        return val + lw * (np.sqrt((new ** 2).sum()) - gnorm)

    def _set_group(self, j, i, val):
        rj, di = self.r[j], self.r[i] - 1
        old = self.B[j, i, :rj, :di]
        val = np.asarray(val, dtype=float)[:rj, :di]
        if np.array_equal(old, val):
            return 0.0
        rows, k, y = self._group_rows(j, i)
        e = self.E[j, rows, :rj]
        ar = np.arange(rows.size)
        before = (_lse(e) - e[ar, y]).sum()
        e = e + (val - old)[:, k].T
        after = (_lse(e) - e[ar, y]).sum()
        self.E[j, rows, :rj] = e
        lw = self.lam * self.W[j, i]
        pen = lw * (np.sqrt((val ** 2).sum()) - np.sqrt((old ** 2).sum()))
        self.B[j, i, :rj, :di] = val
        self._sync_adj(j, i)
        return float(after - before + pen)

    def set_group(self, j, i, value):
        rj, di = self.r[j], self.r[i] - 1
        return self._set_group(j, i, np.asarray(value, dtype=float).reshape(rj, di))

    def descend(self, j, i, max_steps, tol):
        """Run up to ``max_steps`` proximal Newton + line-search steps on beta_{j.i}."""
        rj, di = self.r[j], self.r[i] - 1
        rows, k, y = self._group_rows(j, i)
        hji = self.H[j, i]
        lw = self.lam * self.W[j, i]
        g = self.B[j, i, :rj, :di]
        gnorm = float(np.sqrt((g ** 2).sum()))
        total, nsteps, change = 0.0, 0, 0.0
        if gnorm == 0.0 and lw >= _SQRT2 * rows.size:
            return total, nsteps, change
        for _ in range(max_steps):
            grad, nll0 = self._grad(j, i, rows, k, y)
            d = grad - hji * g
            nd = float(np.sqrt((d ** 2).sum()))
            c = 0.0 if nd <= lw * (1.0 + THRESHOLD_RTOL) else -(1.0 / hji) * (1.0 - lw / nd)
            s = c * d - g
            smax = float(np.abs(s).max(initial=0.0))
            if smax == 0.0:
                break
            Delta = lw * (c * nd - gnorm) - float((s * grad).sum())
            if not Delta < 0.0:
                self.stats[3] += 1
                break
            def accept(kk):
                alpha = self.alpha0 * self.ls_eta ** kk
                val = self._trial(j, i, rows, k, y, nll0, s, alpha, lw, gnorm)
                self.stats[0] += 1
                return val <= alpha * self.delta * Delta, val

            found, best = _gallop(accept, self._kprev.get((j, i), 0), self.max_bt)
            if found < 0:
                self.stats[1 if Delta < -1e-9 else 3] += 1
                break
            self._kprev[(j, i)] = found
            alpha = self.alpha0 * self.ls_eta ** found
            self.E[j, rows, :rj] += alpha * s[:, k].T
            g += alpha * s
            gnorm = float(np.sqrt((g ** 2).sum()))
            total += best
            nsteps += 1
            self.stats[2] += 1
            change = alpha * smax
            if change < tol:
                break
        self._sync_adj(j, i)
        return total, nsteps, change

    def intercept_step(self, j):
        rj = self.r[j]
        rows = self._orows[j]
        y = self.X[rows, j]
        ar = np.arange(rows.size)
        e = self.E[j, rows, :rj]
        lse = _lse(e)
        resid = -np.exp(e - lse[:, None])
        resid[ar, y] += 1.0
        g = resid.sum(axis=0)
        new = self.B0[j, :rj] - g / self.H0[j]
        s = new - new[0] - self.B0[j, :rj]
        smax = float(np.abs(s).max())
        slope = float(s @ g)
        if smax == 0.0 or not slope > 0.0:
            return 0.0
        base = lse - e[ar, y]
        alpha = 1.0
        for _ in range(self.max_bt + 1):
            et = e + alpha * s
            val = float((_lse(et) - et[ar, y] - base).sum())
            if val <= -ICPT_SIGMA * alpha * slope:
                break
            alpha *= self.ls_eta
        if val > -ICPT_SIGMA * alpha * slope:
            self.stats[3] += 1
            return 0.0
        self.B0[j, :rj] += alpha * s
        self.E[j, :, :rj] += alpha * s
        return alpha * smax

    def intercept_pass(self):
        return max((self.intercept_step(j) for j in range(self.p)), default=0.0)

    # acyclicity and the pair sweep -------------------------------------

    def reachable(self, src, dst, su=-1, sv=-1):
        """BFS ``src ~> dst`` ignoring the edge ``su -> sv``."""
        if self.outdeg[src] == 0 or self.indeg[dst] == 0:
            return False
        seen = np.zeros(self.p, dtype=bool)
        seen[src] = True
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in np.flatnonzero(self.adj[u]):
                if seen[v] or (u == su and v == sv):
                    continue
                if v == dst:
                    return True
                seen[v] = True
                queue.append(v)
        return False

    def pair_update(self, i, j):
        if self.reachable(j, i, j, i):
            self.descend(i, j, self.max_iter, self.tol)
            return 1
        if self.reachable(i, j, i, j):
            self.descend(j, i, self.max_iter, self.tol)
            return 2
        ri, rj = self.r[i], self.r[j]
        save_a = self.B[i, j, :ri, : rj - 1].copy()
        save_b = self.B[j, i, :rj, : ri - 1].copy()
        self._set_group(i, j, np.zeros_like(save_a))
        self._set_group(j, i, np.zeros_like(save_b))
        dec1 = self._set_group(i, j, save_a)
        dec1 += self.descend(i, j, self.max_iter, self.tol)[0]
        res_a = self.B[i, j, :ri, : rj - 1].copy()
        self._set_group(i, j, np.zeros_like(save_a))
        dec2 = self._set_group(j, i, save_b)
        dec2 += self.descend(j, i, self.max_iter, self.tol)[0]
        if dec1 <= dec2:
            self._set_group(j, i, np.zeros_like(save_b))
            self._set_group(i, j, res_a)
        return 0

    def pair_sweep(self, pairs):
        for i, j in np.asarray(pairs, dtype=np.int64).reshape(-1, 2):
            self.pair_update(int(i), int(j))

    def inner_pass(self, groups):
        mx = 0.0
        for j, i in np.asarray(groups, dtype=np.int64).reshape(-1, 2):
            mx = max(mx, self.descend(int(j), int(i), 1, 0.0)[2])
        return max(mx, self.intercept_pass())
