# cython: language_level=3
"""Compiled coordinate-descent kernels.

Mirrors ``dagcd._pykernels`` operation for operation; see that module for
the array conventions. All arrays are owned by the caller and mutated in
place.
"""
import numpy as np

from libc.math cimport exp, log, log1p, sqrt, fabs, pow

ctypedef signed char int8


cdef inline double _lse(const double* e, int rj) noexcept nogil:
    cdef int l
    cdef double mx = e[0]
    cdef double s = 0.0
    for l in range(1, rj):
        if e[l] > mx:
            mx = e[l]
    for l in range(rj):
        s += exp(e[l] - mx)
    return mx + log(s)


# sufficient-decrease constant of the intercept safeguard
cdef double ICPT_SIGMA = 1e-4


cdef inline double _nll2(double e0, double e1, int y) noexcept nogil:
    # -log softmax(e)[y] for two levels
    cdef double z = e1 - e0 if y == 0 else e0 - e1
    if z > 0:
        return z + log1p(exp(-z))
    return log1p(exp(z))


cdef class KernelState:
    cdef int[:, ::1] X
    cdef int8[:, ::1] obs
    cdef int[::1] r
    cdef double[:, :, :, ::1] B
    cdef double[:, ::1] B0
    cdef double[:, :, ::1] E
    cdef double[:, ::1] H
    cdef double[::1] H0
    cdef double[:, ::1] W
    cdef int8[:, ::1] adj
    cdef long long[::1] stats
    cdef int[::1] indeg
    cdef int[::1] outdeg
    cdef int[::1] ooff
    cdef int[::1] oidx
    cdef int[::1] rows
    cdef double[::1] nll0
    cdef double[:, ::1] grad
    cdef double[:, ::1] sdir
    cdef double[:, ::1] saveA
    cdef double[:, ::1] saveB
    cdef double[:, ::1] zero
    cdef double[::1] ebuf
    cdef double[:, :, ::1] acc
    cdef int[::1] queue
    cdef int8[::1] seen
    cdef int[:, ::1] kprev
    cdef int n, p, R, D
    cdef public double lam, ls_eta, delta, alpha0, tol
    cdef public int max_bt, max_iter

    def __init__(self, X, obs, r, B, B0, E, H, H0, W, adj, stats, *,
                 double lam=0.0, double ls_eta=0.9, double delta=0.9,
                 double alpha0=1.0, int max_bt=50, double tol=1e-4,
                 int max_iter=200):
        self.X = X
        self.obs = obs
        self.r = r
        self.B = B
        self.B0 = B0
        self.E = E
        self.H = H
        self.H0 = H0
        self.W = W
        self.adj = adj
        self.stats = stats
        self.n = X.shape[0]
        self.p = X.shape[1]
        self.R = B.shape[2]
        self.D = B.shape[3]
        self.lam = lam
        self.ls_eta = ls_eta
        self.delta = delta
        self.alpha0 = alpha0
        self.max_bt = max_bt
        self.tol = tol
        self.max_iter = max_iter
        obs_np = np.asarray(obs, dtype=bool)
        counts = obs_np.sum(axis=1)
        self.ooff = np.concatenate([[0], np.cumsum(counts)]).astype(np.intc)
        self.oidx = np.concatenate(
            [np.flatnonzero(obs_np[j]) for j in range(self.p)] + [np.zeros(0, dtype=np.intp)]
        ).astype(np.intc)
        self.rows = np.zeros(max(self.n, 1), dtype=np.intc)
        self.nll0 = np.zeros(max(self.n, 1))
        self.grad = np.zeros((self.R, max(self.D, 1)))
        self.sdir = np.zeros((self.R, max(self.D, 1)))
        self.saveA = np.zeros((self.R, max(self.D, 1)))
        self.saveB = np.zeros((self.R, max(self.D, 1)))
        self.zero = np.zeros((self.R, max(self.D, 1)))
        self.ebuf = np.zeros(self.R)
        self.acc = np.zeros((self.p, self.R, max(self.D, 1)))
        self.queue = np.zeros(max(self.p, 1), dtype=np.intc)
        self.seen = np.zeros(max(self.p, 1), dtype=np.int8)
        self.kprev = np.zeros((max(self.p, 1), max(self.p, 1)), dtype=np.intc)
        adj_np = np.asarray(adj)
        self.indeg = adj_np.sum(axis=0).astype(np.intc)
        self.outdeg = adj_np.sum(axis=1).astype(np.intc)

    # ------------------------------------------------------------------
    # bookkeeping

    def refresh_eta(self):
        cdef int h, j, i, l, k, rj
        cdef double v
        with nogil:
            for j in range(self.p):
                rj = self.r[j]
                for h in range(self.n):
                    for l in range(rj):
                        v = self.B0[j, l]
                        for i in range(self.p):
                            k = self.X[h, i] - 1
                            if i != j and k >= 0:
                                v = v + self.B[j, i, l, k]
                        self.E[j, h, l] = v

    def refresh_adjacency(self):
        cdef int i, j
        for i in range(self.p):
            self.indeg[i] = 0
            self.outdeg[i] = 0
        for j in range(self.p):
            for i in range(self.p):
                if i != j:
                    self._sync_adj(j, i)

    cdef void _sync_adj(self, int j, int i) noexcept nogil:
        cdef int l, k
        cdef int8 nz = 0
        for l in range(self.r[j]):
            for k in range(self.r[i] - 1):
                if self.B[j, i, l, k] != 0.0:
                    nz = 1
        if nz != self.adj[i, j]:
            self.adj[i, j] = nz
            if nz:
                self.indeg[j] += 1
                self.outdeg[i] += 1
            else:
                self.indeg[j] -= 1
                self.outdeg[i] -= 1

    cdef int _collect_rows(self, int j, int i) noexcept nogil:
        cdef int t, h, m = 0
        for t in range(self.ooff[j], self.ooff[j + 1]):
            h = self.oidx[t]
            if self.X[h, i] >= 1:
                self.rows[m] = h
                m += 1
        return m

    cdef double _group_norm(self, int j, int i) noexcept nogil:
        cdef int l, k
        cdef double s = 0.0
        for l in range(self.r[j]):
            for k in range(self.r[i] - 1):
                s += self.B[j, i, l, k] * self.B[j, i, l, k]
        return sqrt(s)

    # ------------------------------------------------------------------
    # likelihood pieces

    def node_nll(self, int j):
        cdef int t, h, rj = self.r[j]
        cdef double s = 0.0
        for t in range(self.ooff[j], self.ooff[j + 1]):
            h = self.oidx[t]
            s += _lse(&self.E[j, h, 0], rj) - self.E[j, h, self.X[h, j]]
        return s

    def group_grad(self, int j, int i):
        cdef int m = self._collect_rows(j, i)
        self._grad_rows(j, i, m)
        return np.asarray(self.grad)[: self.r[j], : self.r[i] - 1].copy()

    cdef void _grad_rows(self, int j, int i, int m) noexcept nogil:
        # fills grad[:rj, :di] and nll0[:m]
        cdef int t, h, l, k, y, rj = self.r[j], di = self.r[i] - 1
        cdef double lse
        cdef double* e
        for l in range(rj):
            for k in range(di):
                self.grad[l, k] = 0.0
        cdef double p1
        if rj == 2:
            for t in range(m):
                h = self.rows[t]
                k = self.X[h, i] - 1
                y = self.X[h, j]
                e = &self.E[j, h, 0]
                self.nll0[t] = _nll2(e[0], e[1], y)
                p1 = 1.0 / (1.0 + exp(e[0] - e[1]))
                self.grad[1, k] += (1.0 if y == 1 else 0.0) - p1
                self.grad[0, k] += (1.0 if y == 0 else 0.0) - (1.0 - p1)
            return
        for t in range(m):
            h = self.rows[t]
            k = self.X[h, i] - 1
            y = self.X[h, j]
            e = &self.E[j, h, 0]
            lse = _lse(e, rj)
            self.nll0[t] = lse - e[y]
            for l in range(rj):
                self.grad[l, k] -= exp(e[l] - lse)
            self.grad[y, k] += 1.0

    def intercept_grad(self, int j):
        cdef int t, h, l, y, rj = self.r[j]
        cdef double lse
        out = np.zeros(rj)
        cdef double[::1] g = out
        for t in range(self.ooff[j], self.ooff[j + 1]):
            h = self.oidx[t]
            y = self.X[h, j]
            lse = _lse(&self.E[j, h, 0], rj)
            for l in range(rj):
                g[l] -= exp(self.E[j, h, l] - lse)
            g[y] += 1.0
        return out

    def hessian_bounds(self, double b):
        cdef int j, i, t, h, l, k, rj
        cdef double lse, pr, w, mx
        with nogil:
            for j in range(self.p):
                rj = self.r[j]
                for i in range(self.p):
                    for l in range(self.R):
                        for k in range(self.acc.shape[2]):
                            self.acc[i, l, k] = 0.0
                for l in range(self.R):
                    self.ebuf[l] = 0.0
                for t in range(self.ooff[j], self.ooff[j + 1]):
                    h = self.oidx[t]
                    lse = _lse(&self.E[j, h, 0], rj)
                    for l in range(rj):
                        pr = exp(self.E[j, h, l] - lse)
                        w = pr * (1.0 - pr)
                        self.ebuf[l] += w
                        for i in range(self.p):
                            k = self.X[h, i] - 1
                            if i != j and k >= 0:
                                self.acc[i, l, k] += w
                mx = b
                for l in range(rj):
                    if self.ebuf[l] > mx:
                        mx = self.ebuf[l]
                self.H0[j] = -mx
                for i in range(self.p):
                    if i == j:
                        continue
                    mx = b
                    for l in range(rj):
                        for k in range(self.r[i] - 1):
                            if self.acc[i, l, k] > mx:
                                mx = self.acc[i, l, k]
                    self.H[j, i] = -mx

    # ------------------------------------------------------------------
    # group moves

    cdef double _set_group(self, int j, int i, double[:, ::1] val) noexcept nogil:
        """Overwrite beta_{j.i}; returns the change of the penalized node objective."""
        cdef int t, h, l, k, y, m, rj = self.r[j], di = self.r[i] - 1
        cdef double dnll = 0.0, lw, old_norm, new_norm = 0.0, diff
        cdef double* e
        cdef int same = 1
        for l in range(rj):
            for k in range(di):
                if self.B[j, i, l, k] != val[l, k]:
                    same = 0
                new_norm += val[l, k] * val[l, k]
        if same:
            return 0.0
        new_norm = sqrt(new_norm)
        old_norm = self._group_norm(j, i)
        m = self._collect_rows(j, i)
        for t in range(m):
            h = self.rows[t]
            k = self.X[h, i] - 1
            y = self.X[h, j]
            e = &self.E[j, h, 0]
            dnll -= _lse(e, rj) - e[y]
            for l in range(rj):
                e[l] += val[l, k] - self.B[j, i, l, k]
            dnll += _lse(e, rj) - e[y]
        for l in range(rj):
            for k in range(di):
                self.B[j, i, l, k] = val[l, k]
        self._sync_adj(j, i)
        lw = self.lam * self.W[j, i]
        return dnll + lw * (new_norm - old_norm)

    cdef double _trial(self, int j, int i, int m, double alpha, double lw, double gnorm) noexcept nogil:
        # f_{lambda,j}(beta + alpha s) - f_{lambda,j}(beta)
        cdef int t, h, l, k, y, rj = self.r[j], di = self.r[i] - 1
        cdef double val = 0.0, nrm = 0.0, v
        cdef double* e
        if rj == 2:
            for t in range(m):
                h = self.rows[t]
                k = self.X[h, i] - 1
                e = &self.E[j, h, 0]
                val += _nll2(e[0] + alpha * self.sdir[0, k], e[1] + alpha * self.sdir[1, k],
                             self.X[h, j]) - self.nll0[t]
        else:
            for t in range(m):
                h = self.rows[t]
                k = self.X[h, i] - 1
                y = self.X[h, j]
                e = &self.E[j, h, 0]
                for l in range(rj):
                    self.ebuf[l] = e[l] + alpha * self.sdir[l, k]
                val += _lse(&self.ebuf[0], rj) - self.ebuf[y] - self.nll0[t]
        for l in range(rj):
            for k in range(di):
                v = self.B[j, i, l, k] + alpha * self.sdir[l, k]
                nrm += v * v
        return val + lw * (sqrt(nrm) - gnorm)

    cdef inline int _accept(self, int j, int i, int m, double lw, double gnorm, double Delta,
                            int k, double* val) noexcept nogil:
        cdef double alpha = self.alpha0 * pow(self.ls_eta, k)
        val[0] = self._trial(j, i, m, alpha, lw, gnorm)
        self.stats[0] += 1
        return val[0] <= alpha * self.delta * Delta

    cdef int _search(self, int j, int i, int m, double lw, double gnorm, double Delta,
                     int k0, double* best) noexcept nogil:
        """Smallest k in [0, max_bt] passing the rule, or -1."""
        cdef int K = self.max_bt, lo, hi, c, step = 1
        cdef double v
        if k0 < 0:
            k0 = 0
        if k0 > K:
            k0 = K
        if self._accept(j, i, m, lw, gnorm, Delta, k0, &v):
            hi = k0
            best[0] = v
            lo = -1
            while hi > 0:
                c = hi - step
                if c < 0:
                    c = 0
                if self._accept(j, i, m, lw, gnorm, Delta, c, &v):
                    hi = c
                    best[0] = v
                    step *= 2
                else:
                    lo = c
                    break
            if hi == 0:
                return 0
        else:
            lo = k0
            hi = -1
            while True:
                c = lo + step
                if c > K:
                    c = K
                if c == lo:
                    return -1
                if self._accept(j, i, m, lw, gnorm, Delta, c, &v):
                    hi = c
                    best[0] = v
                    break
                lo = c
                step *= 2
        while hi - lo > 1:
            c = (lo + hi) // 2
            if self._accept(j, i, m, lw, gnorm, Delta, c, &v):
                hi = c
                best[0] = v
            else:
                lo = c
        return hi

    cdef double _descend(self, int j, int i, int max_steps, double tol, double* change, int* nsteps) noexcept nogil:
        cdef int rj = self.r[j], di = self.r[i] - 1
        cdef int m, step, l, k, t, h, kk, found
        cdef double hji = self.H[j, i], lw = self.lam * self.W[j, i]
        cdef double total = 0.0, nd, gnorm, c, pnorm, smax, Delta, alpha, val, dv, best_val
        change[0] = 0.0
        nsteps[0] = 0
        m = self._collect_rows(j, i)
        gnorm = self._group_norm(j, i)
        if gnorm == 0.0 and lw >= 1.4142135623730951 * m:
            return 0.0
        for step in range(max_steps):
            self._grad_rows(j, i, m)
            nd = 0.0
            for l in range(rj):
                for k in range(di):
                    dv = self.grad[l, k] - hji * self.B[j, i, l, k]
                    self.sdir[l, k] = dv
                    nd += dv * dv
            nd = sqrt(nd)
            if nd <= lw * (1.0 + 1e-12):
                c = 0.0
            else:
                c = -(1.0 / hji) * (1.0 - lw / nd)
            pnorm = c * nd
            smax = 0.0
            Delta = lw * (pnorm - gnorm)
            for l in range(rj):
                for k in range(di):
                    dv = c * self.sdir[l, k] - self.B[j, i, l, k]
                    self.sdir[l, k] = dv
                    if fabs(dv) > smax:
                        smax = fabs(dv)
                    Delta -= dv * self.grad[l, k]
            if smax == 0.0:
                break
            if not (Delta < 0.0):
                self.stats[3] += 1
                break
            # largest alpha0 * eta^k satisfying the sufficient-decrease rule;
            # the accepted set is an interval in alpha (convexity), so search
            # outward from the index accepted last time for this group
            found = self._search(j, i, m, lw, gnorm, Delta, self.kprev[j, i], &best_val)
            if found < 0:
                if Delta < -1e-9:
                    self.stats[1] += 1
                else:
                    self.stats[3] += 1
                break
            self.kprev[j, i] = found
            alpha = self.alpha0 * pow(self.ls_eta, found)
            for t in range(m):
                h = self.rows[t]
                kk = self.X[h, i] - 1
                for l in range(rj):
                    self.E[j, h, l] += alpha * self.sdir[l, kk]
            gnorm = 0.0
            for l in range(rj):
                for k in range(di):
                    self.B[j, i, l, k] += alpha * self.sdir[l, k]
                    gnorm += self.B[j, i, l, k] * self.B[j, i, l, k]
            gnorm = sqrt(gnorm)
            total += best_val
            nsteps[0] += 1
            self.stats[2] += 1
            change[0] = alpha * smax
            if change[0] < tol:
                break
        self._sync_adj(j, i)
        return total

    def descend(self, int j, int i, int max_steps, double tol):
        """Run up to ``max_steps`` proximal Newton + line-search steps on beta_{j.i}."""
        cdef double change
        cdef int nsteps
        cdef double total = self._descend(j, i, max_steps, tol, &change, &nsteps)
        return total, nsteps, change

    def set_group(self, int j, int i, value):
        buf = np.zeros((self.R, max(self.D, 1)))
        arr = np.asarray(value, dtype=float).reshape(self.r[j], self.r[i] - 1)
        buf[: self.r[j], : self.r[i] - 1] = arr
        return self._set_group(j, i, buf)

    cdef double _intercept_step(self, int j) noexcept nogil:
        cdef int t, h, l, y, bt, rj = self.r[j], lo = self.ooff[j], m = self.ooff[j + 1] - self.ooff[j]
        cdef double lse, h0 = self.H0[j], shift, smax = 0.0, alpha, val, p1, slope = 0.0
        cdef double* e
        for l in range(rj):
            self.sdir[l, 0] = 0.0
        for t in range(m):
            h = self.oidx[lo + t]
            y = self.X[h, j]
            e = &self.E[j, h, 0]
            if rj == 2:
                self.nll0[t] = _nll2(e[0], e[1], y)
                p1 = 1.0 / (1.0 + exp(e[0] - e[1]))
                self.sdir[0, 0] -= 1.0 - p1
                self.sdir[1, 0] -= p1
            else:
                lse = _lse(e, rj)
                self.nll0[t] = lse - e[y]
                for l in range(rj):
                    self.sdir[l, 0] -= exp(e[l] - lse)
            self.sdir[y, 0] += 1.0
        # new = beta - grad / h0, re-anchored so that level 1 stays at zero
        for l in range(rj):
            self.grad[l, 0] = self.sdir[l, 0]
            self.sdir[l, 0] = self.B0[j, l] - self.sdir[l, 0] / h0
        shift = self.sdir[0, 0]
        for l in range(rj):
            self.sdir[l, 0] = self.sdir[l, 0] - shift - self.B0[j, l]
            slope += self.sdir[l, 0] * self.grad[l, 0]
            if fabs(self.sdir[l, 0]) > smax:
                smax = fabs(self.sdir[l, 0])
        if smax == 0.0 or not slope > 0.0:
            return 0.0
        alpha = 1.0
        for bt in range(self.max_bt + 1):
            val = 0.0
            for t in range(m):
                h = self.oidx[lo + t]
                y = self.X[h, j]
                e = &self.E[j, h, 0]
                if rj == 2:
                    val += _nll2(e[0] + alpha * self.sdir[0, 0], e[1] + alpha * self.sdir[1, 0], y)
                else:
                    for l in range(rj):
                        self.ebuf[l] = e[l] + alpha * self.sdir[l, 0]
                    val += _lse(&self.ebuf[0], rj) - self.ebuf[y]
                val -= self.nll0[t]
            if val <= -ICPT_SIGMA * alpha * slope:
                break
            alpha *= self.ls_eta
        if val > -ICPT_SIGMA * alpha * slope:
            self.stats[3] += 1
            return 0.0
        for l in range(rj):
            self.B0[j, l] += alpha * self.sdir[l, 0]
        for h in range(self.n):
            for l in range(rj):
                self.E[j, h, l] += alpha * self.sdir[l, 0]
        return alpha * smax

    def intercept_step(self, int j):
        return self._intercept_step(j)

    def intercept_pass(self):
        cdef int j
        cdef double c, mx = 0.0
        with nogil:
            for j in range(self.p):
                c = self._intercept_step(j)
                if c > mx:
                    mx = c
        return mx

    # ------------------------------------------------------------------
    # acyclicity and the pair sweep

    cdef int _reachable(self, int src, int dst, int su, int sv) noexcept nogil:
        # BFS src ~> dst ignoring the edge su -> sv
        cdef int head = 0, tail = 0, u, v, found = 0
        if self.outdeg[src] == 0 or self.indeg[dst] == 0:
            return 0
        for v in range(self.p):
            self.seen[v] = 0
        self.queue[tail] = src
        tail += 1
        self.seen[src] = 1
        while head < tail and not found:
            u = self.queue[head]
            head += 1
            if self.outdeg[u] == 0:
                continue
            for v in range(self.p):
                if self.adj[u, v] and not self.seen[v] and not (u == su and v == sv):
                    if v == dst:
                        found = 1
                        break
                    self.seen[v] = 1
                    self.queue[tail] = v
                    tail += 1
        return found

    def reachable(self, int src, int dst, int su=-1, int sv=-1):
        return bool(self._reachable(src, dst, su, sv))

    cdef int _pair_update(self, int i, int j) noexcept nogil:
        """Block update of {beta_{i.j}, beta_{j.i}}; returns 0 fixed-free, 1/2 forced."""
        cdef int l, k, ns, ri = self.r[i], rj = self.r[j]
        cdef double ch, dec1, dec2
        cdef int fwd_ij = self._reachable(j, i, j, i)   # i -> j would close a cycle
        cdef int fwd_ji = 0
        if fwd_ij:
            self._descend(i, j, self.max_iter, self.tol, &ch, &ns)
            return 1
        fwd_ji = self._reachable(i, j, i, j)
        if fwd_ji:
            self._descend(j, i, self.max_iter, self.tol, &ch, &ns)
            return 2
        for l in range(self.R):
            for k in range(self.saveA.shape[1]):
                self.saveA[l, k] = 0.0
                self.saveB[l, k] = 0.0
        for l in range(ri):
            for k in range(rj - 1):
                self.saveA[l, k] = self.B[i, j, l, k]
        for l in range(rj):
            for k in range(ri - 1):
                self.saveB[l, k] = self.B[j, i, l, k]
        self._set_group(i, j, self.zero)
        self._set_group(j, i, self.zero)
        # S1: edge j -> i
        dec1 = self._set_group(i, j, self.saveA)
        dec1 += self._descend(i, j, self.max_iter, self.tol, &ch, &ns)
        for l in range(ri):
            for k in range(rj - 1):
                self.saveA[l, k] = self.B[i, j, l, k]
        self._set_group(i, j, self.zero)
        # S2: edge i -> j
        dec2 = self._set_group(j, i, self.saveB)
        dec2 += self._descend(j, i, self.max_iter, self.tol, &ch, &ns)
        if dec1 <= dec2:
            self._set_group(j, i, self.zero)
            self._set_group(i, j, self.saveA)
        return 0

    def pair_update(self, int i, int j):
        return self._pair_update(i, j)

    def pair_sweep(self, pairs):
        cdef int[:, ::1] pr = np.ascontiguousarray(pairs, dtype=np.intc)
        cdef int t
        with nogil:
            for t in range(pr.shape[0]):
                self._pair_update(pr[t, 0], pr[t, 1])

    def inner_pass(self, groups):
        """One cycle over the given (j, i) groups, then all intercepts."""
        cdef int[:, ::1] gr = np.ascontiguousarray(groups, dtype=np.intc).reshape(-1, 2)
        cdef int t, ns, j
        cdef double ch, mx = 0.0
        with nogil:
            for t in range(gr.shape[0]):
                self._descend(gr[t, 0], gr[t, 1], 1, 0.0, &ch, &ns)
                if ch > mx:
                    mx = ch
            for j in range(self.p):
                ch = self._intercept_step(j)
                if ch > mx:
                    mx = ch
        return mx
