"""Propagator grids for continuous-time computations.

A grid precomputes one-step RK4 propagators ``Phi_j = T(s_{j+1}, s_j)`` and
half-cell propagators ``Psi_j = T(s_{j+1}, s_{j+1/2})`` over a uniform mesh,
plus blocked prefix products that let orbits and inhomogeneous recurrences be
evaluated with batched linear algebra instead of long scalar loops.

Blocks are sized so in-block products stay within a dynamic range of about
``e^3``; transfers across longer spans factor through block-boundary products,
keeping every stored matrix well conditioned even when the system itself grows
exponentially over the full window.
"""

from __future__ import annotations

import numpy as np

from .system import SystemBundle

_CHUNK = 2048          # grids grow in whole chunks to limit rebuilds
_MIN_CELLS = 8


def _rk4_matrix_steps(bundle: SystemBundle, t0: np.ndarray, h: float) -> np.ndarray:
    """Batched one-step RK4 propagators for the linear part, starting at ``t0``."""
    d = bundle.dim
    A0 = bundle.linear.at_times(t0)
    Ah = bundle.linear.at_times(t0 + h / 2)
    A1 = bundle.linear.at_times(t0 + h)
    I = np.broadcast_to(np.eye(d), A0.shape)
    k1 = A0
    k2 = Ah @ (I + (h / 2) * k1)
    k3 = Ah @ (I + (h / 2) * k2)
    k4 = A1 @ (I + h * k3)
    return I + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


class PropagatorGrid:
    """Uniform-mesh propagators with blocked prefix products."""

    def __init__(self, bundle: SystemBundle, h: float, n_cells: int):
        self.bundle = bundle
        self.h = float(h)
        self.n = int(n_cells)
        d = bundle.dim
        self.d = d
        self.nodes = self.h * np.arange(self.n + 1)
        cells = self.nodes[:-1]
        self.phi = _rk4_matrix_steps(bundle, cells, self.h)
        self.psi = _rk4_matrix_steps(bundle, cells + self.h / 2, self.h / 2)

        amax = max(1.0, bundle.linear.norm_bound())
        self.block = int(np.clip(np.ceil(3.0 / (self.h * amax)), 64, 4096))
        nb = (self.n + self.block - 1) // self.block
        self.nb = nb
        self.bounds = np.minimum(self.block * np.arange(nb + 1), self.n)

        # In-block prefix products by doubling: W[bs + c] = Phi_{bs+c-1} ... Phi_bs,
        # left boundaries hold the identity.  Full-block products live in G, not W,
        # so every W row is relative to the block that owns the node.
        B = self.block
        padded = np.broadcast_to(np.eye(d), (nb * B, d, d)).copy()
        padded[:self.n] = self.phi
        S = padded.reshape(nb, B, d, d)
        shift = 1
        while shift < B:
            S[:, shift:] = S[:, shift:] @ S[:, :-shift]
            shift *= 2
        self.W = np.empty((self.n + 1, d, d))
        self.W[self.bounds] = np.eye(d)
        for i in range(nb):
            bs, be = self.bounds[i], self.bounds[i + 1]
            self.W[bs + 1:be] = S[i, :be - bs - 1]
        self.Winv = np.linalg.inv(self.W)
        self.G = np.stack([S[i, self.bounds[i + 1] - self.bounds[i] - 1]
                           for i in range(nb)])
        self.Ginv = np.linalg.inv(self.G)

    # -- indexing -------------------------------------------------------------

    def index(self, t: float) -> int:
        j = int(round(t / self.h))
        if not 0 <= j <= self.n:
            raise ValueError(f"time {t} outside grid [0, {self.nodes[-1]}]")
        return j

    def snap(self, t: float) -> float:
        return abs(t - self.index(t) * self.h)

    def block_of(self, j: int) -> int:
        return min(j // self.block, self.nb - 1)

    def transfer_from_block_start(self, j: int, i: int) -> np.ndarray:
        """``T(s_j, bounds[i])`` for a node ``j`` inside block ``i``."""
        if j == self.bounds[i + 1]:
            return self.G[i]
        return self.W[j]

    # -- orbits and sweeps ------------------------------------------------------

    def orbit(self, j0: int, x: np.ndarray, hi: int | None = None) -> np.ndarray:
        """Linear orbit ``T(s_j, s_{j0}) x`` on nodes ``0..hi``."""
        hi = self.n if hi is None else int(hi)
        i0 = self.block_of(j0)
        vals = np.empty((self.nb + 1, self.d))
        vals[i0] = np.linalg.solve(self.transfer_from_block_start(j0, i0),
                                   np.asarray(x, dtype=float))
        for i in range(i0, self.nb):
            vals[i + 1] = self.G[i] @ vals[i]
        for i in range(i0, 0, -1):
            vals[i - 1] = self.Ginv[i - 1] @ vals[i]
        out = np.empty((hi + 1, self.d))
        for i in range(self.nb):
            bs, be = self.bounds[i], self.bounds[i + 1]
            if bs > hi:
                break
            stop = min(be - 1, hi)
            out[bs:stop + 1] = self.W[bs:stop + 1] @ vals[i]
            if be <= hi:
                out[be] = vals[i + 1]
        return out

    def _block_sources(self, q: np.ndarray):
        """Per-block accumulation for the recurrence ``u_{j+1} = Phi_j u_j + q_j``.

        ``q`` has shape ``(n, d)`` or batched ``(S, n, d)``.  Returns
        ``(r, R, squeeze)``: ``r[.., j]`` is the accumulated source at node
        ``j`` relative to the block owning ``j`` (zero at block starts) and
        ``R[.., i]`` the full-block total feeding the boundary recursion.
        """
        q = np.asarray(q, dtype=float)
        squeeze = q.ndim == 2
        if squeeze:
            q = q[None]
        S, n, d = q.shape
        r = np.zeros((S, n + 1, d))
        R = np.zeros((S, self.nb, d))
        for i in range(self.nb):
            bs, be = self.bounds[i], self.bounds[i + 1]
            if bs >= n:
                break
            stop = min(be, n)
            nc = stop - bs
            y = np.empty((S, nc, d))
            if nc > 1:
                y[:, :nc - 1] = np.einsum("jkl,sjl->sjk",
                                          self.Winv[bs + 1:stop], q[:, bs:stop - 1])
            endT = self.transfer_from_block_start(stop, i)
            y[:, nc - 1] = np.linalg.solve(endT, q[:, stop - 1][..., None])[..., 0]
            cum = np.cumsum(y, axis=1)
            if nc > 1:
                r[:, bs + 1:stop] = np.einsum("jkl,sjl->sjk",
                                              self.W[bs + 1:stop], cum[:, :nc - 1])
            val = cum[:, nc - 1] @ endT.T
            if stop == be:
                R[:, i] = val
            else:
                r[:, stop] = val
        return r, R, squeeze

    def forward_inhom(self, q: np.ndarray) -> np.ndarray:
        """Solve ``u_0 = 0``, ``u_{j+1} = Phi_j u_j + q_j`` on nodes ``0..len(q)``."""
        n = np.asarray(q).shape[-2]
        r, R, squeeze = self._block_sources(q)
        ub = np.zeros((r.shape[0], self.nb + 1, self.d))
        for i in range(self.nb):
            ub[:, i + 1] = ub[:, i] @ self.G[i].T + R[:, i]
        out = self._fill(n, ub, r)
        return out[0] if squeeze else out

    def backward_inhom(self, q: np.ndarray) -> np.ndarray:
        """Solve ``v_n = 0``, ``v_{j+1} = Phi_j v_j + q_j`` backward from node ``n = len(q)``."""
        n = np.asarray(q).shape[-2]
        r, R, squeeze = self._block_sources(q)
        vb = np.zeros((r.shape[0], self.nb + 1, self.d))
        iq = self.block_of(n)
        if n == self.bounds[iq + 1]:
            iq += 1                      # terminal node sits on a block boundary
        else:
            vb[:, iq] = np.linalg.solve(self.W[n], -r[:, n][..., None])[..., 0]
        for i in range(iq - 1, -1, -1):
            vb[:, i] = (vb[:, i + 1] - R[:, i]) @ self.Ginv[i].T
        out = self._fill(n, vb, r)
        return out[0] if squeeze else out

    def _fill(self, n: int, boundary: np.ndarray, r: np.ndarray) -> np.ndarray:
        out = np.empty((boundary.shape[0], n + 1, self.d))
        for i in range(self.nb):
            bs, be = self.bounds[i], self.bounds[i + 1]
            if bs > n:
                break
            stop = min(be - 1, n)
            out[:, bs:stop + 1] = np.einsum(
                "jkl,sl->sjk", self.W[bs:stop + 1], boundary[:, i]) + r[:, bs:stop + 1]
            if be <= n:
                out[:, be] = boundary[:, i + 1]
        return out

    # -- projected transfer norms -------------------------------------------------

    def norms_into(self, jt: int, lo: int, hi: int, mask, P) -> np.ndarray:
        """``||T(s_jt, s_j) P||`` for ``j = lo..hi`` with ``hi <= jt``."""
        out = np.empty(hi - lo + 1)
        top = hi
        if hi == jt == self.n:
            out[hi - lo] = _top_norms(np.eye(self.d)[None], mask, P)[0]
            top = hi - 1
            if top < lo:
                return out
        it = self.block_of(jt)
        M = self.transfer_from_block_start(jt, it)     # T(s_jt, bounds[it])
        i = it
        while True:
            bs, be = self.bounds[i], self.bounds[i + 1]
            a = max(lo, bs)
            b = min(top, be - 1, jt)
            if a <= b:
                out[a - lo:b - lo + 1] = _top_norms(M @ self.Winv[a:b + 1], mask, P)
            if bs <= lo or i == 0:
                break
            i -= 1
            M = M @ self.G[i]
        return out

    def norms_outof(self, jb: int, lo: int, hi: int, mask, P) -> np.ndarray:
        """``||T(s_jb, s_j) P||`` for ``j = lo..hi`` with ``lo >= jb``."""
        out = np.empty(hi - lo + 1)
        rhs = P if mask is None else P[:, mask]
        ib = self.block_of(jb)
        # Bmat = T(bounds[i], s_jb) accumulated forward block by block
        Bmat = np.linalg.inv(self.transfer_from_block_start(jb, ib))
        i = ib
        while True:
            bs, be = self.bounds[i], self.bounds[i + 1]
            a = max(lo, jb if i == ib else bs)
            b = min(hi, be - 1)
            if a <= b:
                X = self.W[a:b + 1] @ Bmat             # T(s_j, s_jb)
                Z = np.linalg.solve(X, rhs)
                out[a - lo:b - lo + 1] = np.linalg.svd(Z, compute_uv=False)[:, 0]
            if hi < be:
                break
            if i + 1 == self.nb:                       # hi == n: final node
                Z = np.linalg.solve(self.G[i] @ Bmat, rhs)
                out[hi - lo] = np.linalg.svd(Z, compute_uv=False)[0]
                break
            Bmat = self.G[i] @ Bmat
            i += 1
        return out


def _top_norms(T: np.ndarray, mask, P) -> np.ndarray:
    sub = T[:, :, mask] if mask is not None else T @ P
    return np.linalg.svd(sub, compute_uv=False)[:, 0]


def propagator_grid(bundle: SystemBundle, step: float, t_hi: float) -> PropagatorGrid:
    """Cached grid covering ``[0, t_hi]`` at the given step (grown in chunks)."""
    cells = max(_MIN_CELLS, int(np.ceil(t_hi / step - 1e-9)))
    key = ("ctgrid", f"{step:.17g}")
    grid = bundle._caches.get(key)
    if grid is None or grid.n < cells:
        cells = ((cells + _CHUNK - 1) // _CHUNK) * _CHUNK
        grid = PropagatorGrid(bundle, step, cells)
        bundle._caches[key] = grid
    return grid
