"""Trajectory-batched TDVP for stochastic-MPS ensembles.

Every trajectory of a sampled ensemble shares the same tensor shapes, so the
whole sweep (QR, environments, local exponentials) runs batched over a
leading trajectory axis.  Results are deterministic for a fixed seed and do
not depend on chunking or thread configuration; reductions over trajectories
run in trajectory order.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg

from .constants import MT_TO_RAD_PER_NS
from .mpo import SuperMPO
from .states import SampledEnsemble, init_singlet_product_mps, population_operators
from .timeline import Timeline

__all__ = ["BatchedEngine"]

_CHUNK = 1024


def _expm_batched(a: np.ndarray) -> np.ndarray:
    """exp(a) for a batch of small matrices (K, m, m): Pade(7) with
    scaling-squaring, squaring count shared across the batch."""
    K, m, _ = a.shape
    nrm = max(float(np.abs(a).sum(axis=2).max()), 1e-300)
    s = max(0, int(math.ceil(math.log2(nrm / 0.5))))
    x = a / (2.0**s)
    b = (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0)
    eye = np.broadcast_to(np.eye(m, dtype=a.dtype), a.shape)
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    u = x @ (b[7] * x6 + b[5] * x4 + b[3] * x2 + b[1] * eye)
    w = b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * eye
    out = np.linalg.solve(w - u, w + u)
    for _ in range(s):
        out = out @ out
    return out


def _lanczos_batched(h, v, zeta, tol, mcap, check_from=1):
    """exp(zeta h) v for Hermitian h (K, n, n), batched over K.

    Returns (result, used_dim); convergence estimates start at iteration
    ``check_from`` (warm-started by the caller) to avoid needless small
    eigensolves.
    """
    K, n = v.shape
    beta0 = np.linalg.norm(v, axis=1)
    safe0 = np.where(beta0 > 0, beta0, 1.0)
    mcap = min(mcap, n)
    V = np.empty((mcap + 1, K, n), dtype=v.dtype)
    Vc = np.empty_like(V)
    V[0] = v / safe0[:, None]
    Vc[0] = V[0].conj()
    alphas = np.empty((mcap, K))
    betas = np.empty((mcap, K))
    y = None
    used = 1
    for j in range(mcap):
        w = np.matmul(h, V[j][:, :, None])[:, :, 0]
        a = np.real(np.sum(Vc[j] * w, axis=1))
        w -= a[:, None] * V[j]
        if j > 0:
            w -= betas[j - 1][:, None] * V[j - 1]
        dots = np.sum(Vc[: j + 1] * w[None], axis=2)  # (j+1, K)
        w -= np.add.reduce(dots[:, :, None] * V[: j + 1], axis=0)
        alphas[j] = a
        b = np.linalg.norm(w, axis=1)
        done = bool(np.all(b <= 1e-14 * safe0))
        if j + 1 >= check_from or done or j == mcap - 1:
            t = np.zeros((K, j + 1, j + 1))
            idx = np.arange(j + 1)
            t[:, idx, idx] = alphas[: j + 1].T
            if j > 0:
                off = betas[:j].T
                t[:, idx[:-1], idx[1:]] = off
                t[:, idx[1:], idx[:-1]] = off
            e = _expm_batched(zeta * t.astype(complex))
            y = e[:, :, 0] * safe0[:, None]
            used = j + 1
            err = np.abs(b * y[:, -1])
            if done or np.all(err <= tol * safe0):
                break
        if j < mcap - 1:
            betas[j] = b
            bsafe = np.where(b > 1e-300, b, 1.0)
            V[j + 1] = np.where(b[:, None] > 1e-300, w / bsafe[:, None], 0.0)
            Vc[j + 1] = V[j + 1].conj()
    out = np.add.reduce(y.T[:used, :, None] * V[:used], axis=0)
    return out, used


def _arnoldi_batched(h, v, zeta, tol, mcap, check_from=1):
    """exp(zeta h) v for general h (K, n, n), batched over K."""
    K, n = v.shape
    beta0 = np.linalg.norm(v, axis=1)
    safe0 = np.where(beta0 > 0, beta0, 1.0)
    mcap = min(mcap, n)
    V = np.empty((mcap + 1, K, n), dtype=np.result_type(v.dtype, np.complex64))
    Vc = np.empty_like(V)
    V[0] = v / safe0[:, None]
    Vc[0] = V[0].conj()
    H = np.zeros((K, mcap + 1, mcap), dtype=V.dtype)
    y = None
    used = 1
    for j in range(mcap):
        w = np.matmul(h, V[j][:, :, None])[:, :, 0]
        for _ in range(2):  # two orthogonalisation passes
            dots = np.sum(Vc[: j + 1] * w[None], axis=2)  # (j+1, K)
            H[:, : j + 1, j] += dots.T
            w = w - np.add.reduce(dots[:, :, None] * V[: j + 1], axis=0)
        b = np.linalg.norm(w, axis=1)
        H[:, j + 1, j] = b
        done = bool(np.all(b <= 1e-14 * safe0))
        if j + 1 >= check_from or done or j == mcap - 1:
            e = _expm_batched(zeta * H[:, : j + 1, : j + 1])
            y = e[:, :, 0] * safe0[:, None]
            used = j + 1
            err = np.abs(b * y[:, -1])
            if done or np.all(err <= tol * safe0):
                break
        if j < mcap - 1:
            bsafe = np.where(b > 1e-300, b, 1.0)
            V[j + 1] = np.where(b[:, None] > 1e-300, w / bsafe[:, None], 0.0)
            Vc[j + 1] = V[j + 1].conj()
    out = np.add.reduce(y.T[:used, :, None] * V[:used], axis=0)
    return out, used


class BatchedEngine:
    def __init__(self, ensemble: SampledEnsemble, plan):
        if isinstance(plan.generator, SuperMPO):
            raise ValueError("stochastic ensembles propagate in Hilbert space")
        self.ensemble = ensemble
        self.plan = plan
        self.dtype = plan.dtype
        self.scale = -1j * MT_TO_RAD_PER_NS
        self.hermitian = plan.is_hermitian()
        mpo = plan.generator
        self.w_items = [
            [(i, j, op.astype(self.dtype)) for i, j, op in core.sparse_items()]
            for core in mpo.cores
        ]
        self.w_dense = [core.dense().astype(self.dtype) for core in mpo.cores]
        self.n_sites = mpo.n_sites
        self.e_site = ensemble.system.electron_position
        self.pop_ops = {
            k: op.astype(self.dtype)
            for k, op in population_operators(ensemble.system).items()
        }

    # -- batched gauge -------------------------------------------------------

    def _split_left(self, cores, j):
        K, l, p, r = cores[j].shape
        mat = cores[j].reshape(K, l, p * r).conj().transpose(0, 2, 1)
        q, rm = np.linalg.qr(mat)
        cores[j] = np.ascontiguousarray(
            q.conj().transpose(0, 2, 1).reshape(K, -1, p, r)
        )
        return rm.conj().transpose(0, 2, 1)  # (K, l, keep)

    # -- batched environments -------------------------------------------------

    def _transfer_left(self, L, cores, k):
        a = cores[k]
        K, l, q, r = a.shape
        wout = self.w_dense[k].shape[3]
        out = np.zeros((K, r, wout, r), dtype=self.dtype)
        acm = a.conj().reshape(K, l * q, r)
        a2 = a.reshape(K, l, q * r)
        for w_in, w_out, op in self.w_items[k]:
            t = np.matmul(L[:, :, w_in, :], a2).reshape(K, l, q, r)  # bra=l slot
            t = np.tensordot(t, op, axes=(2, 1))  # (K, b, r, p)
            t = t.transpose(0, 1, 3, 2).reshape(K, l * q, r)
            out[:, :, w_out, :] += np.matmul(acm.transpose(0, 2, 1), t)
        return out

    def _transfer_right(self, R, cores, k):
        a = cores[k]
        K, l, q, r = a.shape
        win = self.w_dense[k].shape[0]
        out = np.zeros((K, l, win, l), dtype=self.dtype)
        a2 = a.reshape(K, l * q, r)
        for w_in, w_out, op in self.w_items[k]:
            t = np.matmul(a2, R[:, :, w_out, :]).reshape(K, l, q, r)  # (ket, q, bra)
            t = np.tensordot(t, op, axes=(2, 1))  # (K, ket, bra, p)
            t = t.transpose(0, 1, 3, 2).reshape(K, l, q * r)
            acm = a.conj().transpose(0, 2, 3, 1).reshape(K, q * r, l)
            out[:, :, w_in, :] += np.matmul(t, acm)
        return out

    # -- batched local propagation --------------------------------------------

    def _site_heff(self, L, R, k):
        # T[x, b, k, p, q, v] = sum_w L[x, b, w, k] W[w, p, q, v]
        w = self.w_dense[k]
        wd, p, q, wv = w.shape
        K, b, _, kk = L.shape
        t = np.matmul(
            L.transpose(0, 1, 3, 2).reshape(K, b * kk, wd), w.reshape(wd, -1)
        ).reshape(K, b, kk, p, q, wv)
        # out[x, b, p, d, k, q, c] = sum_v T[x, b, k, p, q, v] R[x, c, v, d]
        c, _, d = R.shape[1], R.shape[2], R.shape[3]
        t = t.transpose(0, 1, 3, 2, 4, 5).reshape(K, b * p * kk * q, wv)
        r2 = R.transpose(0, 2, 1, 3).reshape(K, wv, c * d)
        out = np.matmul(t, r2).reshape(K, b, p, kk, q, c, d)
        return np.ascontiguousarray(out.transpose(0, 1, 2, 6, 3, 4, 5))

    def _bond_heff(self, L, R):
        # out[x, b, d, k, c] = sum_w L[x, b, w, k] R[x, c, w, d]
        K, b, wd, kk = L.shape
        c, d = R.shape[1], R.shape[3]
        l2 = L.transpose(0, 1, 3, 2).reshape(K, b * kk, wd)
        r2 = R.transpose(0, 2, 1, 3).reshape(K, wd, c * d)
        out = np.matmul(l2, r2).reshape(K, b, kk, c, d)
        return np.ascontiguousarray(out.transpose(0, 1, 4, 2, 3))

    def _expm_apply(self, h, v, zeta, key):
        """h (K, n, n), v (K, n) -> exp(zeta h) v, batched.

        Tiny blocks go through Pade directly; larger ones through a batched
        Krylov iteration with a shared iteration count (runs until every
        trajectory converged).  ``key`` warm-starts the convergence check
        from the iteration count the same call site needed last time.
        """
        n = v.shape[1]
        if n <= 16:
            return np.matmul(_expm_batched(zeta * h), v[:, :, None])[:, :, 0]
        hint = self._m_hints.get(key, 1)
        if self.hermitian:
            out, used = _lanczos_batched(h, v, zeta, self.plan.krylov_tol,
                                         self.plan.krylov_dim_cap,
                                         check_from=max(1, hint - 1))
        else:
            out, used = _arnoldi_batched(h, v, zeta, self.plan.krylov_tol,
                                         self.plan.krylov_dim_cap,
                                         check_from=max(1, hint - 1))
        self._m_hints[key] = used
        return out

    def _evolve_site(self, cores, L, R, j, tau, key):
        K, l, p, r = cores[j].shape
        n = l * p * r
        h = self._site_heff(L, R, j).reshape(K, n, n)
        v = cores[j].reshape(K, n)
        out = self._expm_apply(h, v, self.scale * tau, ("site",) + key)
        cores[j] = out.reshape(K, l, p, r)

    def _evolve_bond(self, x, L, R, tau, key):
        K, a, b = x.shape
        h = self._bond_heff(L, R).reshape(K, a * b, a * b)
        out = self._expm_apply(h, x.reshape(K, a * b), -self.scale * tau,
                               ("bond",) + key)
        return out.reshape(K, a, b)

    # -- sweep ----------------------------------------------------------------

    def run(self) -> Timeline:
        plan = self.plan
        ens = self.ensemble
        n_steps = plan.n_steps
        observe = [0] + [
            s for s in range(1, n_steps + 1)
            if s % plan.observe_every == 0 or s == n_steps
        ]
        times = np.array([s * plan.dt for s in observe])
        all_pops = {k: [] for k in self.pop_ops}
        all_norms = []
        for start in range(0, ens.K, _CHUNK):
            idx = range(start, min(start + _CHUNK, ens.K))
            pops, norms = self._run_chunk([ens.angles[k] for k in idx], observe)
            for k in self.pop_ops:
                all_pops[k].append(pops[k])
            all_norms.append(norms)
        pops = {k: np.concatenate(v, axis=0) for k, v in all_pops.items()}  # (K, T)
        norms = np.concatenate(all_norms, axis=0)
        decay = np.exp(-plan.analytic_decay_us * 1e-3 * times)[None, :]
        mean = {}
        stderr = {}
        kk = ens.K
        for key, arr in pops.items():
            arr = arr * decay
            mean[key] = arr.mean(axis=0)
            stderr[key] = (
                arr.std(axis=0, ddof=1) / math.sqrt(kk) if kk > 1 else np.zeros(len(times))
            )
        trace = (norms * decay).mean(axis=0).astype(complex)
        max_bond = np.full(len(times), self._max_bond, dtype=int)
        warn = np.zeros(len(times), dtype=int)
        return Timeline(times, mean, trace, max_bond, warn, stderr=stderr,
                        meta={"K": kk, "per_trajectory": pops})

    def _run_chunk(self, angles_list, observe):
        plan = self.plan
        sysm = self.ensemble.system
        K = len(angles_list)
        # stack rank-1 trajectories, then pad to the working rank
        protos = [init_singlet_product_mps(sysm, a) for a in angles_list]
        cap = plan.bond_cap if getattr(plan, "bond_cap", None) else 10**9
        padded = []
        for idx, st in enumerate(protos):
            st = st.astype(self.dtype)
            st.pad_bonds(cap, seed=(self.ensemble.seed, idx), noise=1e-10)
            padded.append(st)
        cores = [
            np.ascontiguousarray(
                np.stack([p.cores[j] for p in padded]).astype(self.dtype)
            )
            for j in range(self.n_sites)
        ]
        self._max_bond = max(max(c.shape[3] for c in cores), 1)
        self._m_hints = {}
        n = self.n_sites
        L = [None] * (n + 1)
        R = [None] * (n + 1)
        L[0] = np.ones((K, 1, 1, 1), dtype=self.dtype)
        R[n] = np.ones((K, 1, 1, 1), dtype=self.dtype)
        for k in range(n - 1, 0, -1):
            R[k] = self._transfer_right(R[k + 1], cores, k)
        pops = {key: np.empty((K, len(observe))) for key in self.pop_ops}
        norms = np.empty((K, len(observe)))
        col = 0
        if observe[0] == 0:
            self._record(cores, pops, norms, col)
            col += 1
        tau = 0.5 * plan.dt
        observe_set = set(observe)
        for step in range(1, plan.n_steps + 1):
            # left-to-right
            for j in range(n):
                if j < n - 1:
                    self._evolve_site(cores, L[j], R[j + 1], j, tau, (j, 0))
                    self._move_right_evolved(cores, L, R, j, tau)
                else:
                    self._evolve_site(cores, L[j], R[j + 1], j, plan.dt, (j, 0))
            # right-to-left
            for j in range(n - 1, 0, -1):
                x = self._split_left(cores, j)
                R[j] = self._transfer_right(R[j + 1], cores, j)
                x = self._evolve_bond(x, L[j], R[j], tau, (j - 1, 1))
                cores[j - 1] = np.einsum("xapb,xbc->xapc", cores[j - 1], x)
                self._evolve_site(cores, L[j - 1], R[j], j - 1, tau, (j - 1, 1))
            if step in observe_set:
                self._record(cores, pops, norms, col)
                col += 1
        return pops, norms

    def _move_right_evolved(self, cores, L, R, j, tau):
        K, l, p, r = cores[j].shape
        q, x = np.linalg.qr(cores[j].reshape(K, l * p, r))
        cores[j] = np.ascontiguousarray(q.reshape(K, l, p, -1))
        L[j + 1] = self._transfer_left(L[j], cores, j)
        x = self._evolve_bond(x, L[j + 1], R[j + 1], tau, (j, 0))
        cores[j + 1] = np.einsum("xab,xbpc->xapc", x, cores[j + 1])

    def _record(self, cores, pops, norms, col):
        rho = self._reduced_density(cores)
        for key, op in self.pop_ops.items():
            pops[key][:, col] = np.real(np.einsum("xpq,qp->x", rho, op, optimize=True))
        norms[:, col] = np.real(np.einsum("xpp->x", rho, optimize=True))

    def _reduced_density(self, cores):
        e = self.e_site
        K = cores[0].shape[0]
        left = np.ones((K, 1, 1), dtype=self.dtype)
        for k in range(e):
            a = cores[k]
            left = np.einsum("xbk,xbpc,xkpd->xcd", left, a.conj(), a, optimize=True)
        right = np.ones((K, 1, 1), dtype=self.dtype)
        for k in range(self.n_sites - 1, e, -1):
            a = cores[k]
            right = np.einsum("xkpa,xab,xlpb->xkl", a, right, a.conj(), optimize=True)
        a = cores[e]
        return np.einsum("xbk,xkpc,xbqd,xcd->xpq", left, a, a.conj(), right,
                         optimize=True)
