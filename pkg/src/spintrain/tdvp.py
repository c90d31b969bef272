"""One-site projector-splitting TDVP propagation with Krylov local steps.

The symmetric second-order integrator sweeps left-to-right and back once per
time step: every centre tensor is evolved forward by dt/2 under its effective
generator, every bond tensor backward by dt/2 (the minus-sign terms of the
tangent-space projector), with QR/LQ gauge moves in between.  Local
exponentials use Lanczos (Hermitian generators) or Arnoldi, falling back to
exact dense exponentials for small blocks.

Generators: an MPO in mT propagates Hilbert-space states (MPS, LPMPS) as
exp(-i |gamma_e| H t); a SuperMPO in ns^-1 propagates vMPDOs as exp(L t).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg

from .constants import MT_TO_RAD_PER_NS
from .mpo import MPO, SuperMPO
from .states import LPMPS, MPS, VMPDO, SampledEnsemble, TensorTrain
from .timeline import Timeline

__all__ = [
    "PropagationPlan",
    "EffectiveOperator",
    "local_exponential",
    "tdvp_sweep",
    "propagate",
    "ensemble_propagate",
    "KrylovInfo",
]


class PropagationError(RuntimeError):
    pass


@dataclass
class PropagationPlan:
    """Time grid, generator and solver knobs of one propagation."""

    dt: float  # ns
    t_max: float  # ns
    generator: MPO | SuperMPO
    krylov_dim_cap: int = 30
    krylov_tol: float = 1e-10
    observe_every: int = 1
    dense_local_cutoff: int = 128
    precision: str = "double"  # "double" | "single"
    analytic_decay_us: float = 0.0  # equal-rate Haberkorn folded in as exp(-kt)
    hermitian: bool | None = None  # override the generator's flag
    bond_cap: int | None = None  # working rank for ensemble trajectories
    extra_observables: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_max < self.dt:
            raise ValueError("t_max must be at least dt")
        if self.krylov_dim_cap < 2:
            raise ValueError("krylov_dim_cap must be >= 2")
        if self.precision not in ("double", "single"):
            raise ValueError("precision must be 'double' or 'single'")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def dtype(self):
        return np.complex128 if self.precision == "double" else np.complex64

    def is_hermitian(self) -> bool:
        if self.hermitian is not None:
            return self.hermitian
        return self.generator.hermitian


@dataclass
class KrylovInfo:
    used_dim: int = 0
    converged: bool = True


class EffectiveOperator:
    """Contraction closure L * W * R acting on a centre tensor (site mode,
    ``w_items`` set) or L * R acting on a bond tensor (``w_items`` None).

    Environment layouts: left (bra_bond, w, ket_bond); right
    (ket_bond, w, bra_bond).
    """

    def __init__(self, left, right, w_items, shape, phys_dim=None,
                 left_id=None, right_id=None):
        self.left = left
        self.right = right
        self.w_items = w_items  # list of (w_in, w_out, op) or None for bonds
        self.shape = tuple(shape)
        self.phys_dim = phys_dim
        # channel indices whose environment is exactly the identity (left:
        # the generator's fresh channel in left-canonical gauge; right: the
        # completed channel in right-canonical gauge); their matrix-products
        # are skipped.
        self.left_id = left_id
        self.right_id = right_id
        wd = left.shape[1]
        if left_id is not None and wd > 1:
            keep = [w for w in range(wd) if w != left_id]
            self._l_keep = keep
            self._l_red = np.ascontiguousarray(left[:, keep, :])
        else:
            self._l_keep = None
        wv = right.shape[1]
        if w_items is not None and right_id is not None and wv > 1:
            keep = [w for w in range(wv) if w != right_id]
            self._r_keep = keep
            self._r_red = np.ascontiguousarray(
                right[:, keep, :].transpose(1, 0, 2)
            ).reshape((wv - 1) * right.shape[0], right.shape[2])
        else:
            self._r_keep = None

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    def apply(self, tensor: np.ndarray) -> np.ndarray:
        if tensor.shape != self.shape:
            raise ValueError(f"tensor shape {tensor.shape} != {self.shape}")
        L, R = self.left, self.right
        if self.w_items is None:
            a, b = tensor.shape
            la, wd, _ = L.shape
            if self._l_keep is not None:
                t = np.empty((la, wd, b), dtype=tensor.dtype)
                red = (self._l_red.reshape(la * (wd - 1), a) @ tensor)
                t[:, self._l_keep, :] = red.reshape(la, wd - 1, b)
                t[:, self.left_id, :] = tensor
            else:
                t = (L.reshape(la * wd, a) @ tensor).reshape(la, wd, b)
            t = t.transpose(0, 2, 1).reshape(la, b * wd)
            return t @ R.reshape(b * wd, R.shape[2])
        l, p, r = tensor.shape
        lb, wd, _ = L.shape
        rb = R.shape[2]
        wv = R.shape[1]
        if self._l_keep is not None:
            t1 = np.empty((lb, wd, p, r), dtype=tensor.dtype)
            red = self._l_red.reshape(lb * (wd - 1), l) @ tensor.reshape(l, p * r)
            t1[:, self._l_keep, :, :] = red.reshape(lb, wd - 1, p, r)
            t1[:, self.left_id, :, :] = tensor
        else:
            t1 = (L.reshape(lb * wd, l) @ tensor.reshape(l, p * r)).reshape(
                lb, wd, p, r
            )
        t2 = np.zeros((lb, self.phys_dim, wv, r), dtype=t1.dtype)
        for w_in, w_out, op in self.w_items:
            blk = np.tensordot(op, t1[:, w_in, :, :], axes=(1, 1))  # (p', lb, r)
            t2[:, :, w_out, :] += blk.transpose(1, 0, 2)
        if self._r_keep is not None:
            keep = self._r_keep
            t2k = np.ascontiguousarray(t2[:, :, keep, :])
            t3 = t2k.reshape(lb * self.phys_dim, (wv - 1) * r) @ self._r_red
            t3 = t3.reshape(lb, self.phys_dim, rb) + t2[:, :, self.right_id, :]
            return t3
        t3 = t2.reshape(lb * self.phys_dim, wv * r) @ (
            R.transpose(1, 0, 2).reshape(wv * r, rb)
        )
        return t3.reshape(lb, self.phys_dim, rb)

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        return self.apply(vec.reshape(self.shape)).reshape(-1)

    def to_dense(self) -> np.ndarray:
        L, R = self.left, self.right
        if self.w_items is None:
            h = np.einsum("bwk,cwd->bdkc", L, R, optimize=True)
            n = self.dim
            return h.reshape(n, n)
        win = self.left.shape[1]
        wout = self.right.shape[1]
        d = self.phys_dim
        w = np.zeros((win, d, d, wout), dtype=L.dtype)
        for i, j, op in self.w_items:
            w[i, :, :, j] = op
        h = np.einsum("bwk,wpqv,cvd->bpdkqc", L, w, R, optimize=True)
        n = self.dim
        return h.reshape(n, n)


# ---------------------------------------------------------------------------
# local exponentials


def local_exponential(effop: EffectiveOperator, tensor: np.ndarray, zeta: complex,
                      hermitian: bool, tol: float = 1e-10, dim_cap: int = 30,
                      dense_cutoff: int = 128,
                      herm_phase: complex = 1.0) -> tuple[np.ndarray, KrylovInfo]:
    """Approximate exp(zeta * effop) @ tensor.

    Lanczos (tridiagonal) when ``herm_phase * effop`` is Hermitian (phase 1
    for Hamiltonians, 1j for jump-free Liouvillians), Arnoldi otherwise;
    exact dense exponential below ``dense_cutoff``.  Hitting the Krylov
    dimension cap sets a warning flag instead of failing.
    """
    v0 = tensor.reshape(-1)
    nrm = np.linalg.norm(v0)
    if nrm == 0.0:
        raise ValueError("cannot exponentiate from a zero tensor")
    if effop.dim <= dense_cutoff:
        h = effop.to_dense()
        if hermitian:
            evals, evecs = np.linalg.eigh(herm_phase * h)
            out = evecs @ (np.exp((zeta / herm_phase) * evals)
                           * (evecs.conj().T @ v0))
        else:
            out = scipy.linalg.expm(zeta * h) @ v0
        return out.reshape(effop.shape), KrylovInfo(0, True)
    if hermitian:
        if herm_phase == 1.0:
            matvec = effop.matvec
        else:
            matvec = lambda v: herm_phase * effop.matvec(v)  # noqa: E731
        out, info = _lanczos_expm(matvec, v0, zeta / herm_phase, tol, dim_cap)
    else:
        out, info = _arnoldi_expm(effop.matvec, v0, zeta, tol, dim_cap)
    return out.reshape(effop.shape), info


def _lanczos_expm(matvec, v0, zeta, tol, mcap):
    beta0 = np.linalg.norm(v0)
    V = [v0 / beta0]
    alphas, betas = [], []
    last_err = np.inf
    y = None
    for j in range(mcap):
        w = matvec(V[j])
        a = float(np.real(np.vdot(V[j], w)))
        w = w - a * V[j]
        if j > 0:
            w = w - betas[j - 1] * V[j - 1]
        # full reorthogonalisation keeps the basis numerically orthonormal
        for q in V:
            w = w - np.vdot(q, w) * q
        alphas.append(a)
        b = float(np.linalg.norm(w))
        evals, evecs = scipy.linalg.eigh_tridiagonal(alphas, betas)
        coeff = evecs @ (np.exp(zeta * evals) * evecs[0].conj())
        y = coeff * beta0
        err = abs(b * y[-1])
        if err <= tol * beta0 or b <= 1e-14 * beta0:
            out = np.zeros_like(v0)
            for c, q in zip(y, V):
                out += c * q
            return out, KrylovInfo(j + 1, True)
        betas.append(b)
        V.append(w / b)
        last_err = err
    out = np.zeros_like(v0)
    for c, q in zip(y, V[: len(y)]):
        out += c * q
    return out, KrylovInfo(mcap, False)


def _arnoldi_expm(matvec, v0, zeta, tol, mcap):
    beta0 = np.linalg.norm(v0)
    V = [v0 / beta0]
    H = np.zeros((mcap + 1, mcap), dtype=complex)
    y = None
    for j in range(mcap):
        w = matvec(V[j])
        for i in range(j + 1):
            H[i, j] = np.vdot(V[i], w)
            w = w - H[i, j] * V[i]
        # second orthogonalisation pass for robustness
        for i in range(j + 1):
            c = np.vdot(V[i], w)
            H[i, j] += c
            w = w - c * V[i]
        b = float(np.linalg.norm(w))
        H[j + 1, j] = b
        e = scipy.linalg.expm(zeta * H[: j + 1, : j + 1])
        y = e[:, 0] * beta0
        err = abs(b * y[-1])
        if err <= tol * beta0 or b <= 1e-14 * beta0:
            out = np.zeros_like(v0)
            for c, q in zip(y, V):
                out += c * q
            return out, KrylovInfo(j + 1, True)
        V.append(w / b)
    out = np.zeros_like(v0)
    for c, q in zip(y, V[: len(y)]):
        out += c * q
    return out, KrylovInfo(mcap, False)


# ---------------------------------------------------------------------------
# the sweep engine


class _Engine:
    def __init__(self, state: TensorTrain, plan: PropagationPlan):
        mpo = plan.generator
        if mpo.n_sites != state.n_sites:
            raise PropagationError(
                f"generator has {mpo.n_sites} sites, state has {state.n_sites}"
            )
        if isinstance(state, VMPDO) != isinstance(mpo, SuperMPO):
            raise PropagationError(
                "vMPDO states require a SuperMPO generator and vice versa"
            )
        self.state = state
        self.plan = plan
        self.dtype = plan.dtype
        # generator scale: MPO is stored in mT, SuperMPO already in ns^-1
        self.scale = 1.0 if isinstance(mpo, SuperMPO) else -1j * MT_TO_RAD_PER_NS
        self.hermitian = plan.is_hermitian()
        # phase c with c * G_eff Hermitian: jump-free Liouvillians are
        # skew-Hermitian, Hamiltonian blocks Hermitian
        self.herm_phase = 1j if isinstance(mpo, SuperMPO) else 1.0
        self.w_items = []
        self.w_dense = []
        for k, core in enumerate(mpo.cores):
            d_state = state.site_dims[k]
            if core.phys_dim != d_state:
                raise PropagationError(
                    f"site {k}: generator phys dim {core.phys_dim} != state dim {d_state}"
                )
            self.w_items.append(
                [(i, j, np.ascontiguousarray(op.astype(self.dtype)))
                 for i, j, op in core.sparse_items()]
            )
            # dense cores are used for environment transfers when the
            # (bond x phys^2) block is small; None marks the sparse path
            if core.bond_in * core.bond_out * core.phys_dim**2 <= 4096:
                self.w_dense.append(core.dense().astype(self.dtype))
            else:
                self.w_dense.append(None)
        self.w_dims = [(c.bond_in, c.bond_out) for c in mpo.cores]
        ids = getattr(mpo, "identity_channels", None)
        self.id_channels = ids if ids and len(ids) == mpo.n_sites - 1 else None
        state.cores = [np.ascontiguousarray(c.astype(self.dtype)) for c in state.cores]
        state.canonicalize(0)
        n = state.n_sites
        self.L = [None] * (n + 1)
        self.R = [None] * (n + 1)
        self.L[0] = np.ones((1, 1, 1), dtype=self.dtype)
        self.R[n] = np.ones((1, 1, 1), dtype=self.dtype)
        for k in range(n - 1, 0, -1):
            self.R[k] = self._transfer_right(self.R[k + 1], k)
        self.max_krylov = 0
        self.warn = False

    # env shapes: L[k] (bra, w, ket) left of site k; R[k] (ket, w, bra)
    # right of site k-1 (i.e. covering sites k..n-1).

    def _transfer_left(self, L, k):
        a = self.state.cores[k]
        win, wout = self.w_dims[k]
        ac = a.conj()
        w = self.w_dense[k]
        if w is not None:
            t = np.tensordot(L, a, axes=(2, 0))  # (bra, w, q, ket')
            t = np.tensordot(t, w, axes=([1, 2], [0, 2]))  # (bra, ket', p, wout)
            t = np.tensordot(ac, t, axes=([0, 1], [0, 2]))  # (bra', ket', wout)
            return np.ascontiguousarray(t.transpose(0, 2, 1))
        out = np.zeros((a.shape[2], wout, a.shape[2]), dtype=self.dtype)
        for w_in, w_out, op in self.w_items[k]:
            t = np.tensordot(L[:, w_in, :], a, axes=(1, 0))  # (bra, q, ket')
            t = np.tensordot(op, t, axes=(1, 1))  # (p', bra, ket')
            out[:, w_out, :] += np.tensordot(
                ac, t, axes=([0, 1], [1, 0])
            )  # (bra', ket')
        return out

    def _transfer_right(self, R, k):
        a = self.state.cores[k]
        win, wout = self.w_dims[k]
        ac = a.conj()
        w = self.w_dense[k]
        if w is not None:
            t = np.tensordot(a, R, axes=(2, 0))  # (ket', q, wv, bra)
            t = np.tensordot(t, w, axes=([1, 2], [2, 3]))  # (ket', bra, win, p)
            return np.tensordot(t, ac, axes=([1, 3], [2, 1]))  # (ket', win, bra')
        out = np.zeros((a.shape[0], win, a.shape[0]), dtype=self.dtype)
        for w_in, w_out, op in self.w_items[k]:
            t = np.tensordot(a, R[:, w_out, :], axes=(2, 0))  # (ket', q, bra)
            t = np.tensordot(op, t, axes=(1, 1))  # (p, ket', bra)
            out[:, w_in, :] += np.tensordot(
                t, ac, axes=([0, 2], [1, 2])
            )  # (ket', bra')
        return out

    def _ids(self, bond):
        if not self.id_channels or not 0 <= bond < len(self.id_channels):
            return (None, None)
        return self.id_channels[bond]

    def _site_eff(self, j):
        a = self.state.cores[j]
        left_id = self._ids(j - 1)[0] if j > 0 else None
        right_id = self._ids(j)[1] if j < self.state.n_sites - 1 else None
        return EffectiveOperator(
            self.L[j], self.R[j + 1], self.w_items[j], a.shape,
            phys_dim=a.shape[1], left_id=left_id, right_id=right_id,
        )

    def _bond_eff(self, j, shape):
        # bond between sites j and j+1: L includes sites 0..j, R sites j+1..
        return EffectiveOperator(
            self.L[j + 1], self.R[j + 1], None, shape,
            left_id=self._ids(j)[0],
        )

    def _exp(self, eff, tensor, tau_sign, tau):
        zeta = self.scale * tau * tau_sign
        out, info = local_exponential(
            eff, tensor, zeta, self.hermitian, self.plan.krylov_tol,
            self.plan.krylov_dim_cap, self.plan.dense_local_cutoff,
            herm_phase=self.herm_phase,
        )
        self.max_krylov = max(self.max_krylov, info.used_dim)
        if not info.converged:
            self.warn = True
        return out

    def step(self, dt):
        st = self.state
        n = st.n_sites
        tau = 0.5 * dt
        if st.center != 0:
            st.move_center(0)
        # left-to-right half sweep
        for j in range(n):
            if j < n - 1:
                psi = self._exp(self._site_eff(j), st.cores[j], +1, tau)
                l, p, r = psi.shape
                q, x = np.linalg.qr(psi.reshape(l * p, r))
                st.cores[j] = np.ascontiguousarray(q.reshape(l, p, -1))
                self.L[j + 1] = self._transfer_left(self.L[j], j)
                x = self._exp(self._bond_eff(j, x.shape), x, -1, tau)
                st.cores[j + 1] = np.tensordot(x, st.cores[j + 1], axes=(1, 0))
                st.center = j + 1
            else:
                st.cores[j] = self._exp(self._site_eff(j), st.cores[j], +1, dt)
        # right-to-left half sweep
        for j in range(n - 1, 0, -1):
            psi = st.cores[j]
            l, p, r = psi.shape
            q2, r2 = np.linalg.qr(psi.reshape(l, p * r).conj().T)
            st.cores[j] = np.ascontiguousarray(q2.conj().T.reshape(-1, p, r))
            x = r2.conj().T  # (l, keep)
            self.R[j] = self._transfer_right(self.R[j + 1], j)
            x = self._exp(self._bond_eff(j - 1, x.shape), x, -1, tau)
            st.cores[j - 1] = np.tensordot(st.cores[j - 1], x, axes=(2, 0))
            st.center = j - 1
            st.cores[j - 1] = self._exp(self._site_eff(j - 1), st.cores[j - 1], +1, tau)
        if not np.all(np.isfinite(st.cores[0])):
            raise PropagationError(
                "propagation produced non-finite values (step too large or "
                "generator ill-conditioned)"
            )


def tdvp_sweep(state: TensorTrain, plan: PropagationPlan) -> TensorTrain:
    """Advance ``state`` by one step ``plan.dt`` (symmetric one-site sweep)."""
    _Engine(state, plan).step(plan.dt)
    return state


def _observe(state, plan, t_ns):
    pops = state.electronic_populations()
    decay = math.exp(-plan.analytic_decay_us * 1e-3 * t_ns)
    row = {k: v * decay for k, v in pops.items()}
    extras = {name: fn(state) for name, fn in plan.extra_observables.items()}
    return row, extras


def propagate(state: TensorTrain, plan: PropagationPlan,
              observers: dict | None = None) -> Timeline:
    """Propagate a state over the plan's grid, recording electronic
    populations, trace/norm, bond and Krylov diagnostics."""
    if observers:
        plan.extra_observables = {**plan.extra_observables, **observers}
    engine = _Engine(state, plan)
    n_steps = plan.n_steps
    times, rows, extras_rows, bonds, warns = [], [], [], [], []
    row, extras = _observe(state, plan, 0.0)
    times.append(0.0)
    rows.append(row)
    extras_rows.append(extras)
    bonds.append(state.max_bond)
    warns.append(0)
    for step in range(1, n_steps + 1):
        engine.step(plan.dt)
        if step % plan.observe_every == 0 or step == n_steps:
            t = step * plan.dt
            row, extras = _observe(state, plan, t)
            times.append(t)
            rows.append(row)
            extras_rows.append(extras)
            bonds.append(state.max_bond)
            warns.append(int(engine.warn))
    keys = [k for k in rows[0] if k != "trace"]
    populations = {k: np.array([r[k] for r in rows]) for k in keys}
    trace = np.array([r["trace"] for r in rows], dtype=complex)
    meta = {"max_krylov": engine.max_krylov}
    for name in extras_rows[0]:
        populations[name] = np.array([e[name] for e in extras_rows])
    return Timeline(
        np.array(times), populations, trace,
        np.array(bonds, dtype=int), np.array(warns, dtype=int), meta=meta,
    )


def ensemble_propagate(ensemble: SampledEnsemble, plan: PropagationPlan) -> Timeline:
    """Trajectory ensemble of stochastic MPS runs: mean and standard error of
    each electronic population.

    All trajectories share their tensor shapes, so the sweep is evaluated for
    the whole batch at once; results are deterministic for a fixed seed
    independent of any thread configuration.
    """
    from .batched import BatchedEngine  # local import to keep module load light

    engine = BatchedEngine(ensemble, plan)
    return engine.run()
