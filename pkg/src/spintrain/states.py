"""Tensor-train state representations: MPS, vectorised MPDO, locally
purified MPS; canonical forms, initial states, sampling and observables.

Core layout is (bond_left, phys, bond_right).  The orthogonality centre is
tracked explicitly; cores left of it are left-orthonormal, cores right of it
right-orthonormal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import spin_operators
from .linalg import twin_space_permutation, vec_col
from .spin_model import SpinSystem, projection_operators

__all__ = [
    "MPS",
    "VMPDO",
    "LPMPS",
    "SampledEnsemble",
    "sample_angles",
    "coherent_state",
    "init_singlet_product_mps",
    "init_singlet_mixed_lpmps",
    "init_vmpdo_from_density",
    "population_operators",
    "canonicalize",
    "electronic_populations",
    "truncate_sweep",
]

SVD_RELATIVE_FLOOR = 1e-14  # singular values below floor * sigma_max are zero


def population_operators(system: SpinSystem) -> dict[str, np.ndarray]:
    """Electronic-state projectors keyed by population name.

    Single pair: S, T0, T+, T-.  Two-pair model: the same set per pair,
    suffixed .C / .D (block-embedded in the 8-dim electronic site).
    """
    proj = projection_operators()
    names = [("S", "S"), ("T0", "T0"), ("T+", "T+"), ("T-", "T-")]
    if not system.is_two_pair:
        return {out: proj[key] for out, key in names}
    zero = np.zeros((4, 4))
    ops = {}
    for out, key in names:
        ops[out + ".C"] = np.block([[proj[key], zero], [zero, zero]])
        ops[out + ".D"] = np.block([[zero, zero], [zero, proj[key]]])
    return ops


class TensorTrain:
    """Shared gauge machinery of the three state representations."""

    kind = "train"

    def __init__(self, cores, center, system: SpinSystem, cap: int | None = None,
                 seed=None):
        self.cores = list(cores)
        self.center = int(center)
        self.system = system
        self.cap = cap
        self.seed = seed

    # -- structure ----------------------------------------------------------

    @property
    def n_sites(self) -> int:
        return len(self.cores)

    @property
    def site_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def bond_dims(self) -> list[int]:
        return [c.shape[2] for c in self.cores[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    @property
    def dtype(self):
        return self.cores[0].dtype

    def copy(self):
        out = self.__class__.__new__(self.__class__)
        out.__dict__.update(self.__dict__)
        out.cores = [c.copy() for c in self.cores]
        return out

    def astype(self, dtype):
        out = self.copy()
        out.cores = [c.astype(dtype) for c in out.cores]
        return out

    # -- gauge --------------------------------------------------------------

    def move_center(self, target: int):
        """Shift the orthogonality centre by QR (rightwards) / LQ (leftwards)."""
        if not 0 <= target < self.n_sites:
            raise IndexError(f"centre {target} out of range")
        while self.center < target:
            k = self.center
            l, p, r = self.cores[k].shape
            q, rmat = np.linalg.qr(self.cores[k].reshape(l * p, r))
            self.cores[k] = np.ascontiguousarray(q.reshape(l, p, -1))
            self.cores[k + 1] = np.tensordot(rmat, self.cores[k + 1], axes=(1, 0))
            self.center += 1
        while self.center > target:
            k = self.center
            l, p, r = self.cores[k].shape
            q, rmat = np.linalg.qr(self.cores[k].reshape(l, p * r).conj().T)
            self.cores[k] = np.ascontiguousarray(q.conj().T.reshape(-1, p, r))
            self.cores[k - 1] = np.tensordot(self.cores[k - 1], rmat.conj().T, axes=(2, 0))
            self.center -= 1
        return self

    def canonicalize(self, center: int = 0):
        """Restore full canonical form around ``center`` from scratch."""
        self.center = self.n_sites - 1
        self.move_center(0)
        self.move_center(center)
        return self

    def gauge_defect(self) -> float:
        """Largest deviation of off-centre cores from their isometry condition."""
        worst = 0.0
        for k, core in enumerate(self.cores):
            l, p, r = core.shape
            if k < self.center:
                m = core.reshape(l * p, r)
                worst = max(worst, np.abs(m.conj().T @ m - np.eye(r)).max())
            elif k > self.center:
                m = core.reshape(l, p * r)
                worst = max(worst, np.abs(m @ m.conj().T - np.eye(l)).max())
        return worst

    def norm(self) -> float:
        """2-norm of the coefficient tensor (uses the centre gauge)."""
        return float(np.linalg.norm(self.cores[self.center]))

    def scale(self, factor):
        self.cores[self.center] = self.cores[self.center] * factor
        return self

    # -- dense reconstruction (small systems / oracles) ---------------------

    def to_dense_vector(self, cap: int = 2**22) -> np.ndarray:
        total = int(np.prod(self.site_dims))
        if total > cap:
            raise ValueError(f"dense reconstruction of dim {total} exceeds cap")
        vec = np.ones((1, 1), dtype=complex)
        for core in self.cores:
            vec = np.tensordot(vec, core.astype(complex), axes=(1, 0))
            vec = vec.reshape(vec.shape[0] * vec.shape[1], vec.shape[2])
        return vec.reshape(-1)

    # -- rank management -----------------------------------------------------

    def full_rank_bounds(self) -> list[int]:
        dims = self.site_dims
        bounds = []
        left = 1
        total = int(np.prod([int(d) for d in dims], dtype=np.int64))
        right = total
        for d in dims[:-1]:
            left = min(left * d, 2**62)
            right //= d
            bounds.append(min(left, right))
        return bounds

    def pad_bonds(self, cap: int, seed: int = 0, noise: float = 1e-10):
        """Enlarge every bond to min(cap, full rank) by appending small random
        entries, then restore canonical form and the original norm.

        One-site TDVP preserves bond dimensions, so states are padded to
        their working rank before propagation.
        """
        rng = np.random.default_rng(seed)
        bounds = self.full_rank_bounds()
        self.canonicalize(0)
        nrm = self.norm()
        scale = noise * (nrm if nrm > 0 else 1.0)
        for k in range(self.n_sites - 1):
            target = min(cap, bounds[k])
            have = self.cores[k].shape[2]
            if have >= target:
                continue
            grow = target - have
            l, p, r = self.cores[k].shape
            blk = rng.normal(size=(l, p, grow)) + 1j * rng.normal(size=(l, p, grow))
            blk *= scale / max(np.linalg.norm(blk), 1e-300)
            self.cores[k] = np.concatenate(
                [self.cores[k], blk.astype(self.cores[k].dtype)], axis=2
            )
            l2, p2, r2 = self.cores[k + 1].shape
            blk2 = rng.normal(size=(grow, p2, r2)) + 1j * rng.normal(size=(grow, p2, r2))
            blk2 *= scale / max(np.linalg.norm(blk2), 1e-300)
            self.cores[k + 1] = np.concatenate(
                [self.cores[k + 1], blk2.astype(self.cores[k + 1].dtype)], axis=0
            )
        self.canonicalize(0)
        if nrm > 0:
            self.scale(nrm / self.norm())
        return self

    def truncate_sweep(self, cap: int) -> float:
        """SVD-truncate every bond to ``cap`` (largest singular values kept);
        returns the total discarded weight (sum of dropped sigma^2)."""
        if cap < 1:
            raise ValueError("bond cap must be >= 1")
        self.canonicalize(0)
        discarded = 0.0
        for k in range(self.n_sites - 1):
            l, p, r = self.cores[k].shape
            u, s, vh = np.linalg.svd(self.cores[k].reshape(l * p, r),
                                     full_matrices=False)
            keep = min(cap, int(np.sum(s > SVD_RELATIVE_FLOOR * max(s[0], 1e-300))))
            keep = max(keep, 1)
            discarded += float(np.sum(s[keep:] ** 2))
            self.cores[k] = np.ascontiguousarray(u[:, :keep].reshape(l, p, keep))
            carry = (s[:keep, None] * vh[:keep]).astype(self.cores[k + 1].dtype)
            self.cores[k + 1] = np.tensordot(carry, self.cores[k + 1], axes=(1, 0))
            self.center = k + 1
        return discarded

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        payload = {f"core_{k}": c for k, c in enumerate(self.cores)}
        np.savez(
            path,
            kind=self.kind,
            n_sites=self.n_sites,
            center=self.center,
            cap=-1 if self.cap is None else self.cap,
            seed=-1 if self.seed is None else self.seed,
            **payload,
        )

    @classmethod
    def load(cls, path, system: SpinSystem):
        data = np.load(path)
        n = int(data["n_sites"])
        cores = [data[f"core_{k}"] for k in range(n)]
        cap = int(data["cap"])
        seed = int(data["seed"])
        out = cls(cores, int(data["center"]), system,
                  cap=None if cap < 0 else cap, seed=None if seed < 0 else seed)
        return out

    # -- observables ---------------------------------------------------------

    def _env_pair(self, site: int):
        """Bra-ket environments: left[bra, ket] over sites < site and
        right[ket, bra] over sites > site."""
        left = np.ones((1, 1), dtype=self.dtype)
        for k in range(site):
            a = self.cores[k]
            left = np.einsum("bk,bpc,kpd->cd", left, a.conj(), a, optimize=True)
        right = np.ones((1, 1), dtype=self.dtype)
        for k in range(self.n_sites - 1, site, -1):
            a = self.cores[k]
            right = np.einsum("kpa,ab,lpb->kl", a, right, a.conj(), optimize=True)
        return left, right

    def reduced_density(self, site: int) -> np.ndarray:
        """Reduced density matrix of one site: rho[p, q] = sum_rest
        Psi[p, rest] conj(Psi[q, rest]); expectations are Tr(rho @ op)."""
        left, right = self._env_pair(site)
        a = self.cores[site]
        return np.einsum(
            "bk,kpc,bqd,cd->pq", left, a, a.conj(), right, optimize=True
        )


class MPS(TensorTrain):
    """Pure-state train over the system's site order (Hilbert space)."""

    kind = "mps"

    @property
    def electron_site(self) -> int:
        return self.system.electron_position

    def norm_squared(self) -> float:
        return self.norm() ** 2

    def electronic_populations(self) -> dict[str, float]:
        rho = self.reduced_density(self.electron_site)
        out = {}
        for name, op in population_operators(self.system).items():
            out[name] = float(np.real(np.trace(rho @ op)))
        out["trace"] = float(np.real(np.trace(rho)))
        return out


class VMPDO(TensorTrain):
    """Vectorised density-operator train; local dimensions are d_k^2 in the
    twin-space ordering vec(|sigma'><sigma|)."""

    kind = "vmpdo"

    def __init__(self, cores, center, system, cap=None, seed=None,
                 electron_basis: np.ndarray | None = None):
        super().__init__(cores, center, system, cap, seed)
        # Optional isometry (d_e^2 x d_reduced) selecting the retained
        # electronic Liouville basis (sector projection).
        self.electron_basis = electron_basis

    @property
    def electron_site(self) -> int:
        return self.system.electron_position

    def _local_trace_vector(self, k: int):
        d2 = self.cores[k].shape[1]
        if k == self.electron_site and self.electron_basis is not None:
            d = self.system.electronic_dim
            return self.electron_basis.conj().T @ vec_col(np.eye(d))
        d = int(math.isqrt(d2))
        return vec_col(np.eye(d))

    def _contract_product(self, site_vectors) -> complex:
        acc = np.ones((1,), dtype=complex)
        for k, core in enumerate(self.cores):
            v = site_vectors[k]
            acc = np.tensordot(acc, np.tensordot(core, v.conj(), axes=(1, 0)),
                               axes=(0, 0))
        return complex(acc[0])

    def trace(self) -> complex:
        vecs = [self._local_trace_vector(k) for k in range(self.n_sites)]
        return self._contract_product(vecs)

    def expectation(self, op_e: np.ndarray) -> complex:
        """Tr(op_e rho) for an operator on the electronic site.

        Tr(A rho) = vec(A^T) . vec(rho); the contraction conjugates the site
        vectors, so the electronic one is vec(A^dag) (optionally pulled into
        the reduced electronic basis).
        """
        vecs = [self._local_trace_vector(k) for k in range(self.n_sites)]
        w = vec_col(np.asarray(op_e).conj().T)
        if self.electron_basis is not None:
            w = self.electron_basis.conj().T @ w
        vecs[self.electron_site] = w
        return self._contract_product(vecs)

    def electronic_populations(self) -> dict[str, float]:
        out = {}
        for name, op in population_operators(self.system).items():
            out[name] = float(np.real(self.expectation(op)))
        out["trace"] = complex(self.trace())
        return out

    def to_density_dense(self, cap: int = 4096) -> np.ndarray:
        """Reconstruct the full density matrix (oracle-sized systems)."""
        if self.electron_basis is not None:
            expanded = self.copy()
            e = self.electron_site
            expanded.cores[e] = np.einsum(
                "pq,aqb->apb", self.electron_basis, self.cores[e]
            )
            expanded.electron_basis = None
            return expanded.to_density_dense(cap)
        dims = self.system.site_dims
        total = int(np.prod(dims))
        if total > cap:
            raise ValueError("density reconstruction exceeds cap")
        twin = self.to_dense_vector()
        perm = twin_space_permutation(dims)
        glob = np.empty_like(twin)
        glob[perm] = twin
        return glob.reshape(total, total).T


class LPMPS(TensorTrain):
    """Locally purified train: physical and ancilla sites interleaved;
    the electronic site carries no ancilla."""

    kind = "lpmps"

    def __init__(self, cores, center, system, cap=None, seed=None,
                 site_roles=None):
        super().__init__(cores, center, system, cap, seed)
        if site_roles is None:
            site_roles = purified_site_roles(system)
        self.site_roles = tuple(site_roles)  # "phys" | "anc" per train site

    @property
    def electron_site(self) -> int:
        pos = self.system.electron_position
        count = -1
        for k, role in enumerate(self.site_roles):
            if role == "phys":
                count += 1
                if count == pos:
                    return k
        raise RuntimeError("electronic site not found")

    def norm_squared(self) -> float:
        return self.norm() ** 2

    def electronic_populations(self) -> dict[str, float]:
        rho = self.reduced_density(self.electron_site)
        out = {}
        for name, op in population_operators(self.system).items():
            out[name] = float(np.real(np.trace(rho @ op)))
        out["trace"] = float(np.real(np.trace(rho)))
        return out

    def to_density_dense(self, cap: int = 4096) -> np.ndarray:
        """Trace out ancillas from the dense purification."""
        dims = self.site_dims
        psi = self.to_dense_vector()
        phys_dims = [d for d, r in zip(dims, self.site_roles) if r == "phys"]
        total_p = int(np.prod(phys_dims))
        if total_p > cap:
            raise ValueError("density reconstruction exceeds cap")
        psi = psi.reshape(dims)
        n = len(dims)
        phys_axes = [k for k, r in enumerate(self.site_roles) if r == "phys"]
        anc_axes = [k for k, r in enumerate(self.site_roles) if r == "anc"]
        psi = np.transpose(psi, phys_axes + anc_axes)
        psi = psi.reshape(total_p, -1)
        return psi @ psi.conj().T


def purified_site_roles(system: SpinSystem) -> tuple[str, ...]:
    roles = []
    for tok in system.site_order:
        roles.append("phys")
        if tok != -1:
            roles.append("anc")
    return tuple(roles)


def purified_ancilla_dims(system: SpinSystem) -> list[int | None]:
    """Per physical site: ancilla dimension or None (electronic site)."""
    return [
        None if tok == -1 else system.nuclei[tok].multiplicity
        for tok in system.site_order
    ]


# ---------------------------------------------------------------------------
# sampling and initial states


def sample_angles(system: SpinSystem, K: int, rng_seed: int) -> np.ndarray:
    """Spin-coherent-state angles, one (theta, phi) pair per nucleus:
    phi uniform on [0, 2pi), cos(theta) uniform on [-1, 1].  Shape (K, N, 2);
    deterministic for a given seed."""
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n = len(system.nuclei)
    out = np.empty((K, n, 2))
    out[:, :, 0] = np.arccos(rng.uniform(-1.0, 1.0, size=(K, n)))
    out[:, :, 1] = rng.uniform(0.0, 2.0 * np.pi, size=(K, n))
    return out


def coherent_state(multiplicity: int, theta: float, phi: float) -> np.ndarray:
    """|Omega> = (1+|z|^2)^(-I) exp(z I_-) |I, I> with z = e^(i phi) tan(theta/2).

    Amplitude of |I, I-n> is z^n sqrt(C(2I, n)) / (1+|z|^2)^I; basis ordering
    matches :func:`spintrain.constants.spin_operators`.
    """
    if not 0.0 <= theta <= np.pi:
        raise ValueError("theta must lie in [0, pi]")
    two_i = multiplicity - 1
    if theta == np.pi:  # tan(theta/2) diverges; state is |I, -I>
        out = np.zeros(multiplicity, dtype=complex)
        out[-1] = np.exp(1j * phi * two_i)
        return out
    z = np.exp(1j * phi) * np.tan(theta / 2.0)
    n = np.arange(multiplicity)
    log_binom = [
        0.5 * (math.lgamma(two_i + 1) - math.lgamma(k + 1) - math.lgamma(two_i - k + 1))
        for k in n
    ]
    amps = np.array(
        [np.exp(log_binom[k]) * z**k for k in n], dtype=complex
    )
    amps *= (1.0 + abs(z) ** 2) ** (-two_i / 2.0)
    return amps


def _electronic_pure_vector(system: SpinSystem, state: str = "S") -> np.ndarray:
    order = ["T+", "T0", "S", "T-"]
    vec = np.zeros(system.electronic_dim, dtype=complex)
    if system.is_two_pair:
        name, pair = state.split(".") if "." in state else (state, "C")
        vec[order.index(name) + (0 if pair == "C" else 4)] = 1.0
    else:
        vec[order.index(state)] = 1.0
    return vec


def init_singlet_product_mps(system: SpinSystem, angles, electronic="S") -> MPS:
    """Rank-1 MPS: electronic singlet times one spin-coherent state per
    nucleus.  ``angles`` has one (theta, phi) row per nucleus, in the order
    of ``system.nuclei``."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape != (len(system.nuclei), 2):
        raise ValueError("need one (theta, phi) pair per nucleus")
    cores = []
    for tok in system.site_order:
        if tok == -1:
            v = _electronic_pure_vector(system, electronic)
        else:
            v = coherent_state(system.nuclei[tok].multiplicity, *angles[tok])
        cores.append(v.reshape(1, -1, 1))
    return MPS(cores, center=0, system=system)


def init_singlet_mixed_lpmps(system: SpinSystem, electronic="S") -> LPMPS:
    """Purified standard initial state: electronic singlet, maximally mixed
    nuclei.  Physical-ancilla bonds start at 2I+1, pair-pair bonds at 1."""
    cores = []
    for tok in system.site_order:
        if tok == -1:
            v = _electronic_pure_vector(system, electronic)
            cores.append(v.reshape(1, -1, 1))
        else:
            d = system.nuclei[tok].multiplicity
            phys = np.zeros((1, d, d), dtype=complex)
            phys[0] = np.eye(d) / math.sqrt(d)
            anc = np.zeros((d, d, 1), dtype=complex)
            anc[:, :, 0] = np.eye(d)
            cores.append(phys)
            cores.append(anc)
    state = LPMPS(cores, center=0, system=system)
    state.canonicalize(0)
    return state


def init_vmpdo_from_density(system: SpinSystem, electronic=None,
                            nuclear=None) -> VMPDO:
    """Rank-1 vMPDO from a product density description.

    ``electronic``: density matrix on the electronic site (or None for the
    singlet projector normalised to unit trace).  ``nuclear``: list of
    per-nucleus density matrices in ``system.nuclei`` order, or None for
    maximally mixed.
    """
    if electronic is None:
        ops = population_operators(system)
        electronic = ops["S.C"] if system.is_two_pair else ops["S"]
        electronic = electronic / np.trace(electronic)
    electronic = np.asarray(electronic, dtype=complex)
    de = system.electronic_dim
    if electronic.shape != (de, de):
        raise ValueError(f"electronic density must be {de}x{de}")
    cores = []
    for tok in system.site_order:
        if tok == -1:
            rho = electronic
        elif nuclear is not None:
            rho = np.asarray(nuclear[tok], dtype=complex)
        else:
            d = system.nuclei[tok].multiplicity
            rho = np.eye(d, dtype=complex) / d
        cores.append(vec_col(rho).reshape(1, -1, 1))
    return VMPDO(cores, center=0, system=system)


@dataclass(frozen=True)
class SampledEnsemble:
    """A stochastic-MPS ensemble: K spin-coherent initial conditions with a
    per-trajectory deterministic seed."""

    system: SpinSystem
    K: int
    seed: int
    angles: np.ndarray  # (K, n_nuclei, 2)

    @classmethod
    def sample(cls, system: SpinSystem, K: int, seed: int) -> "SampledEnsemble":
        return cls(system, K, seed, sample_angles(system, K, seed))

    def trajectory_state(self, k: int) -> MPS:
        return init_singlet_product_mps(self.system, self.angles[k])


# Functional aliases matching the operation-style interface.


def canonicalize(state: TensorTrain, new_center: int) -> TensorTrain:
    return state.move_center(new_center)


def electronic_populations(state) -> dict[str, float]:
    return state.electronic_populations()


def truncate_sweep(state: TensorTrain, cap: int):
    discarded = state.truncate_sweep(cap)
    return state, discarded
