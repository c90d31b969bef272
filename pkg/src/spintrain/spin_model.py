"""Spin-system data model and dense operator construction.

Conventions
-----------
* Electronic basis is the singlet-triplet basis ordered |T+>, |T0>, |S>, |T->
  (single radical pair, dimension 4).  The two-pair model stacks two such
  blocks, |X_C> then |X_D>, into an 8-dimensional electronic site.
* All Hamiltonians are stored in mT.  Multiply by ``abs(gamma_e)`` to obtain
  angular frequency (see :mod:`spintrain.constants`).
* Dense operators are plain complex ndarrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np

from .constants import GAMMA_E, RATE_US_TO_MT, spin_operators

__all__ = [
    "Nucleus",
    "ElectronicCouplings",
    "TwoPairCouplings",
    "FieldSpec",
    "SpinSystem",
    "singlet_triplet_rotation",
    "projection_operators",
    "electron_pair_spin_ops",
    "point_dipole_tensor",
    "build_dense_hamiltonian",
    "dimensions",
    "hyperfine_strength",
]

# Point-dipole scalar D(r) = DIPOLAR_COEFF / r^3 with r in Angstrom, D in mT.
DIPOLAR_COEFF_MT_A3 = -2786.0

DEFAULT_DENSE_CAP = 2**16


class CapacityError(RuntimeError):
    """Raised when a dense construction would exceed its dimension cap."""


@dataclass(frozen=True)
class Nucleus:
    """One nuclear spin: multiplicity 2I+1, gyromagnetic ratio and hyperfine tensor.

    ``gyro_ratio`` is in rad us^-1 mT^-1, ``hyperfine`` is a 3x3 matrix in mT,
    ``molecule`` is the 1-based index of the radical the nucleus couples to.
    """

    multiplicity: int
    gyro_ratio: float
    hyperfine: np.ndarray
    molecule: int = 1
    label: str = ""

    def __post_init__(self):
        if self.multiplicity < 2:
            raise ValueError(f"multiplicity must be >= 2, got {self.multiplicity}")
        hf = np.asarray(self.hyperfine, dtype=float)
        if hf.shape != (3, 3) or not np.all(np.isfinite(hf)):
            raise ValueError("hyperfine must be a finite 3x3 matrix in mT")
        object.__setattr__(self, "hyperfine", hf)

    @classmethod
    def isotropic(cls, multiplicity, gyro_ratio, a_iso, molecule=1, label=""):
        return cls(multiplicity, gyro_ratio, a_iso * np.eye(3), molecule, label)

    @property
    def spin(self) -> float:
        return (self.multiplicity - 1) / 2.0


def hyperfine_strength(nucleus: Nucleus) -> float:
    """Mean absolute eigenvalue of the hyperfine tensor (mT), used for
    site ordering and cutoff filtering."""
    return float(np.mean(np.abs(np.linalg.eigvals(nucleus.hyperfine))))


def _check_symmetric(mat, name):
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3")
    scale = max(np.abs(mat).max(), 1.0)
    if np.abs(mat - mat.T).max() > 1e-12 * scale:
        raise ValueError(f"{name} must be symmetric")
    return mat


@dataclass(frozen=True)
class ElectronicCouplings:
    """Exchange/dipolar couplings (mT) and Haberkorn rates (us^-1) of one pair."""

    exchange_J: float = 0.0
    dipolar_D: np.ndarray = dc_field(default_factory=lambda: np.zeros((3, 3)))
    k_singlet: float = 0.0
    k_triplet: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dipolar_D", _check_symmetric(self.dipolar_D, "dipolar_D"))
        if self.k_singlet < 0 or self.k_triplet < 0:
            raise ValueError("Haberkorn rates must be non-negative")


@dataclass(frozen=True)
class TwoPairCouplings:
    """Couplings of the two-radical-pair hopping model.

    Molecule indices: 1 = shared radical (both pairs), 2 = partner of pair C,
    3 = partner of pair D.  Exchange/dipolar in mT, recombination k_r and
    forward k_f rates in us^-1, hopping rates in ns^-1.  Haberkorn rates per
    pair are k_S = k_f + k_r and k_T = k_f.
    """

    J_12: float = 0.0
    J_13: float = 0.0
    D_12: np.ndarray = dc_field(default_factory=lambda: np.zeros((3, 3)))
    D_13: np.ndarray = dc_field(default_factory=lambda: np.zeros((3, 3)))
    k_r_C: float = 0.0
    k_r_D: float = 0.0
    k_f_C: float = 0.0
    k_f_D: float = 0.0
    k_CtoD: float = 0.0
    k_DtoC: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "D_12", _check_symmetric(self.D_12, "D_12"))
        object.__setattr__(self, "D_13", _check_symmetric(self.D_13, "D_13"))
        for name in ("k_r_C", "k_r_D", "k_f_C", "k_f_D", "k_CtoD", "k_DtoC"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def haberkorn_rates(self, pair: str) -> tuple[float, float]:
        """(k_S, k_T) in us^-1 for pair 'C' or 'D'."""
        kf = self.k_f_C if pair == "C" else self.k_f_D
        kr = self.k_r_C if pair == "C" else self.k_r_D
        return kf + kr, kf


@dataclass(frozen=True)
class FieldSpec:
    """Static field of magnitude B0 (mT) at polar angle theta, azimuth phi."""

    magnitude_B0: float = 0.0
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if self.magnitude_B0 < 0:
            raise ValueError("magnitude_B0 must be >= 0")

    def vector(self) -> np.ndarray:
        st, ct = math.sin(self.theta), math.cos(self.theta)
        sp, cp = math.sin(self.phi), math.cos(self.phi)
        return self.magnitude_B0 * np.array([st * cp, st * sp, ct])


def singlet_triplet_rotation() -> np.ndarray:
    """Unitary mapping the product basis {uu, ud, du, dd} to {T+, T0, S, T-}.

    Rows are the singlet-triplet states expressed in the product basis, so
    ``U @ psi_product`` gives singlet-triplet coordinates.
    """
    s = 1.0 / math.sqrt(2.0)
    return np.array(
        [
            [1, 0, 0, 0],
            [0, s, s, 0],
            [0, s, -s, 0],
            [0, 0, 0, 1],
        ],
        dtype=complex,
    )


def _pair_ops_product_basis():
    sx, sy, sz = spin_operators(2)
    e2 = np.eye(2)
    s1 = [np.kron(op, e2) for op in (sx, sy, sz)]
    s2 = [np.kron(e2, op) for op in (sx, sy, sz)]
    return s1, s2


def electron_pair_spin_ops() -> tuple[list[np.ndarray], list[np.ndarray]]:
    """([S1x, S1y, S1z], [S2x, S2y, S2z]) of one radical pair, 4x4,
    in the singlet-triplet basis."""
    u = singlet_triplet_rotation()
    s1, s2 = _pair_ops_product_basis()
    rot = lambda op: u @ op @ u.conj().T
    return [rot(op) for op in s1], [rot(op) for op in s2]


def projection_operators() -> dict[str, np.ndarray]:
    """Projectors {S, T, T+, T0, T-} onto the electronic states, 4x4,
    singlet-triplet basis."""
    s1, s2 = electron_pair_spin_ops()
    dot12 = sum(a @ b for a, b in zip(s1, s2))
    p_s = 0.25 * np.eye(4) - dot12
    p_t = np.eye(4) - p_s
    sz_tot = s1[2] + s2[2]
    szsz = s1[2] @ s2[2]
    p_tp = 0.25 * np.eye(4) + 0.5 * sz_tot + szsz
    p_tm = 0.25 * np.eye(4) - 0.5 * sz_tot + szsz
    p_t0 = p_t - p_tp - p_tm
    return {"S": p_s, "T": p_t, "T+": p_tp, "T0": p_t0, "T-": p_tm}


def point_dipole_tensor(r_vec) -> np.ndarray:
    """Point-dipole coupling tensor (mT) for an electron pair separated by
    ``r_vec`` in Angstrom.

    Traceless and symmetric; for r along z it equals
    (2/3) * D(r) * diag(-1, -1, 2) with D(r) = -2786 / r^3 mT.
    """
    r_vec = np.asarray(r_vec, dtype=float)
    r = np.linalg.norm(r_vec)
    if r <= 0.0:
        raise ValueError("separation vector must have positive length")
    rhat = r_vec / r
    d_scalar = DIPOLAR_COEFF_MT_A3 / r**3
    return -(2.0 / 3.0) * d_scalar * (np.eye(3) - 3.0 * np.outer(rhat, rhat))


def _default_site_order(nuclei, two_pair):
    """Train layout: weakly coupled nuclei outermost, the electronic site
    (token -1) in the middle; two-pair layout is Trp_C -> first half of the
    shared radical -> electrons -> second half -> Trp_D."""
    by_mol = {}
    for idx, nuc in enumerate(nuclei):
        by_mol.setdefault(nuc.molecule, []).append(idx)
    strength = {i: hyperfine_strength(nuc) for i, nuc in enumerate(nuclei)}
    for mol in by_mol:
        by_mol[mol].sort(key=lambda i: (-strength[i], i))
    if not two_pair:
        left = by_mol.get(1, [])[::-1]  # ascending: strongest ends up innermost
        right = by_mol.get(2, [])
        return tuple(left) + (-1,) + tuple(right)
    # Shared-radical nuclei alternate sides by descending strength.
    shared_left, shared_right = [], []
    for pos, idx in enumerate(by_mol.get(1, [])):
        (shared_left if pos % 2 == 0 else shared_right).append(idx)
    left = by_mol.get(2, [])[::-1] + shared_left[::-1]
    right = shared_right + by_mol.get(3, [])
    return tuple(left) + (-1,) + tuple(right)


@dataclass(frozen=True)
class SpinSystem:
    """A radical pair (or two-pair hopping model) with its nuclear bath.

    ``site_order`` is the tensor-train layout: a tuple containing every
    nucleus index exactly once plus the token -1 for the combined electronic
    site.  When omitted it is derived from the hyperfine strengths.
    """

    nuclei: tuple[Nucleus, ...]
    couplings: ElectronicCouplings | TwoPairCouplings
    gamma_e: float = GAMMA_E
    include_nuclear_zeeman: bool = True
    site_order: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "nuclei", tuple(self.nuclei))
        if self.gamma_e == 0:
            raise ValueError("gamma_e must be nonzero")
        allowed = {1, 2} if not self.is_two_pair else {1, 2, 3}
        for nuc in self.nuclei:
            if nuc.molecule not in allowed:
                raise ValueError(
                    f"nucleus {nuc.label!r}: molecule index {nuc.molecule} "
                    f"not in {sorted(allowed)}"
                )
        if self.site_order is None:
            object.__setattr__(
                self, "site_order", _default_site_order(self.nuclei, self.is_two_pair)
            )
        else:
            object.__setattr__(self, "site_order", tuple(self.site_order))
            expected = sorted(range(len(self.nuclei))) + [-1]
            if sorted(self.site_order) != expected:
                raise ValueError(
                    "site_order must contain every nucleus index once plus -1 "
                    "for the electronic site"
                )

    @property
    def is_two_pair(self) -> bool:
        return isinstance(self.couplings, TwoPairCouplings)

    @property
    def electronic_dim(self) -> int:
        return 8 if self.is_two_pair else 4

    @property
    def electron_position(self) -> int:
        return self.site_order.index(-1)

    @cached_property
    def site_dims(self) -> tuple[int, ...]:
        return tuple(
            self.electronic_dim if tok == -1 else self.nuclei[tok].multiplicity
            for tok in self.site_order
        )

    def partner_spin_ops(self, molecule: int) -> list[np.ndarray]:
        """Spin operators of the electron the given molecule's nuclei couple
        to, embedded in the electronic site (dim 4 or 8)."""
        s1, s2 = electron_pair_spin_ops()
        if not self.is_two_pair:
            return s1 if molecule == 1 else s2
        zero = np.zeros((4, 4), dtype=complex)
        if molecule == 1:  # shared radical: present in both pair sectors
            return [_blockdiag(op, op) for op in s1]
        if molecule == 2:  # pair-C partner
            return [_blockdiag(op, zero) for op in s2]
        return [_blockdiag(zero, op) for op in s2]

    def electronic_hamiltonian(self, field: FieldSpec) -> np.ndarray:
        """Local electronic Hamiltonian (mT, complex): Zeeman + exchange +
        dipolar + Haberkorn.  Non-Hermitian when any Haberkorn rate is set."""
        b = field.vector()
        sign = -self.gamma_e / abs(self.gamma_e)
        s1, s2 = electron_pair_spin_ops()
        proj = projection_operators()

        def pair_block(J, D, k_s, k_t):
            h = sign * sum(b[r] * (s1[r] + s2[r]) for r in range(3))
            dot12 = sum(a @ bop for a, bop in zip(s1, s2))
            h = h - J * (2.0 * dot12 - 0.5 * np.eye(4))
            for r in range(3):
                for c in range(3):
                    if D[r, c] != 0.0:
                        h = h + D[r, c] * (s1[r] @ s2[c])
            h = h - 0.5j * RATE_US_TO_MT * (k_s * proj["S"] + k_t * proj["T"])
            return h

        if not self.is_two_pair:
            cpl = self.couplings
            return pair_block(cpl.exchange_J, cpl.dipolar_D, cpl.k_singlet, cpl.k_triplet)
        cpl = self.couplings
        h_c = pair_block(cpl.J_12, cpl.D_12, *cpl.haberkorn_rates("C"))
        h_d = pair_block(cpl.J_13, cpl.D_13, *cpl.haberkorn_rates("D"))
        return _blockdiag(h_c, h_d)

    def nuclear_zeeman_coeff(self, nucleus: Nucleus) -> float:
        """Dimensionless ratio gamma_n / |gamma_e| (zero when nuclear Zeeman
        is disabled)."""
        if not self.include_nuclear_zeeman:
            return 0.0
        return nucleus.gyro_ratio / abs(self.gamma_e)


def _blockdiag(a, b):
    out = np.zeros((a.shape[0] + b.shape[0],) * 2, dtype=complex)
    out[: a.shape[0], : a.shape[1]] = a
    out[a.shape[0] :, a.shape[1] :] = b
    return out


def _embed(site_ops: dict[int, np.ndarray], dims) -> np.ndarray:
    """Kronecker-embed per-site operators (identity elsewhere) over the train."""
    out = np.ones((1, 1), dtype=complex)
    for k, d in enumerate(dims):
        op = site_ops.get(k)
        out = np.kron(out, op if op is not None else np.eye(d))
    return out


def build_dense_hamiltonian(
    system: SpinSystem, field: FieldSpec, dense_cap: int = DEFAULT_DENSE_CAP
) -> np.ndarray:
    """Full dense Hamiltonian in mT over the train order.

    H = Zeeman + hyperfine + exchange + dipolar + Haberkorn; the Hermitian
    part equals H with both Haberkorn rates set to zero.
    """
    dims = system.site_dims
    total = int(np.prod(dims, dtype=np.int64))
    if total > dense_cap:
        raise CapacityError(f"Hilbert dimension {total} exceeds cap {dense_cap}")
    e_pos = system.electron_position
    b = field.vector()

    h = _embed({e_pos: system.electronic_hamiltonian(field)}, dims)
    for site, tok in enumerate(system.site_order):
        if tok == -1:
            continue
        nuc = system.nuclei[tok]
        ix, iy, iz = spin_operators(nuc.multiplicity)
        iops = (ix, iy, iz)
        sops = system.partner_spin_ops(nuc.molecule)
        a = nuc.hyperfine
        for r in range(3):
            if not np.any(a[r, :]):
                continue
            frj = sum(a[r, s] * iops[s] for s in range(3) if a[r, s] != 0.0)
            h = h + _embed({e_pos: sops[r], site: frj}, dims)
        gn = system.nuclear_zeeman_coeff(nuc)
        if gn != 0.0 and np.any(b):
            bop = -gn * sum(b[s] * iops[s] for s in range(3))
            h = h + _embed({site: bop}, dims)
    return h


def dimensions(system: SpinSystem) -> dict[str, int]:
    """Hilbert/Liouville dimensions and the largest full-rank MPS bond for
    the configured site order."""
    dims = system.site_dims
    hilbert = int(np.prod(np.asarray(dims, dtype=object)))
    left = 1
    max_bond = 1
    for d in dims[:-1]:
        left *= d
        max_bond = max(max_bond, min(left, hilbert // left))
    return {
        "hilbert": hilbert,
        "liouville": hilbert * hilbert,
        "max_mps_bond": max_bond,
    }
