"""Symbolic matrix-product-operator compiler for radical-pair generators.

The Hamiltonian of a radical pair (Zeeman + hyperfine + exchange + dipolar +
Haberkorn) admits an analytic MPO whose interior bond dimension is 5 for a
single pair: each bond carries three "pending" channels per electron-partner
group (the x/y/z spin component awaiting its counterpart), one "completed"
channel and one "fresh" channel.  The edge bonds defer coefficients to the
neighbouring core and stay at dimension 4.  The Liouvillian of the vectorised
density operator reuses the same layout with two branches (ket: 1 (x) O,
bra: conj(O) (x) 1) sharing the fresh/completed channels, plus a local jump
dissipator folded into the electronic core.

Every coefficient-carrying entry is tagged; field-dependent entries carry an
updater so a compiled train can be re-pointed to a new magnetic field without
recompilation.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .constants import MT_TO_RAD_PER_NS, spin_operators
from .spin_model import FieldSpec, SpinSystem

__all__ = [
    "MPOCore",
    "MPO",
    "SuperMPO",
    "LindbladJump",
    "compile_hamiltonian_mpo",
    "compile_liouvillian_supermpo",
    "update_field_entries",
    "expand_for_purified",
]

_XYZ = "xyz"


class UnsupportedJumpError(ValueError):
    """Jump operator attached to a site the Liouvillian cannot dissipate."""


@dataclass(frozen=True)
class LindbladJump:
    """A jump operator acting on the electronic site; ``op`` is (d_e x d_e)
    and already carries sqrt(rate) in ns^-1/2."""

    op: np.ndarray
    site: str | int = "electron"
    label: str = ""


@dataclass
class MPOEntry:
    op: np.ndarray  # (d, d) local block
    tag: str


class MPOCore:
    """One operator core: sparse map (bond_in, bond_out) -> tagged local block."""

    def __init__(self, bond_in: int, bond_out: int, phys_dim: int):
        self.bond_in = bond_in
        self.bond_out = bond_out
        self.phys_dim = phys_dim
        self.entries: dict[tuple[int, int], MPOEntry] = {}

    def set(self, i: int, j: int, op, tag: str):
        op = np.asarray(op, dtype=complex)
        if op.shape != (self.phys_dim, self.phys_dim):
            raise ValueError(f"entry block must be {self.phys_dim}x{self.phys_dim}")
        key = (i, j)
        if key in self.entries:
            self.entries[key] = MPOEntry(self.entries[key].op + op,
                                         self.entries[key].tag + " + " + tag)
        else:
            self.entries[key] = MPOEntry(op, tag)

    def dense(self) -> np.ndarray:
        w = np.zeros((self.bond_in, self.phys_dim, self.phys_dim, self.bond_out),
                     dtype=complex)
        for (i, j), ent in self.entries.items():
            w[i, :, :, j] = ent.op
        return w

    def sparse_items(self):
        return [(i, j, ent.op) for (i, j), ent in self.entries.items()]


class MPO:
    """Train of operator cores over the system's site order (Hilbert space)."""

    generator_units = "mT"

    def __init__(self, cores, site_dims, hermitian=False, kind="generic"):
        self.cores = list(cores)
        self.site_dims = tuple(site_dims)
        self.hermitian = hermitian
        self.kind = kind
        # (site, key) -> updater(field) -> (op, tag); populated by the compiler.
        self.field_updaters: dict[tuple[int, tuple[int, int]], Callable] = {}
        # Per bond: (fresh_channel, completed_channel) or None; fresh carries an
        # identity chain to the left boundary, completed to the right boundary.
        self.identity_channels: list[tuple[int | None, int | None]] = []
        self._check_bonds()

    def _check_bonds(self):
        if self.cores[0].bond_in != 1 or self.cores[-1].bond_out != 1:
            raise ValueError("boundary bonds must be 1")
        for a, b in zip(self.cores, self.cores[1:]):
            if a.bond_out != b.bond_in:
                raise ValueError("adjacent bond dimensions must match")

    @property
    def n_sites(self) -> int:
        return len(self.cores)

    @property
    def bond_dims(self) -> list[int]:
        return [c.bond_out for c in self.cores[:-1]]

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    def to_dense(self, cap: int = 4096) -> np.ndarray:
        """Contract the train to a full matrix (oracle-sized systems only)."""
        total = int(np.prod(self.site_dims))
        if total > cap:
            raise ValueError(f"dense contraction of dimension {total} exceeds cap {cap}")
        blocks = {0: np.ones((1, 1), dtype=complex)}
        for core in self.cores:
            nxt: dict[int, np.ndarray] = {}
            for i, j, op in core.sparse_items():
                if i not in blocks:
                    continue
                term = np.kron(blocks[i], op)
                if j in nxt:
                    nxt[j] += term
                else:
                    nxt[j] = term
            blocks = nxt
        dim = total
        return blocks.get(0, np.zeros((dim, dim), dtype=complex))

    def dump(self) -> str:
        """Labelled text rendering of every core (for golden-file checks)."""
        lines = []
        for k, core in enumerate(self.cores):
            lines.append(
                f"core {k}: bond {core.bond_in} -> {core.bond_out}, phys {core.phys_dim}"
            )
            for (i, j) in sorted(core.entries):
                ent = core.entries[(i, j)]
                with np.printoptions(precision=6, suppress=True, linewidth=200):
                    block = np.array2string(ent.op)
                lines.append(f"  ({i},{j}) {ent.tag}:")
                for row in block.splitlines():
                    lines.append("    " + row)
        return "\n".join(lines)


class SuperMPO(MPO):
    """Liouvillian train over the doubled (Liouville) local bases, in ns^-1.

    ``hermitian`` is True only when 1j * generator is Hermitian (no jumps and
    no Haberkorn), selecting the Lanczos local integrator.
    """

    generator_units = "ns^-1"


# ---------------------------------------------------------------------------
# channel bookkeeping


@dataclass(frozen=True)
class _Chan:
    kind: str  # "pending" | "raw" | "fresh" | "completed"
    branch: int = 0
    group: int = -1  # molecule index for pending channels
    comp: int = -1  # 0..2 for x/y/z


def _vec_lift_ket(op):
    return np.kron(np.eye(op.shape[0]), op)


def _vec_lift_bra(op):
    return np.kron(op.conj(), np.eye(op.shape[0]))


@dataclass
class _Branch:
    coeff: complex
    lift: Callable[[np.ndarray], np.ndarray]
    name: str


def _f_op(a_row, iops):
    """F_r = sum_s A[r, s] I_s for one row of the hyperfine tensor."""
    return sum(a_row[s] * iops[s] for s in range(3))


class _Compiler:
    """Builds the operator train for one system + field + branch set."""

    def __init__(self, system: SpinSystem, field: FieldSpec, branches, local_extra=None):
        self.system = system
        self.field = field
        self.branches = list(branches)
        self.local_extra = local_extra  # added to the electronic fresh->completed block
        self.order = system.site_order
        self.n = len(self.order)
        self.e_pos = system.electron_position
        self.b_vec = field.vector()
        # Nuclear spin operators per train site.
        self.iops = {}
        for k, tok in enumerate(self.order):
            if tok != -1:
                self.iops[k] = spin_operators(system.nuclei[tok].multiplicity)
        # Partner groups on each side, in order of first appearance walking
        # outward from the electron.
        self.left_sites = list(range(self.e_pos))
        self.right_sites = list(range(self.e_pos + 1, self.n))
        self.groups_left = self._group_order(reversed(self.left_sites))
        self.groups_right = self._group_order(self.right_sites)

    def _group_order(self, sites):
        seen = []
        for k in sites:
            mol = self.system.nuclei[self.order[k]].molecule
            if mol not in seen:
                seen.append(mol)
        return seen

    def _nuc(self, k):
        return self.system.nuclei[self.order[k]]

    def _gamma_tilde(self, k):
        return self.system.nuclear_zeeman_coeff(self._nuc(k))

    # -- channel lists ------------------------------------------------------

    def _pending(self, groups):
        return [
            _Chan("pending", b, g, r)
            for b in range(len(self.branches))
            for g in groups
            for r in range(3)
        ]

    def _raws(self):
        return [
            _Chan("raw", b, -1, s) for b in range(len(self.branches)) for s in range(3)
        ]

    def bond_channels(self, k) -> list[_Chan]:
        """Channels on the bond after site k (0 <= k < n-1)."""
        fresh, completed = _Chan("fresh"), _Chan("completed")
        if k < self.e_pos:  # left-side bond
            if k == 0 and self.e_pos > 1:
                return self._raws() + [fresh]
            active = [
                g
                for g in self.groups_left
                if any(self._nuc(s).molecule == g for s in range(k + 1))
            ]
            return self._pending(active) + [completed, fresh]
        # right-side bond
        if k == self.n - 2 and len(self.right_sites) >= 2:
            return self._raws() + [completed]
        active = [
            g
            for g in self.groups_right
            if any(self._nuc(s).molecule == g for s in range(k + 1, self.n))
        ]
        return self._pending(active) + [fresh, completed]

    # -- core construction --------------------------------------------------

    def partner_ops(self, mol):
        return self.system.partner_spin_ops(mol)

    def build(self):
        cores = []
        boundary_in = [_Chan("fresh")]
        boundary_out = [_Chan("completed")]
        for k in range(self.n):
            cin = boundary_in if k == 0 else self.bond_channels(k - 1)
            cout = boundary_out if k == self.n - 1 else self.bond_channels(k)
            if k == self.e_pos:
                cores.append(self._electron_core(cin, cout))
            else:
                cores.append(self._nuclear_core(k, cin, cout))
        return cores

    def _entry_dim(self, k):
        d = self.system.electronic_dim if k == self.e_pos else self._nuc(k).multiplicity
        probe = self.branches[0].lift(np.eye(d))
        return probe.shape[0]

    def _eye(self, k):
        return np.eye(self._entry_dim(k), dtype=complex)

    def _nuclear_core(self, k, cin, cout):
        core = MPOCore(len(cin), len(cout), self._entry_dim(k))
        nuc = self._nuc(k)
        a = nuc.hyperfine
        gt = self._gamma_tilde(k)
        iops = self.iops[k]
        eye = self._eye(k)
        jlab = nuc.label or f"site{k}"
        last = k == self.n - 1
        left = k < self.e_pos
        for i, ci in enumerate(cin):
            for j, co in enumerate(cout):
                kin, kout = ci.kind, co.kind
                if kin == "fresh" and kout == "fresh":
                    core.set(i, j, eye, "1")
                elif kin == "completed" and kout == "completed":
                    core.set(i, j, eye, "1")
                elif kin == "pending" and kout == "pending" and ci == co:
                    core.set(i, j, eye, "1")
                elif kin == "fresh" and kout == "raw" and k == 0:
                    # left edge: place the bare nuclear operator, coefficients
                    # are deferred to the neighbouring core
                    b = self.branches[co.branch]
                    core.set(i, j, b.lift(iops[co.comp]),
                             f"I_{_XYZ[co.comp]}[{jlab}]{b.name}")
                elif kin == "fresh" and kout == "raw":
                    # right edge (k == n-2): deferred Zeeman of the last nucleus
                    nxt = self._nuc(k + 1)
                    gt_next = self._gamma_tilde(k + 1)
                    if gt_next != 0.0:
                        self._register(
                            core, k, i, j,
                            self._upd_deferred_zeeman(
                                gt_next, co.comp, co.branch, k,
                                nxt.label or f"site{k+1}"),
                        )
                elif kin == "raw" and kout == "pending" and ci.branch == co.branch:
                    # merge site right of the left edge: apply the previous
                    # nucleus' hyperfine coefficient A[r, s]
                    prev = self._nuc(k - 1)
                    if co.group != prev.molecule:
                        continue
                    b = self.branches[ci.branch]
                    val = prev.hyperfine[co.comp, ci.comp]
                    if val != 0.0:
                        core.set(i, j, b.coeff * val * eye,
                                 f"A[{prev.label or k-1}]({_XYZ[co.comp]},{_XYZ[ci.comp]}){b.name}")
                elif kin == "raw" and kout == "completed" and not last:
                    prev = self._nuc(k - 1)
                    gt_prev = self._gamma_tilde(k - 1)
                    if gt_prev != 0.0:
                        self._register(
                            core, k, i, j,
                            self._upd_deferred_zeeman(
                                gt_prev, ci.comp, ci.branch, k,
                                prev.label or f"site{k-1}"),
                        )
                elif kin == "pending" and kout == "raw" and ci.branch == co.branch:
                    # second-to-last site: next (last) nucleus' coefficient
                    nxt = self._nuc(k + 1)
                    if ci.group != nxt.molecule:
                        continue
                    b = self.branches[ci.branch]
                    val = nxt.hyperfine[ci.comp, co.comp]
                    if val != 0.0:
                        core.set(i, j, b.coeff * val * eye,
                                 f"A[{nxt.label or k+1}]({_XYZ[ci.comp]},{_XYZ[co.comp]}){b.name}")
                elif (not left and kin == "pending" and kout == "completed"
                      and ci.group == nuc.molecule):
                    # right side: complete the electron component placed at
                    # the electron with F_r = sum_s A[r, s] I_s
                    b = self.branches[ci.branch]
                    fr = _f_op(a[ci.comp], iops)
                    if np.any(fr):
                        core.set(i, j, b.coeff * b.lift(fr),
                                 f"F_{_XYZ[ci.comp]}[{jlab}]{b.name}")
                elif (left and kin == "fresh" and kout == "pending"
                      and co.group == nuc.molecule):
                    # left side: open a pending electron component with
                    # F_r = sum_s A[r, s] I_s awaiting S_r at the electron
                    b = self.branches[co.branch]
                    fr = _f_op(a[co.comp], iops)
                    if np.any(fr):
                        core.set(i, j, b.coeff * b.lift(fr),
                                 f"F_{_XYZ[co.comp]}[{jlab}]{b.name}")
                elif kin == "raw" and kout == "completed" and last:
                    # right edge termination: place the bare operator (the
                    # coefficient sits on the second-to-last core)
                    b = self.branches[ci.branch]
                    core.set(i, j, b.lift(iops[ci.comp]),
                             f"I_{_XYZ[ci.comp]}[{jlab}]{b.name}")
                elif kin == "fresh" and kout == "completed":
                    # this nucleus' own Zeeman term (branches share the entry)
                    if gt != 0.0:
                        self._register(core, k, i, j, self._upd_own_zeeman(gt, k, jlab))
        return core

    def _electron_core(self, cin, cout):
        k = self.e_pos
        core = MPOCore(len(cin), len(cout), self._entry_dim(k))
        eye = self._eye(k)
        for i, ci in enumerate(cin):
            for j, co in enumerate(cout):
                if ci.kind == "completed" and co.kind == "completed":
                    core.set(i, j, eye, "1")
                elif ci.kind == "fresh" and co.kind == "fresh":
                    core.set(i, j, eye, "1")
                elif ci.kind == "pending" and co.kind == "completed":
                    b = self.branches[ci.branch]
                    sop = self.partner_ops(ci.group)[ci.comp]
                    core.set(i, j, b.lift(sop),
                             f"S_{_XYZ[ci.comp]}(mol{ci.group}){b.name}")
                elif ci.kind == "fresh" and co.kind == "completed":
                    self._register(core, k, i, j, self._upd_electron_local())
                elif ci.kind == "fresh" and co.kind == "pending":
                    b = self.branches[co.branch]
                    sop = self.partner_ops(co.group)[co.comp]
                    core.set(i, j, b.lift(sop),
                             f"S_{_XYZ[co.comp]}(mol{co.group}){b.name}")
        return core

    # -- field-dependent entries -------------------------------------------

    def _register(self, core, site, i, j, updater):
        op, tag = updater(self.field)
        core.set(i, j, op, tag)
        self._updaters[(site, (i, j))] = updater

    def _upd_own_zeeman(self, gt, k, jlab):
        iops = self.iops[k]
        branches = self.branches
        eye_dim = self._entry_dim(k)

        def updater(field: FieldSpec):
            b = field.vector()
            bop = -gt * sum(b[s] * iops[s] for s in range(3))
            out = np.zeros((eye_dim, eye_dim), dtype=complex)
            for br in branches:
                out += br.coeff * br.lift(bop)
            return out, f"B.gn[{jlab}]"

        return updater

    def _upd_deferred_zeeman(self, gt, comp, branch, k, jlab):
        br = self.branches[branch]
        eye = self._eye(k)

        def updater(field: FieldSpec):
            val = -gt * field.vector()[comp]
            return br.coeff * val * eye, f"-B_{_XYZ[comp]}.gn[{jlab}]{br.name}"

        return updater

    def _upd_electron_local(self):
        system, branches, extra = self.system, self.branches, self.local_extra

        def updater(field: FieldSpec):
            h_ele = system.electronic_hamiltonian(field)
            out = sum(br.coeff * br.lift(h_ele) for br in branches)
            if extra is not None:
                out = out + extra
            return out, "H_ele" + ("+jumps" if extra is not None else "")

        return updater

    # -- public -------------------------------------------------------------

    def compile(self, cls, hermitian, kind):
        self._updaters = {}
        cores = self.build()
        dims = [c.phys_dim for c in cores]
        mpo = cls(cores, dims, hermitian=hermitian, kind=kind)
        mpo.field_updaters = self._updaters
        # identity-channel metadata per bond
        chans = [self.bond_channels(k) for k in range(self.n - 1)]
        mpo.identity_channels = [
            (
                next((ix for ix, c in enumerate(ch) if c.kind == "fresh"), None),
                next((ix for ix, c in enumerate(ch) if c.kind == "completed"), None),
            )
            for ch in chans
        ]
        return mpo


def compile_hamiltonian_mpo(system: SpinSystem, field: FieldSpec) -> MPO:
    """Analytic MPO of the full Hamiltonian in mT over the system site order.

    Interior bonds are 5 per electron-partner group side (3 pending + fresh +
    completed); the nuclear edge bonds are 4.
    """
    branch = _Branch(coeff=1.0, lift=lambda op: np.asarray(op, dtype=complex), name="")
    cpl = system.couplings
    if system.is_two_pair:
        herm = all(
            r == 0.0 for r in (cpl.k_r_C, cpl.k_r_D, cpl.k_f_C, cpl.k_f_D)
        )
    else:
        herm = cpl.k_singlet == 0.0 and cpl.k_triplet == 0.0
    return _Compiler(system, field, [branch]).compile(MPO, herm, "radical_pair_hamiltonian")


def compile_liouvillian_supermpo(
    system: SpinSystem, field: FieldSpec, jumps: list[LindbladJump] = ()
) -> SuperMPO:
    """Liouvillian train in ns^-1 over the doubled local bases.

    Encodes d(vec rho)/dt = -i w (H rho - rho H^dag) + sum_j D[L_j] with the
    Hamiltonian commutator vectorised column-major, vec(A rho B) =
    (B^T (x) A) vec(rho).  Jump operators must live on the electronic site.
    """
    de = system.electronic_dim
    extra = None
    for jump in jumps:
        if jump.site not in ("electron", system.electron_position):
            raise UnsupportedJumpError(
                f"jump {jump.label!r} acts on site {jump.site}; only the "
                "electronic site is supported"
            )
        L = np.asarray(jump.op, dtype=complex)
        if L.shape != (de, de):
            raise UnsupportedJumpError(
                f"jump {jump.label!r} has shape {L.shape}, expected ({de}, {de})"
            )
        ldl = L.conj().T @ L
        term = (
            np.kron(L.conj(), L)
            - 0.5 * np.kron(np.eye(de), ldl)
            - 0.5 * np.kron(ldl.T, np.eye(de))
        )
        extra = term if extra is None else extra + term
    w = MT_TO_RAD_PER_NS
    branches = [
        _Branch(coeff=-1j * w, lift=_vec_lift_ket, name="|ket"),
        _Branch(coeff=+1j * w, lift=_vec_lift_bra, name="|bra"),
    ]
    cpl = system.couplings
    if system.is_two_pair:
        no_haberkorn = all(
            r == 0.0 for r in (cpl.k_r_C, cpl.k_r_D, cpl.k_f_C, cpl.k_f_D)
        )
    else:
        no_haberkorn = cpl.k_singlet == 0.0 and cpl.k_triplet == 0.0
    herm = no_haberkorn and extra is None
    mpo = _Compiler(system, field, branches, local_extra=extra).compile(
        SuperMPO, herm, "radical_pair_liouvillian"
    )
    return mpo


def update_field_entries(mpo: MPO, field: FieldSpec) -> MPO:
    """Re-point a compiled train to a new magnetic field in place.

    Only entries tagged with field dependence change; everything else is left
    bit-identical.  Raises on trains not produced by this module.
    """
    if not getattr(mpo, "field_updaters", None):
        raise ValueError("train carries no field tags; recompile it with this module")
    for (site, key), updater in mpo.field_updaters.items():
        op, tag = updater(field)
        mpo.cores[site].entries[key] = MPOEntry(op, tag)
    return mpo


def expand_for_purified(mpo: MPO, ancilla_dims: list[int | None]) -> MPO:
    """Interleave identity cores acting on ancilla sites (H (x) 1_anc).

    ``ancilla_dims[k]`` is the ancilla dimension following physical site k,
    or None when that site carries no ancilla.
    """
    if len(ancilla_dims) != mpo.n_sites:
        raise ValueError("one ancilla slot per physical site required")
    cores, dims = [], []
    updaters = {}
    idch = []
    for k, core in enumerate(mpo.cores):
        site_index = len(cores)
        cores.append(core)
        dims.append(core.phys_dim)
        for key, upd in mpo.field_updaters.items():
            if key[0] == k:
                updaters[(site_index, key[1])] = upd
        if k < mpo.n_sites - 1:
            idch.append(mpo.identity_channels[k])
        if ancilla_dims[k] is not None:
            d_anc = ancilla_dims[k]
            anc = MPOCore(core.bond_out, core.bond_out, d_anc)
            for b in range(core.bond_out):
                anc.set(b, b, np.eye(d_anc), "1")
            cores.append(anc)
            dims.append(d_anc)
            if k < mpo.n_sites - 1:
                idch.append(mpo.identity_channels[k])
            else:
                idch.append((None, None))
    if ancilla_dims[-1] is not None:
        idch = idch[:-1]
    out = type(mpo)(cores, dims, hermitian=mpo.hermitian, kind=mpo.kind + "+ancillas")
    out.field_updaters = updaters
    out.identity_channels = idch
    return out
