"""Bundled parameter sets: hyperfine tensors and electronic couplings."""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .constants import GAMMA_BY_ISOTOPE
from .spin_model import (
    ElectronicCouplings,
    Nucleus,
    TwoPairCouplings,
    hyperfine_strength,
    point_dipole_tensor,
)

__all__ = [
    "load_bundled",
    "flavin_trp_isotropic_nuclei",
    "cryptochrome_nuclei",
    "cryptochrome_couplings",
    "benchmark_pair_couplings",
    "filter_by_cutoff",
]


def load_bundled(name: str) -> dict:
    path = resources.files("spintrain.data").joinpath(f"{name}.json")
    with path.open("r") as f:
        return json.load(f)


def _nucleus_from_record(rec: dict, molecule: int) -> Nucleus:
    if "tensor_row_major" in rec:
        tensor = np.array(rec["tensor_row_major"], dtype=float).reshape(3, 3)
    else:
        tensor = rec["a_iso"] * np.eye(3)
    return Nucleus(
        multiplicity=rec["multiplicity"],
        gyro_ratio=GAMMA_BY_ISOTOPE[rec["isotope"]],
        hyperfine=tensor,
        molecule=molecule,
        label=rec["label"],
    )


def flavin_trp_isotropic_nuclei() -> list[Nucleus]:
    """The 18-nucleus isotropic benchmark bath (flavin anion + tryptophan
    cation), molecules 1 and 2."""
    data = load_bundled("flavin_trp_isotropic")
    out = []
    for mol in data["molecules"].values():
        out.extend(_nucleus_from_record(rec, mol["molecule"]) for rec in mol["nuclei"])
    return out


def cryptochrome_nuclei() -> tuple[list[Nucleus], dict[str, list[str]]]:
    """Anisotropic two-pair bath.  Returns (nuclei, equivalent_groups) where
    equivalent_groups maps a group name to the labels of its members."""
    data = load_bundled("cryptochrome_two_pair")
    nuclei, groups = [], {}
    for mol in data["molecules"].values():
        for rec in mol["nuclei"]:
            nuclei.append(_nucleus_from_record(rec, mol["molecule"]))
            if "equivalent_group" in rec:
                groups.setdefault(rec["equivalent_group"], []).append(rec["label"])
    return nuclei, groups


def cryptochrome_couplings() -> TwoPairCouplings:
    """Two-pair couplings: measured exchange constants, point-dipole tensors
    from the crystal-structure separation vectors, and the kinetic rates."""
    cpl = load_bundled("cryptochrome_two_pair")["couplings"]
    return TwoPairCouplings(
        J_12=cpl["J_12"],
        J_13=cpl["J_13"],
        D_12=point_dipole_tensor(cpl["r_12"]),
        D_13=point_dipole_tensor(cpl["r_13"]),
        k_r_C=cpl["k_r_C"],
        k_r_D=cpl["k_r_D"],
        k_f_C=cpl["k_f_C"],
        k_f_D=cpl["k_f_D"],
        k_CtoD=cpl["k_CtoD"],
        k_DtoC=cpl["k_DtoC"],
    )


def benchmark_pair_couplings(k_s: float = 1.0, k_t: float = 1.0) -> ElectronicCouplings:
    """Couplings of the isotropic benchmark pair: J = 0.224 mT and the axial
    dipolar tensor D = -0.38 * diag(-2/3, -2/3, 4/3) mT."""
    return ElectronicCouplings(
        exchange_J=0.224,
        dipolar_D=-0.38 * np.diag([-2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0]),
        k_singlet=k_s,
        k_triplet=k_t,
    )


def filter_by_cutoff(nuclei, cutoff_mT: float) -> list[Nucleus]:
    """Keep nuclei whose mean absolute hyperfine eigenvalue exceeds the
    cutoff (mT)."""
    if cutoff_mT < 0:
        raise ValueError("cutoff must be >= 0")
    return [n for n in nuclei if hyperfine_strength(n) > cutoff_mT]
