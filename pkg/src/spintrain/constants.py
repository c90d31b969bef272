"""Physical constants and unit conventions.

Internal unit system: energies and couplings in mT, time in ns, Haberkorn
recombination rates in us^-1, hopping rates in ns^-1.  A Hamiltonian stored
in mT is converted to angular frequency at propagation time by multiplying
with ``abs(gamma)`` of the free electron.
"""

import numpy as np

# Free-electron gyromagnetic ratio, rad us^-1 mT^-1 (CODATA, negative sign).
GAMMA_E = -176.0859630

# Nuclear gyromagnetic ratios, rad us^-1 mT^-1.
GAMMA_1H = 0.2675222
GAMMA_14N = 0.0193378

# mT -> rad ns^-1 conversion: |gamma_e| expressed per ns.
MT_TO_RAD_PER_NS = abs(GAMMA_E) * 1e-3

# us^-1 -> mT, used to fold Haberkorn rates into the mT-unit Hamiltonian.
RATE_US_TO_MT = 1.0 / abs(GAMMA_E)

GAMMA_BY_ISOTOPE = {"1H": GAMMA_1H, "14N": GAMMA_14N}


def spin_operators(multiplicity: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (Sx, Sy, Sz) for a spin of dimension ``multiplicity`` = 2I+1.

    Basis ordering is |I, I>, |I, I-1>, ..., |I, -I>.
    """
    if multiplicity < 2:
        raise ValueError(f"multiplicity must be >= 2, got {multiplicity}")
    I = (multiplicity - 1) / 2.0
    m = I - np.arange(multiplicity)
    # <I, m+1| I_+ |I, m> = sqrt(I(I+1) - m(m+1))
    raise_elems = np.sqrt(I * (I + 1) - m[1:] * (m[1:] + 1))
    sp = np.zeros((multiplicity, multiplicity), dtype=complex)
    sp[np.arange(multiplicity - 1), np.arange(1, multiplicity)] = raise_elems
    sm = sp.conj().T
    sx = 0.5 * (sp + sm)
    sy = -0.5j * (sp - sm)
    sz = np.diag(m).astype(complex)
    return sx, sy, sz
