"""Two-qubit operator algebra on the fixed product basis (|11>, |10>, |01>, |00>).

Qubit A is the left factor, qubit B the right one, and |1> denotes the excited
single-qubit state. All operators are dense complex 4x4 ndarrays; states are
complex 4-vectors. Everything here is stateless and cheap, so callers build
what they need on the fly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "BASIS_LABELS",
    "PSI_BASIS",
    "ket",
    "basis_state",
    "sigma_minus",
    "sigma_plus",
    "sigma_z",
    "build_hamiltonian",
    "build_lowering",
    "basis_operator",
    "expectation",
]

BASIS_LABELS = ("11", "10", "01", "00")

# Orthonormal collective basis: |11>, (|10>+|01>)/sqrt2, (|10>-|01>)/sqrt2, |00>.
# Row k is the k-th collective state in the product basis; the matrix is real
# orthogonal, so coefficients are PSI_BASIS @ psi and states PSI_BASIS.T @ c.
_R2 = 1.0 / np.sqrt(2.0)
PSI_BASIS = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, _R2, _R2, 0.0],
        [0.0, _R2, -_R2, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
)

_SIGMA_M = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)  # |0><1|
_SIGMA_P = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |1><0|
_SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
_ID2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the two-qubit system coupled to one common bath.

    omega_a, omega_b : qubit level splittings (sigma_z coefficients, no 1/2)
    j_xy             : flip-flop coupling strength
    j_z              : Ising coupling strength
    kappa_a, kappa_b : bath coupling weights of the collective lowering operator
    """

    omega_a: float = 0.5
    omega_b: float = 0.5
    j_xy: float = 0.0
    j_z: float = 0.0
    kappa_a: float = 1.0
    kappa_b: float = 1.0

    def __post_init__(self) -> None:
        for name in ("omega_a", "omega_b", "j_xy", "j_z", "kappa_a", "kappa_b"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.kappa_a < 0 or self.kappa_b < 0:
            raise ValueError("kappa_a and kappa_b must be non-negative")

    @property
    def symmetric(self) -> bool:
        return self.omega_a == self.omega_b and self.kappa_a == self.kappa_b


def _on_a(op: np.ndarray) -> np.ndarray:
    return np.kron(op, _ID2)


def _on_b(op: np.ndarray) -> np.ndarray:
    return np.kron(_ID2, op)


def sigma_minus(qubit: str) -> np.ndarray:
    """Lowering operator acting on qubit "a" or "b"."""
    return _on_a(_SIGMA_M) if qubit == "a" else _on_b(_SIGMA_M)


def sigma_plus(qubit: str) -> np.ndarray:
    return _on_a(_SIGMA_P) if qubit == "a" else _on_b(_SIGMA_P)


def sigma_z(qubit: str) -> np.ndarray:
    return _on_a(_SIGMA_Z) if qubit == "a" else _on_b(_SIGMA_Z)


def ket(amplitudes) -> np.ndarray:
    """Complex state vector from any length-4 sequence, without normalizing."""
    psi = np.asarray(amplitudes, dtype=complex)
    if psi.shape != (4,):
        raise ValueError(f"state vector must have shape (4,), got {psi.shape}")
    return psi


def basis_state(label: str) -> np.ndarray:
    """Named states: "11", "10", "01", "00", "(10+01)", "(10-01)", "(11+00)", "(11-00)"."""
    if label in BASIS_LABELS:
        psi = np.zeros(4, dtype=complex)
        psi[BASIS_LABELS.index(label)] = 1.0
        return psi
    superpositions = {
        "(10+01)": (1, 2, 1.0),
        "(10-01)": (1, 2, -1.0),
        "(11+00)": (0, 3, 1.0),
        "(11-00)": (0, 3, -1.0),
    }
    if label not in superpositions:
        raise ValueError(f"unknown state label {label!r}")
    i, j, sign = superpositions[label]
    psi = np.zeros(4, dtype=complex)
    psi[i] = 1.0 / np.sqrt(2.0)
    psi[j] = sign / np.sqrt(2.0)
    return psi


def build_hamiltonian(p: ModelParams) -> np.ndarray:
    """System Hamiltonian.

    H = w_A sz_A + w_B sz_B + J_xy (sp_A sm_B + sm_A sp_B) + J_z sz_A sz_B
    """
    flip_flop = sigma_plus("a") @ sigma_minus("b") + sigma_minus("a") @ sigma_plus("b")
    return (
        p.omega_a * sigma_z("a")
        + p.omega_b * sigma_z("b")
        + p.j_xy * flip_flop
        + p.j_z * (sigma_z("a") @ sigma_z("b"))
    )


def build_lowering(p: ModelParams) -> np.ndarray:
    """Collective coupling operator L = kappa_A sm_A + kappa_B sm_B."""
    return p.kappa_a * sigma_minus("a") + p.kappa_b * sigma_minus("b")


def basis_operator(j: int) -> np.ndarray:
    """The five lowering-type operators spanning the memory-operator ansatz.

    1: sm_A, 2: sm_B, 3: sz_A sm_B, 4: sz_B sm_A, 5: 2 sm_A sm_B.
    """
    if j == 1:
        return sigma_minus("a")
    if j == 2:
        return sigma_minus("b")
    if j == 3:
        return sigma_z("a") @ sigma_minus("b")
    if j == 4:
        return sigma_z("b") @ sigma_minus("a")
    if j == 5:
        return 2.0 * (sigma_minus("a") @ sigma_minus("b"))
    raise ValueError(f"basis operator index must be 1..5, got {j}")


def expectation(op: np.ndarray, psi: np.ndarray) -> complex:
    """<psi|op|psi> / <psi|psi>.

    Raises ValueError on a numerically null state.
    """
    norm2 = np.vdot(psi, psi).real
    if norm2 < 1e-300:
        raise ValueError("expectation of a null state vector")
    return complex(np.vdot(psi, op @ psi) / norm2)
