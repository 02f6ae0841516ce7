"""Exact quantum predictions for the bilocality network.

Qubit ordering for the four-photon Hilbert space is
(A side of rho1, B side of rho1, B side of rho2, C side of rho2).
Outcome bit 0 is the +1 eigenvalue (the ``plus`` detector), bit 1 is -1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Literal

import numpy as np

ATOL = 1e-12
PSD_TOL = -1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)

Convention = Literal["peripheral-sum", "literal"]
SETTINGS = tuple(itertools.product((0, 1), repeat=3))


class IncompleteBehaviorError(ValueError):
    """Raised when a functional needs a setting cell that carries no data."""


@dataclass(frozen=True)
class TwoQubitState:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 density matrix, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T)) > ATOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > ATOL:
            raise ValueError(f"density matrix has trace {np.trace(m).real:.15g}, expected 1")
        if np.linalg.eigvalsh(m).min() < PSD_TOL:
            raise ValueError("density matrix is not positive semidefinite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def expectation(self, op: np.ndarray) -> float:
        return float(np.real(np.trace(op @ self.matrix)))


@dataclass(frozen=True)
class DichotomicObservable:
    bloch: np.ndarray
    label: str = ""

    def __post_init__(self):
        n = np.asarray(self.bloch, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if norm == 0.0:
            raise ValueError("Bloch vector must be non-zero")
        if abs(norm - 1.0) > ATOL:
            raise ValueError(f"Bloch vector must be a unit vector, |n| = {norm:.15g}")
        n.setflags(write=False)
        object.__setattr__(self, "bloch", n)

    @property
    def operator(self) -> np.ndarray:
        x, y, z = self.bloch
        return x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z

    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenprojectors (outcome 0 -> +1, outcome 1 -> -1)."""
        op = self.operator
        return (IDENTITY2 + op) / 2, (IDENTITY2 - op) / 2


SIGMA_Z_OBS = DichotomicObservable((0.0, 0.0, 1.0), "sigma_z")
SIGMA_X_OBS = DichotomicObservable((1.0, 0.0, 0.0), "sigma_x")
DIAG_PLUS = DichotomicObservable((1 / np.sqrt(2), 0.0, 1 / np.sqrt(2)), "diag_plus")
DIAG_MINUS = DichotomicObservable((-1 / np.sqrt(2), 0.0, 1 / np.sqrt(2)), "diag_minus")

NAMED_OBSERVABLES = {
    "sigma_z": SIGMA_Z_OBS,
    "sigma_x": SIGMA_X_OBS,
    "diag_plus": DIAG_PLUS,
    "diag_minus": DIAG_MINUS,
}


@dataclass(frozen=True)
class MeasurementPlan:
    a_settings: tuple[DichotomicObservable, DichotomicObservable]
    b_arm_A_settings: tuple[DichotomicObservable, DichotomicObservable]
    b_arm_C_settings: tuple[DichotomicObservable, DichotomicObservable]
    c_settings: tuple[DichotomicObservable, DichotomicObservable]

    def __post_init__(self):
        for name in ("a_settings", "b_arm_A_settings", "b_arm_C_settings", "c_settings"):
            slot = tuple(getattr(self, name))
            if len(slot) != 2:
                raise ValueError(f"{name} must hold exactly two observables, got {len(slot)}")
            object.__setattr__(self, name, slot)

    @classmethod
    def optimal(cls) -> MeasurementPlan:
        """Separable plan reaching sqrt(2) on two singlets.

        The second peripheral observable is stored as (sigma_z - sigma_x)/sqrt(2), which is
        the lab's (sigma_x - sigma_z)/sqrt(2) with its detector ports swapped.
        """
        central = (SIGMA_Z_OBS, SIGMA_X_OBS)
        peripheral = (DIAG_PLUS, DIAG_MINUS)
        return cls(peripheral, central, central, peripheral)


@dataclass(frozen=True)
class Behavior:
    """p(a, b, c | xA, xB, xC) stored as ``table[xA, xB, xC, a, b, c]``.

    Setting cells without data are NaN; they are refused by every functional.
    """

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=np.float64)
        if t.shape != (2,) * 6:
            raise ValueError(f"behavior table must have shape (2,)*6, got {t.shape}")
        for x in SETTINGS:
            cell = t[x]
            if np.all(np.isnan(cell)):
                continue
            if np.any(np.isnan(cell)):
                raise ValueError(f"setting cell {x} is partially undefined")
            if cell.min() < -ATOL or cell.max() > 1 + ATOL:
                raise ValueError(f"setting cell {x} has entries outside [0, 1]")
            if abs(cell.sum() - 1.0) > ATOL:
                raise ValueError(f"setting cell {x} sums to {cell.sum():.15g}")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def missing_settings(self) -> list[tuple[int, int, int]]:
        return [x for x in SETTINGS if np.isnan(self.table[x]).any()]

    @property
    def complete(self) -> bool:
        return not self.missing_settings

    @classmethod
    def uniform(cls) -> Behavior:
        return cls(np.full((2,) * 6, 1 / 8))

    @classmethod
    def deterministic(cls, a: int = 0, b: int = 0, c: int = 0) -> Behavior:
        t = np.zeros((2,) * 6)
        t[..., a, b, c] = 1.0
        return cls(t)


@dataclass(frozen=True)
class ArmBehavior:
    """Arm-resolved distribution ``table[xA, xB, xC, a, bA, bC, c]`` (both central bits kept)."""

    table: np.ndarray

    def __post_init__(self):
        t = np.array(self.table, dtype=np.float64)
        if t.shape != (2,) * 7:
            raise ValueError(f"arm behavior table must have shape (2,)*7, got {t.shape}")
        sums = t.reshape(8, 16).sum(axis=1)
        if np.any(np.abs(sums - 1) > ATOL) or t.min() < -ATOL:
            raise ValueError("arm behavior is not normalized per setting")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    def parity(self) -> Behavior:
        return Behavior(parity_table(self.table))


def parity_table(arm_table: np.ndarray) -> np.ndarray:
    """Collapse (bA, bC) to b = bA xor bC; works on probabilities or counts."""
    t = np.asarray(arm_table)
    out = np.zeros(t.shape[:3] + (2, 2, 2), dtype=t.dtype)
    for ba, bc in itertools.product((0, 1), repeat=2):
        out[:, :, :, :, ba ^ bc, :] += t[:, :, :, :, ba, bc, :]
    return out


@dataclass(frozen=True)
class FunctionalResult:
    I1: float
    I2: float
    B: float


def singlet_vector() -> np.ndarray:
    return np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)


def singlet_state() -> TwoQubitState:
    psi = singlet_vector()
    return TwoQubitState(np.outer(psi, psi.conj()))


def werner_state(v: float) -> TwoQubitState:
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"Werner visibility must lie in [0, 1], got {v}")
    return TwoQubitState(v * singlet_state().matrix + (1 - v) * np.eye(4) / 4)


def maximally_mixed() -> TwoQubitState:
    return werner_state(0.0)


def visibility_for_chsh(s: float) -> float:
    """Werner visibility whose optimal CHSH value equals ``s``."""
    return s / (2 * np.sqrt(2))


def hwp_to_observable(theta_deg: float) -> DichotomicObservable:
    # HWP at theta before a PBS analyses linear polarization at 2*theta, i.e. Bloch angle 4*theta
    phi = np.deg2rad(4 * theta_deg)
    return DichotomicObservable((np.sin(phi), 0.0, np.cos(phi)), f"hwp_{theta_deg:g}deg")


def fidelity(rho: TwoQubitState, target: np.ndarray) -> float:
    psi = np.asarray(target, dtype=complex).reshape(4)
    psi = psi / np.linalg.norm(psi)
    return float(np.real(psi.conj() @ rho.matrix @ psi))


def pair_distribution(rho: TwoQubitState, left: DichotomicObservable,
                      right: DichotomicObservable) -> np.ndarray:
    """Born-rule p(a, b) for one source measured with ``left`` and ``right``."""
    out = np.empty((2, 2))
    for (a, pa), (b, pb) in itertools.product(enumerate(left.projectors()),
                                              enumerate(right.projectors())):
        out[a, b] = np.real(np.trace(np.kron(pa, pb) @ rho.matrix))
    return np.clip(out, 0.0, 1.0)


def born_arm_behavior(rho1: TwoQubitState, rho2: TwoQubitState,
                      plan: MeasurementPlan) -> ArmBehavior:
    joint = np.kron(rho1.matrix, rho2.matrix)
    table = np.empty((2,) * 7)
    for xa, xb, xc in SETTINGS:
        projs = (plan.a_settings[xa].projectors(), plan.b_arm_A_settings[xb].projectors(),
                 plan.b_arm_C_settings[xb].projectors(), plan.c_settings[xc].projectors())
        for a, ba, bc, c in itertools.product((0, 1), repeat=4):
            op = np.kron(np.kron(projs[0][a], projs[1][ba]), np.kron(projs[2][bc], projs[3][c]))
            table[xa, xb, xc, a, ba, bc, c] = np.real(np.trace(op @ joint))
    return ArmBehavior(np.clip(table, 0.0, 1.0))


def born_behavior(rho1: TwoQubitState, rho2: TwoQubitState, plan: MeasurementPlan) -> Behavior:
    return born_arm_behavior(rho1, rho2, plan).parity()


_SIGNS3 = np.array([(-1) ** (a + b + c) for a, b, c in itertools.product((0, 1), repeat=3)],
                   dtype=np.float64).reshape(2, 2, 2)


def correlator(beh: Behavior, xA: int, xB: int, xC: int) -> float:
    cell = beh.table[xA, xB, xC]
    if np.isnan(cell).any():
        raise IncompleteBehaviorError(f"no data for setting ({xA}, {xB}, {xC})")
    return float(np.sum(_SIGNS3 * cell))


def correlators(beh: Behavior) -> np.ndarray:
    """All eight correlators as an array indexed [xA, xB, xC]."""
    missing = beh.missing_settings
    if missing:
        raise IncompleteBehaviorError(f"no data for settings {missing}")
    return np.einsum("xyzabc,abc->xyz", beh.table, _SIGNS3)


def functional_from_correlators(E: np.ndarray,
                                convention: Convention = "peripheral-sum") -> FunctionalResult:
    E = np.asarray(E, dtype=np.float64)
    sign = np.array([1.0, -1.0])
    if convention == "peripheral-sum":
        I1 = E[:, 0, :].sum() / 4
        I2 = np.einsum("i,ij,j->", sign, E[:, 1, :], sign) / 4
    elif convention == "literal":
        I1 = E[:, :, 0].sum() / 4
        I2 = np.einsum("i,ij,j->", sign, E[:, :, 1], sign) / 4
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return FunctionalResult(float(I1), float(I2), float(np.sqrt(abs(I1)) + np.sqrt(abs(I2))))


def biloc_functional(beh: Behavior, convention: Convention = "peripheral-sum") -> FunctionalResult:
    return functional_from_correlators(correlators(beh), convention)


def chsh_from_correlators(E: np.ndarray) -> float:
    E = np.asarray(E, dtype=np.float64)
    return float(abs(E[0, 0] + E[0, 1] + E[1, 0] - E[1, 1]))


def chsh(beh2: np.ndarray) -> float:
    """|S| for a bipartite behavior ``beh2[x, y, a, b]``."""
    p = np.asarray(beh2, dtype=np.float64)
    if p.shape != (2, 2, 2, 2):
        raise ValueError(f"bipartite behavior must have shape (2, 2, 2, 2), got {p.shape}")
    sign = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return chsh_from_correlators(np.einsum("xyab,ab->xy", p, sign))


def bipartite_behavior(rho: TwoQubitState, left: tuple[DichotomicObservable, DichotomicObservable],
                       right: tuple[DichotomicObservable, DichotomicObservable]) -> np.ndarray:
    out = np.empty((2, 2, 2, 2))
    for x, y in itertools.product((0, 1), repeat=2):
        out[x, y] = pair_distribution(rho, left[x], right[y])
    return out


def ab_marginal(beh: Behavior, xC: int = 0) -> np.ndarray:
    """p(a, b | xA, xB) from the tripartite behavior, summing over c at fixed xC."""
    return beh.table[:, :, xC].sum(axis=-1)


def link_chsh(rho: TwoQubitState, plan: MeasurementPlan, link: Literal["AB", "BC"]) -> float:
    if link == "AB":
        return chsh(bipartite_behavior(rho, plan.a_settings, plan.b_arm_A_settings))
    return chsh(bipartite_behavior(rho, plan.c_settings, plan.b_arm_C_settings))
