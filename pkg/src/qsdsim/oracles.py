"""Independent reference solvers used to validate the stochastic code.

Nothing here touches noise or trajectories: a fixed-step Lindblad master
equation integrator (the infinite-memory-rate target of the ensemble
dynamics, with the dissipation rate fixed to 1), a closed-form exchange
oscillation for the dissipation-free two-qubit block, and long-time
steady-state extraction with an explicit residual guarantee.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import ModelParams, build_hamiltonian, build_lowering

__all__ = [
    "DensityMatrixSeries",
    "LindbladConvergenceError",
    "lindblad_rhs",
    "lindblad_solve",
    "lindblad_steady",
    "analytic_rabi",
    "trace_distance",
    "validate_density",
]


class LindbladConvergenceError(RuntimeError):
    """Long-time integration failed to reach a stationary point."""

    def __init__(self, residual: float, horizon: float):
        self.residual = residual
        self.horizon = horizon
        super().__init__(
            f"no stationary state within t = {horizon:g}: "
            f"generator residual {residual:.3e}"
        )


def validate_density(
    rho: np.ndarray,
    trace_tol: float = 1e-9,
    herm_tol: float = 1e-12,
    eig_tol: float = 1e-9,
) -> np.ndarray:
    """Check a 4x4 density matrix; returns it as a complex array."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("density matrix must be 4x4")
    tr = np.trace(rho)
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"trace {tr!r} deviates from 1 beyond {trace_tol:g}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > herm_tol:
        raise ValueError(f"not Hermitian: max deviation {herm:.3e}")
    lo = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    if lo < -eig_tol:
        raise ValueError(f"not positive semidefinite: eigenvalue {lo:.3e}")
    return rho


@dataclass
class DensityMatrixSeries:
    """Times plus one 4x4 density matrix per time."""

    times: np.ndarray
    rhos: np.ndarray

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.rhos = np.asarray(self.rhos, dtype=complex)
        if self.rhos.shape != (self.times.size, 4, 4):
            raise ValueError("rhos must have shape (n_times, 4, 4)")

    def validate(
        self,
        trace_tol: float = 1e-9,
        herm_tol: float = 1e-12,
        eig_tol: float = 1e-9,
    ) -> None:
        for rho in self.rhos:
            validate_density(rho, trace_tol, herm_tol, eig_tol)

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 + 1e-9 * abs(t):
            raise ValueError(f"time {t!r} not on the recorded grid")
        return self.rhos[i]


def lindblad_rhs(rho: np.ndarray, h: np.ndarray, l: np.ndarray, ld: np.ndarray,
                 ldl: np.ndarray) -> np.ndarray:
    comm = h @ rho - rho @ h
    return -1j * comm + l @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl)


def lindblad_solve(
    p: ModelParams, rho0: np.ndarray, t_final: float, dt: float = 0.01
) -> DensityMatrixSeries:
    """Fixed-step classical 4-stage integration of the unit-rate master equation.

        d rho = -i[H, rho] + L rho Ldag - (1/2){Ldag L, rho}

    This is the infinite-memory-rate limit of the ensemble dynamics: the
    bath correlation integrates to 1 over the real line at every memory
    rate, so the Markov dissipator carries no extra prefactor.
    """
    rho = validate_density(rho0, trace_tol=1e-9, herm_tol=1e-9, eig_tol=1e-9)
    if dt <= 0 or t_final < 0:
        raise ValueError("need dt > 0 and t_final >= 0")
    n = int(round(t_final / dt))
    if abs(n * dt - t_final) > 1e-9 * max(t_final, 1.0):
        raise ValueError(f"dt {dt!r} does not divide t_final {t_final!r}")
    h = build_hamiltonian(p)
    l = build_lowering(p)
    ld = l.conj().T
    ldl = ld @ l
    times = dt * np.arange(n + 1)
    rhos = np.empty((n + 1, 4, 4), dtype=complex)
    rhos[0] = rho
    for k in range(n):
        k1 = lindblad_rhs(rho, h, l, ld, ldl)
        k2 = lindblad_rhs(rho + 0.5 * dt * k1, h, l, ld, ldl)
        k3 = lindblad_rhs(rho + 0.5 * dt * k2, h, l, ld, ldl)
        k4 = lindblad_rhs(rho + dt * k3, h, l, ld, ldl)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        rho = 0.5 * (rho + rho.conj().T)
        if not np.all(np.isfinite(rho)):
            raise RuntimeError(f"master equation blew up at t={(k + 1) * dt:g}")
        rhos[k + 1] = rho
    return DensityMatrixSeries(times, rhos)


def lindblad_steady(
    p: ModelParams,
    rho0: np.ndarray,
    dt: float = 0.01,
    residual_tol: float = 1e-9,
    t_max: float = 500.0,
) -> np.ndarray:
    """Stationary state reached from rho0 by long-time integration.

    Integrates in chunks until the generator applied to the state has
    Frobenius norm <= residual_tol. The generator's kernel is degenerate
    (any mixture over the dark sector is stationary), so the answer depends
    on rho0; initial states carrying a persistent dark-sector coherence
    rotate forever and raise LindbladConvergenceError.
    """
    rho = validate_density(rho0, trace_tol=1e-9, herm_tol=1e-9, eig_tol=1e-9)
    h = build_hamiltonian(p)
    l = build_lowering(p)
    ld = l.conj().T
    ldl = ld @ l
    chunk = 25.0
    t = 0.0
    residual = float(np.linalg.norm(lindblad_rhs(rho, h, l, ld, ldl)))
    while residual > residual_tol:
        if t >= t_max:
            raise LindbladConvergenceError(residual, t_max)
        span = min(chunk, t_max - t)
        series = lindblad_solve(p, rho, span, dt)
        rho = series.rhos[-1]
        t += span
        residual = float(np.linalg.norm(lindblad_rhs(rho, h, l, ld, ldl)))
    return rho


def analytic_rabi(p: ModelParams, t) -> np.ndarray:
    """Population of |01> from |10> under pure exchange: sin^2(Jxy t).

    Valid only for kappa_a = kappa_b = 0 and omega_a = omega_b, where the
    single-excitation block diagonalizes into (|10> +- |01>)/sqrt(2) split
    by 2 Jxy.
    """
    if p.kappa_a != 0.0 or p.kappa_b != 0.0:
        raise ValueError("closed form needs kappa_a = kappa_b = 0")
    if p.omega_a != p.omega_b:
        raise ValueError("closed form needs omega_a = omega_b")
    return np.sin(p.j_xy * np.asarray(t, dtype=float)) ** 2


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """(1/2) sum |eig(rho - sigma)| for Hermitian inputs."""
    delta = np.asarray(rho, dtype=complex) - np.asarray(sigma, dtype=complex)
    herm = np.max(np.abs(delta - delta.conj().T))
    if herm > 1e-8:
        raise ValueError(f"difference not Hermitian: deviation {herm:.3e}")
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (delta + delta.conj().T)))))
