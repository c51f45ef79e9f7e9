"""Deterministic coefficient fields of the time-local memory operator.

The memory operator of the diffusion equation is expanded over the five
lowering-type basis operators with scalar coefficient fields f1..f4(t, s) and
f5(t, s, s'), which obey a closed hyperbolic system in t with boundary data on
the s = t (and s' = t) surfaces. Their kernel-weighted integrals over s,

    F_j(t)    = int_0^t alpha(t, s) f_j(t, s) ds            (j = 1..4)
    F5(t, s') = int_0^t alpha(t, s) f5(t, s, s') ds,

are what the stochastic integrators actually consume; this module advances the
fields on a uniform s-grid (method of lines, spacing dc equal to the t-step),
with one explicit second-order Heun step per dc and trapezoidal quadrature
re-evaluated at both stages, and returns the tabulated F's.

Cost is O((T/dc)^3) time and O((T/dc)^2) memory once the f5 sheet is active.
The sheet stays dormant (and costs nothing) while its injected boundary column
-i (kappa_A f3 + kappa_B f4) is exactly zero, which covers every effective
single-qubit reduction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import ModelParams
from .noise import KernelSpec, OUKernel, TableKernel, kernel_eval

__all__ = [
    "FieldSlice",
    "CoeffTables",
    "FieldBlowupError",
    "initial_slice",
    "compute_F",
    "rhs_fields",
    "advance_slice",
    "solve_fields",
    "riccati_oracle",
]

_BLOCK = 256  # row-block size for the f5 sheet updates


class FieldBlowupError(RuntimeError):
    """A coefficient field stopped being finite during integration."""

    def __init__(self, t: float, s: float):
        self.t = t
        self.s = s
        super().__init__(f"non-finite coefficient field at t={t:g}, s={s:g}")


@dataclass
class FieldSlice:
    """All field values at one time t: f1..f4 over s, f5 over (s, s').

    f has shape (4, m) with rows f1..f4 on s_grid; f5 has shape (m, m) with
    axis 0 = s and axis 1 = s', or is None while identically zero.
    """

    t: float
    s_grid: np.ndarray
    f: np.ndarray
    f5: np.ndarray | None

    @property
    def m(self) -> int:
        return self.s_grid.size


def initial_slice(p: ModelParams) -> FieldSlice:
    f = np.array([[p.kappa_a], [p.kappa_b], [0.0], [0.0]], dtype=complex)
    return FieldSlice(0.0, np.zeros(1), f, None)


def _alpha_weights(kernel: KernelSpec, t: float, s: np.ndarray) -> np.ndarray:
    """Trapezoid weights times alpha(t, s) on a uniform s grid."""
    m = s.size
    if m < 2:
        return np.zeros(m, dtype=complex)
    dc = s[1] - s[0]
    w = np.full(m, dc)
    w[0] = w[-1] = 0.5 * dc
    return w * kernel_eval(kernel, t, s)


def _coupling(F: np.ndarray, p: ModelParams):
    """(C, lam, f5_pref): 4x4 coupling of f1..f4, f5 diagonal rate, F5 drive."""
    F1, F2, F3, F4 = F
    ka, kb = p.kappa_a, p.kappa_b
    a1 = 2j * p.omega_a + ka * F1 + kb * F3
    a2 = 2j * p.omega_b + ka * F4 + kb * F2
    q = 2j * p.j_z + ka * F4 + kb * F3
    db = -1j * p.j_xy - kb * F1 + kb * F4
    da = -1j * p.j_xy - ka * F2 + ka * F3
    c = np.array(
        [
            [a1, 0.0, db, q],
            [0.0, a2, q, da],
            [da, q, a2, 0.0],
            [q, db, 0.0, a1],
        ],
        dtype=complex,
    )
    pref = np.array([-1j * kb, -1j * ka, -1j * ka, -1j * kb])
    return c, a1 + a2, pref


def _g_of(f: np.ndarray, p: ModelParams) -> np.ndarray:
    return p.kappa_a * f[0] + p.kappa_b * f[1] - p.kappa_b * f[2] - p.kappa_a * f[3]


def compute_F(slc: FieldSlice, kernel: KernelSpec):
    """Kernel-weighted trapezoid integrals of a slice: (F1..F4, F5 row over s').

    At t = 0 everything is zero. The boundary identity
    F5(t, s'=t) = -i [kappa_A F3(t) + kappa_B F4(t)] holds exactly because the
    quadrature is linear.
    """
    aw = _alpha_weights(kernel, slc.t, slc.s_grid)
    fvals = slc.f @ aw
    if slc.f5 is None:
        f5row = np.zeros(slc.m, dtype=complex)
    else:
        f5row = aw @ slc.f5
    return fvals, f5row


def rhs_fields(slc: FieldSlice, fvals: np.ndarray, f5row: np.ndarray, p: ModelParams):
    """Time derivatives of all fields on the slice grid.

    In the f1..f4 equations the F5 factor is read at s' = s (f5row aligned
    with s_grid); in the f5 equation the f_j factors are functions of s and
    the F5 factor a function of s'.
    """
    c, lam, pref = _coupling(fvals, p)
    df = c @ slc.f + pref[:, None] * f5row[None, :]
    if slc.f5 is None:
        df5 = None
    else:
        df5 = np.multiply.outer(_g_of(slc.f, p), f5row) + lam * slc.f5
    return df, df5


class _Workspace:
    """Capacity-padded buffers the Heun stepper advances in place."""

    def __init__(self, capacity: int, dc: float, p: ModelParams):
        self.cap = capacity
        self.dc = dc
        self.p = p
        self.s = dc * np.arange(capacity)
        self.f = np.zeros((4, capacity), dtype=complex)
        self.fp = np.zeros((4, capacity), dtype=complex)
        self.f5 = None
        self.f5p = None
        self.f[0, 0] = p.kappa_a
        self.f[1, 0] = p.kappa_b

    def activate_f5(self) -> None:
        if self.f5 is None:
            self.f5 = np.zeros((self.cap, self.cap), dtype=complex)
            self.f5p = np.zeros((self.cap, self.cap), dtype=complex)

    def load_slice(self, slc: FieldSlice) -> None:
        m = slc.m
        self.f[:, :m] = slc.f
        if slc.f5 is not None:
            self.activate_f5()
            self.f5[:m, :m] = slc.f5

    def to_slice(self, m: int, t: float) -> FieldSlice:
        f5 = None if self.f5 is None else self.f5[:m, :m].copy()
        return FieldSlice(t, self.s[:m].copy(), self.f[:, :m].copy(), f5)


def _check_finite(ws: _Workspace, m: int, t: float, fvals, f5row) -> None:
    if np.all(np.isfinite(fvals)) and np.all(np.isfinite(f5row)):
        return
    bad = ~np.isfinite(ws.f[:, :m])
    if bad.any():
        s_idx = int(np.flatnonzero(bad.any(axis=0))[0])
        raise FieldBlowupError(t, ws.s[s_idx])
    if ws.f5 is not None:
        bad5 = ~np.isfinite(ws.f5[:m, :m])
        if bad5.any():
            s_idx = int(np.flatnonzero(bad5.any(axis=1))[0])
            raise FieldBlowupError(t, ws.s[s_idx])
    raise FieldBlowupError(t, t)


def _heun_step(ws: _Workspace, m: int, t: float, kernel: KernelSpec):
    """One dc step from t on an m-point slice; returns stage-1 (F, F5 row).

    On return the workspace holds the (m+1)-point slice at t + dc, boundary
    values imposed and the f5 sheet extended (or newly activated when its
    injected column first becomes nonzero).
    """
    p, dc = ws.p, ws.dc
    ka, kb = p.kappa_a, p.kappa_b
    f = ws.f
    active = ws.f5 is not None
    # Overflow is reported through FieldBlowupError, not numpy warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        return _heun_step_inner(ws, m, t, kernel, p, dc, ka, kb, f, active)


def _heun_step_inner(ws, m, t, kernel, p, dc, ka, kb, f, active):
    # stage 1 at (t, current slice)
    aw1 = _alpha_weights(kernel, t, ws.s[:m])
    fvals1 = f[:, :m] @ aw1
    f5row1 = aw1 @ ws.f5[:m, :m] if active else np.zeros(m, dtype=complex)
    _check_finite(ws, m, t, fvals1, f5row1)
    c1, lam1, pref = _coupling(fvals1, p)
    k1 = c1 @ f[:, :m] + pref[:, None] * f5row1[None, :]
    g1 = _g_of(f[:, :m], p)

    # predictor extended with the t+dc boundary point
    t2 = t + dc
    fp = ws.fp
    fp[:, :m] = f[:, :m] + dc * k1
    fp[0, m] = ka
    fp[1, m] = kb
    fp[2, m] = fp[3, m] = 0.0
    if active:
        f5, f5p = ws.f5, ws.f5p
        one1 = 1.0 + dc * lam1
        for r0 in range(0, m, _BLOCK):
            r1 = min(r0 + _BLOCK, m)
            f5p[r0:r1, :m] = f5[r0:r1, :m] * one1 + (dc * g1[r0:r1, None]) * f5row1[None, :]
        f5p[m, : m + 1] = 0.0
        f5p[: m + 1, m] = -1j * (ka * fp[2, : m + 1] + kb * fp[3, : m + 1])

    # stage 2 at (t+dc, extended predictor)
    aw2 = _alpha_weights(kernel, t2, ws.s[: m + 1])
    fvals2 = fp[:, : m + 1] @ aw2
    f5row2 = aw2 @ ws.f5p[: m + 1, : m + 1] if active else np.zeros(m + 1, dtype=complex)
    if not (np.all(np.isfinite(fvals2)) and np.all(np.isfinite(f5row2))):
        raise FieldBlowupError(t2, t2)
    c2, lam2, _ = _coupling(fvals2, p)
    k2 = c2 @ fp[:, :m] + pref[:, None] * f5row2[None, :m]

    # corrector, then boundary extension
    f[:, :m] += (0.5 * dc) * (k1 + k2)
    f[0, m] = ka
    f[1, m] = kb
    f[2, m] = f[3, m] = 0.0
    if active:
        g2 = _g_of(fp[:, :m], p)
        h1 = 0.5 * dc * lam1
        h2 = 0.5 * dc * lam2
        gg1 = (0.5 * dc) * g1
        gg2 = (0.5 * dc) * g2
        row2m = f5row2[:m]
        for r0 in range(0, m, _BLOCK):
            r1 = min(r0 + _BLOCK, m)
            f5[r0:r1, :m] = (
                f5[r0:r1, :m] * (1.0 + h1)
                + h2 * f5p[r0:r1, :m]
                + gg1[r0:r1, None] * f5row1[None, :]
                + gg2[r0:r1, None] * row2m[None, :]
            )
        f5[m, : m + 1] = 0.0
        f5[: m + 1, m] = -1j * (ka * f[2, : m + 1] + kb * f[3, : m + 1])
    else:
        newcol = -1j * (ka * f[2, : m + 1] + kb * f[3, : m + 1])
        if np.any(newcol):
            ws.activate_f5()
            ws.f5[: m + 1, m] = newcol
    return fvals1, f5row1


def advance_slice(slc: FieldSlice, p: ModelParams, kernel: KernelSpec, dc: float) -> FieldSlice:
    """One Heun step of a slice: t -> t + dc, grid extended by one s point.

    Functional: the input slice is left untouched. solve_fields runs the same
    stepper on persistent buffers.
    """
    if dc <= 0:
        raise ValueError("dc must be positive")
    if slc.m > 1 and abs((slc.s_grid[1] - slc.s_grid[0]) - dc) > 1e-12 * dc:
        raise ValueError("slice spacing does not match dc")
    ws = _Workspace(slc.m + 1, dc, p)
    ws.load_slice(slc)
    _heun_step(ws, slc.m, slc.t, kernel)
    return ws.to_slice(slc.m + 1, slc.t + dc)


@dataclass
class CoeffTables:
    """Tabulated memory-operator weights on the uniform coefficient grid.

    F has shape (4, N+1): F[j-1, i] = F_j(t_grid[i]). F5 has shape
    (N+1, N+1): row i holds F5(t_i, s') over s'_j = t_grid[j], stored
    row-major by t index with s' ascending; entries beyond the diagonal
    continue the diagonal value so that linear interpolation near s' = t stays
    well-defined. F5 is None when identically zero (no doubly-excited
    component ever feeds it). Queries interpolate linearly in t (and in s').
    """

    t_grid: np.ndarray
    F: np.ndarray
    F5: np.ndarray | None
    dc: float
    params: ModelParams
    kernel: KernelSpec

    @property
    def t_final(self) -> float:
        return float(self.t_grid[-1])

    def _bracket(self, t: float):
        if t < -1e-9 or t > self.t_final + 1e-9:
            raise ValueError(f"t={t:g} outside tabulated range [0, {self.t_final:g}]")
        x = min(max(t / self.dc, 0.0), self.t_grid.size - 1.0)
        i = min(int(x), self.t_grid.size - 2)
        return i, x - i

    def f_values(self, t: float) -> np.ndarray:
        """Linear-in-t interpolation of (F1, F2, F3, F4)."""
        if self.t_grid.size == 1:
            return self.F[:, 0].copy()
        i, w = self._bracket(t)
        return self.F[:, i] * (1.0 - w) + self.F[:, i + 1] * w

    def save(self, path) -> None:
        """npz dump of the documented layout (plus parameters to validate on load)."""
        p = self.params
        kern: dict
        if isinstance(self.kernel, OUKernel):
            kern = {"kernel_kind": "ou", "kernel_gamma": self.kernel.gamma}
        else:
            kern = {
                "kernel_kind": "table",
                "kernel_tau": self.kernel.tau_grid,
                "kernel_val": self.kernel.values,
            }
        np.savez(
            path,
            t_grid=self.t_grid,
            F=self.F,
            F5=self.F5 if self.F5 is not None else np.zeros((0, 0), dtype=complex),
            dc=self.dc,
            model=np.array([p.omega_a, p.omega_b, p.j_xy, p.j_z, p.kappa_a, p.kappa_b]),
            **kern,
        )

    @classmethod
    def load(cls, path) -> "CoeffTables":
        with np.load(path, allow_pickle=False) as d:
            model = d["model"]
            p = ModelParams(*(float(x) for x in model))
            kind = str(d["kernel_kind"])
            if kind == "ou":
                kernel: KernelSpec = OUKernel(float(d["kernel_gamma"]))
            else:
                kernel = TableKernel(d["kernel_tau"], d["kernel_val"])
            f5 = d["F5"]
            return cls(
                d["t_grid"],
                d["F"],
                None if f5.size == 0 else f5,
                float(d["dc"]),
                p,
                kernel,
            )


def solve_fields(p: ModelParams, kernel: KernelSpec, t_final: float, dc: float) -> CoeffTables:
    """March the coefficient fields to t_final and tabulate F1..F4 and F5.

    dc is both the t step and the s (and s') grid spacing. Pure function of
    its arguments; raises FieldBlowupError if any field stops being finite.
    """
    if dc <= 0 or t_final < 0:
        raise ValueError("need dc > 0 and t_final >= 0")
    n = int(round(t_final / dc))
    if abs(n * dc - t_final) > 1e-9 * max(t_final, 1.0):
        raise ValueError(f"dc {dc!r} does not divide t_final {t_final!r}")

    ws = _Workspace(n + 1, dc, p)
    f_tab = np.zeros((4, n + 1), dtype=complex)
    f5_tab = None
    for i in range(n):
        fvals, f5row = _heun_step(ws, i + 1, i * dc, kernel)
        f_tab[:, i] = fvals
        if f5_tab is None and ws.f5 is not None:
            f5_tab = np.zeros((n + 1, n + 1), dtype=complex)
        if f5_tab is not None:
            f5_tab[i, : i + 1] = f5row
            f5_tab[i, i + 1 :] = f5row[-1]

    aw = _alpha_weights(kernel, n * dc, ws.s[: n + 1])
    fvals = ws.f[:, : n + 1] @ aw
    _check_finite(ws, n + 1, n * dc, fvals, np.zeros(1))
    f_tab[:, n] = fvals
    if f5_tab is not None:
        f5_tab[n, :] = aw @ ws.f5[: n + 1, : n + 1]
    t_grid = dc * np.arange(n + 1)
    return CoeffTables(t_grid, f_tab, f5_tab, dc, p, kernel)


def riccati_oracle(
    omega: float, kappa: float, kernel: OUKernel, t_final: float, dt: float
):
    """Single-qubit reduction oracle for F1: RK4 on the closed scalar flow.

    For one qubit (kappa_B = 0, couplings off) the convolution weight obeys
        dF/dt = gamma kappa / 2 - gamma F + 2i omega F + kappa F^2,  F(0) = 0,
    whose omega = 0 fixed point is (gamma - sqrt(gamma^2 - 2 gamma kappa^2)) /
    (2 kappa). Returns (t_grid, F).
    """
    gamma = kernel.gamma
    n = int(round(t_final / dt))
    if abs(n * dt - t_final) > 1e-9 * max(t_final, 1.0):
        raise ValueError(f"dt {dt!r} does not divide t_final {t_final!r}")

    def rhs(f):
        return 0.5 * gamma * kappa - gamma * f + 2j * omega * f + kappa * f * f

    out = np.zeros(n + 1, dtype=complex)
    f = 0.0 + 0.0j
    for i in range(n):
        k1 = rhs(f)
        k2 = rhs(f + 0.5 * dt * k1)
        k3 = rhs(f + 0.5 * dt * k2)
        k4 = rhs(f + dt * k3)
        f = f + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(f):
            raise FieldBlowupError((i + 1) * dt, (i + 1) * dt)
        out[i + 1] = f
    return dt * np.arange(n + 1), out
