"""Stochastic trajectory integrators driven by the tabulated memory operator.

Two unravelings of the same dynamics:

* linear: d psi = [-iH + L z*_t - Ldag Obar(t, z*)] psi dt, whose squared norm
  is a mean-one martingale over the noise measure;
* nonlinear: the norm-preserving variant with mean-shifted operators and the
  shifted noise z~*_t = z*_t + int_0^t conj(alpha)(t,s) <Ldag>_s ds, which is
  what ensemble production runs use.

Obar(t, z*) = sum_j F_j(t) O_j + i [int_0^t F5(t,s') z*_s' ds'] O5 with the
F tables produced by the field solver. Steps are explicit second-order Heun
steps of size dt = 2 * dt_half; the noise path lives on the half-step grid so
stage times land on even nodes and the s' quadrature reads every node,
never interpolating noise in time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .algebra import PSI_BASIS, ModelParams, basis_operator, build_hamiltonian, build_lowering
from .fields import CoeffTables
from .noise import KernelSpec, NoisePath, OUKernel, kernel_eval

__all__ = [
    "TrajectoryConfig",
    "Trajectory",
    "TrajectoryBlowupError",
    "ShiftedNoiseState",
    "F5NoiseIntegral",
    "obar_apply",
    "step_linear",
    "step_nonlinear",
    "run_trajectory",
    "symmetric_basis_oracle",
    "dump_trajectory_csv",
]

_SQRT2 = float(np.sqrt(2.0))


class TrajectoryBlowupError(RuntimeError):
    """A state amplitude stopped being finite during integration."""

    def __init__(self, t: float):
        self.t = t
        super().__init__(f"non-finite trajectory state at t={t:g}")


@dataclass(frozen=True)
class TrajectoryConfig:
    """One trajectory run: initial state, horizon, step, and equation variant.

    method is "linear" or "nonlinear"; drop_noise_operator omits the
    doubly-lowering noise-integral term of the memory operator (the
    approximation that is exact whenever the doubly-excited amplitude
    vanishes). record selects what the result carries; stride thins the
    recorded grid (it must divide the step count).
    """

    psi0: np.ndarray
    t_final: float
    dt: float
    method: str = "nonlinear"
    drop_noise_operator: bool = False
    record: str = "both"
    stride: int = 1

    def __post_init__(self) -> None:
        psi = np.asarray(self.psi0, dtype=complex)
        if psi.shape != (4,):
            raise ValueError("psi0 must be a length-4 complex vector")
        nrm = float(np.linalg.norm(psi))
        if abs(nrm - 1.0) > 1e-9:
            raise ValueError(f"psi0 must be normalized, |psi0| = {nrm!r}")
        object.__setattr__(self, "psi0", psi)
        if self.method not in ("linear", "nonlinear"):
            raise ValueError(f"method must be 'linear' or 'nonlinear', got {self.method!r}")
        if self.record not in ("states", "observables", "both"):
            raise ValueError(f"unknown record switch {self.record!r}")
        if self.dt <= 0 or self.t_final < 0:
            raise ValueError("need dt > 0 and t_final >= 0")
        n = int(round(self.t_final / self.dt))
        if abs(n * self.dt - self.t_final) > 1e-9 * max(self.t_final, 1.0):
            raise ValueError(f"dt {self.dt!r} does not divide t_final {self.t_final!r}")
        if self.stride < 1 or (n > 0 and n % self.stride != 0):
            raise ValueError("stride must be >= 1 and divide the step count")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


@dataclass
class Trajectory:
    """Recorded series of one trajectory.

    states holds raw (linear: un-normalized) amplitudes, or None when only
    observables were requested. Observables are taken of the normalized state;
    c holds the raw collective-basis amplitudes; fluct_l is |<L^2> - <L>^2|.
    """

    times: np.ndarray
    states: np.ndarray | None
    norm: np.ndarray
    exp_l: np.ndarray
    c: np.ndarray
    fluct_l: np.ndarray
    method: str
    master_seed: int | None = None
    stream_index: int | None = None


class _Ops:
    """Dense operator set reused across all stages of a run."""

    def __init__(self, p: ModelParams):
        self.h = build_hamiltonian(p)
        self.minus_ih = -1j * self.h
        self.l = build_lowering(p)
        self.ld = self.l.conj().T
        self.o14 = np.stack([basis_operator(j) for j in (1, 2, 3, 4)])
        self.o5 = basis_operator(5)
        self.ld_o14 = np.stack([self.ld @ o for o in self.o14])
        self.ld_o5 = self.ld @ self.o5


class _NoiseView:
    """On-grid z* lookup; stage times must land on noise nodes."""

    def __init__(self, noise: NoisePath, t_final: float, dt: float):
        if not noise.uniform:
            raise ValueError("trajectory integration needs a uniform noise grid")
        if noise.t_final < t_final - 1e-9:
            raise ValueError(
                f"noise path ends at {noise.t_final:g}, before t_final {t_final:g}"
            )
        if abs(2.0 * noise.dt_half - dt) > 1e-9 * dt:
            raise ValueError(
                f"noise spacing {noise.dt_half!r} is not half the step {dt!r}"
            )
        self.dt_half = noise.dt_half
        self.z = noise.samples

    def at(self, t: float) -> complex:
        x = t / self.dt_half
        k = int(round(x))
        if abs(x - k) > 1e-6:
            raise ValueError(f"stage time {t!r} is off the noise grid")
        return self.z[k]


class F5NoiseIntegral:
    """Trapezoid of F5(t, s') z*_s' over the noise grid, O(1) per stage.

    Bilinear table reads (linear in t between rows, linear in s' along rows)
    are folded into per-row prefix sums over the noise nodes, built lazily as
    the query time advances; the evaluation is term-for-term the plain
    trapezoidal sum. Queries must be non-decreasing in t.
    """

    def __init__(self, tables: CoeffTables, noise: NoisePath):
        self.enabled = tables.F5 is not None and tables.t_grid.size > 1
        if not self.enabled:
            return
        self.dc = tables.dc
        self.s_grid = tables.t_grid
        self.f5 = tables.F5
        self.n_rows = tables.t_grid.size
        self.dt_half = noise.dt_half
        self.z = noise.samples
        self._rows: dict = {}

    def _row(self, r: int):
        got = self._rows.get(r)
        if got is not None:
            return got
        n_max = min(int(round((r + 1) * self.dc / self.dt_half)) + 1, self.z.size)
        nodes = self.dt_half * np.arange(n_max)
        vals = np.interp(nodes, self.s_grid, self.f5[r].real) + 1j * np.interp(
            nodes, self.s_grid, self.f5[r].imag
        )
        csum = np.cumsum(vals * self.z[:n_max])
        self._rows[r] = (vals, csum)
        if len(self._rows) > 3:
            for key in [k for k in self._rows if k < r - 1]:
                del self._rows[key]
        return self._rows[r]

    def value(self, t: float) -> complex:
        """int_0^t F5(t, s') z*_s' ds' (zero while the table is)."""
        if not self.enabled or t <= 0.0:
            return 0.0 + 0.0j
        x = t / self.dt_half
        m = int(round(x))
        if abs(x - m) > 1e-6:
            raise ValueError(f"quadrature time {t!r} is off the noise grid")
        if m == 0:
            return 0.0 + 0.0j
        if m >= self.z.size:
            raise ValueError(f"quadrature time {t!r} is past the noise path")
        xr = t / self.dc
        i = min(int(xr + 1e-9), self.n_rows - 2)
        w = min(max(xr - i, 0.0), 1.0)
        total = 0.0 + 0.0j
        for r, wt in ((i, 1.0 - w), (i + 1, w)):
            if wt == 0.0:
                continue
            vals, csum = self._row(r)
            trap = csum[m] - 0.5 * (vals[0] * self.z[0] + vals[m] * self.z[m])
            total += wt * trap
        return total * self.dt_half


def obar_apply(
    tables: CoeffTables,
    noise: NoisePath,
    t: float,
    psi: np.ndarray,
    mode: str = "exact",
) -> np.ndarray:
    """Apply the noise-resolved memory operator Obar(t, z*) to a state.

    mode "exact" keeps the doubly-lowering noise-integral term;
    "approx_no_o5" drops it. At t = 0 the result is the zero vector.
    """
    if mode not in ("exact", "approx_no_o5"):
        raise ValueError(f"mode must be 'exact' or 'approx_no_o5', got {mode!r}")
    ops = _Ops(tables.params)
    fv = tables.f_values(t)
    out = np.tensordot(fv, ops.o14, axes=1) @ psi
    if mode == "exact":
        i5 = F5NoiseIntegral(tables, noise)
        out = out + (1j * i5.value(t)) * (ops.o5 @ psi)
    return out


@dataclass(frozen=True)
class ShiftedNoiseState:
    """Memory of the noise shift int_0^t conj(alpha)(t,s) <Ldag>_s ds.

    For the OU kernel the integral obeys the exact one-step recursion
    S(t+dt) = exp(-gamma dt) S(t) + trapezoid increment, so only the current
    value is kept; tabulated kernels carry the full <Ldag> history and
    requadrature each step.
    """

    kernel: KernelSpec
    dt: float
    s_value: complex = 0.0 + 0.0j
    history: tuple = ()

    @classmethod
    def start(cls, kernel: KernelSpec, dt: float, expld0: complex) -> "ShiftedNoiseState":
        if isinstance(kernel, OUKernel):
            return cls(kernel, dt)
        return cls(kernel, dt, 0.0 + 0.0j, (complex(expld0),))

    def _ou_next(self, expld_now: complex, expld_next: complex) -> complex:
        g = self.kernel.gamma
        decay = np.exp(-g * self.dt)
        a0 = 0.5 * g
        return decay * self.s_value + 0.5 * self.dt * (a0 * decay * expld_now + a0 * expld_next)

    def _table_quad(self, expld_next: complex) -> complex:
        vals = np.array(self.history + (complex(expld_next),))
        n = vals.size - 1
        grid = self.dt * np.arange(n + 1)
        w = np.full(n + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        alpha = np.conj(kernel_eval(self.kernel, grid[-1], grid))
        return complex(np.dot(w * alpha, vals))

    def predicted(self, expld_now: complex, expld_next: complex) -> complex:
        """Shift value at t + dt using a provisional endpoint mean."""
        if isinstance(self.kernel, OUKernel):
            return self._ou_next(expld_now, expld_next)
        return self._table_quad(expld_next)

    def advanced(self, expld_now: complex, expld_next: complex) -> "ShiftedNoiseState":
        """Commit the step with the settled endpoint mean."""
        if isinstance(self.kernel, OUKernel):
            return replace(self, s_value=self._ou_next(expld_now, expld_next))
        new_hist = self.history + (complex(expld_next),)
        return replace(
            self, s_value=self._table_quad(expld_next), history=new_hist
        )


def _stage_matrix(ops: _Ops, fv: np.ndarray, z: complex, i5val: complex) -> np.ndarray:
    return ops.minus_ih + z * ops.l - np.tensordot(fv, ops.ld_o14, axes=1) - (
        1j * i5val
    ) * ops.ld_o5


def step_linear(
    psi: np.ndarray,
    t: float,
    tables: CoeffTables,
    noise: NoisePath,
    *,
    drop_o5: bool = False,
    _ops: _Ops | None = None,
    _nv: _NoiseView | None = None,
    _i5: F5NoiseIntegral | None = None,
) -> np.ndarray:
    """One Heun step of the linear equation from t to t + 2 dt_half."""
    ops = _ops if _ops is not None else _Ops(tables.params)
    dt = 2.0 * noise.dt_half
    nv = _nv if _nv is not None else _NoiseView(noise, t + dt, dt)
    use_o5 = not drop_o5
    i5 = _i5 if _i5 is not None else F5NoiseIntegral(tables, noise)

    m1 = _stage_matrix(ops, tables.f_values(t), nv.at(t), i5.value(t) if use_o5 else 0.0)
    k1 = m1 @ psi
    t2 = t + dt
    m2 = _stage_matrix(
        ops, tables.f_values(t2), nv.at(t2), i5.value(t2) if use_o5 else 0.0
    )
    k2 = m2 @ (psi + dt * k1)
    return psi + (0.5 * dt) * (k1 + k2)


def _nonlinear_drift(
    ops: _Ops,
    psi: np.ndarray,
    fv: np.ndarray,
    ztilde: complex,
    i5val: complex,
):
    """Drift of the norm-preserving equation; also returns <Ldag> of psi."""
    n2 = np.vdot(psi, psi).real
    lpsi = ops.l @ psi
    exp_l = np.vdot(psi, lpsi) / n2
    obar_psi = np.tensordot(fv, ops.o14, axes=1) @ psi + (1j * i5val) * (ops.o5 @ psi)
    v = ops.ld @ obar_psi - np.conj(exp_l) * obar_psi
    mean_v = np.vdot(psi, v) / n2
    drift = ops.minus_ih @ psi + ztilde * (lpsi - exp_l * psi) - v + mean_v * psi
    return drift, np.conj(exp_l)


def step_nonlinear(
    psi: np.ndarray,
    t: float,
    tables: CoeffTables,
    noise: NoisePath,
    shifted: ShiftedNoiseState,
    *,
    drop_o5: bool = False,
    renormalize: bool = True,
    _ops: _Ops | None = None,
    _nv: _NoiseView | None = None,
    _i5: F5NoiseIntegral | None = None,
):
    """One Heun step of the norm-preserving equation; returns (psi', shifted').

    Stage means are recomputed at each stage; the noise-shift endpoint uses
    the predictor state's mean at stage 2 and is committed with the corrected
    state's mean. The state is renormalized after the full step unless
    renormalize is False (a diagnostic for measuring raw drift).
    """
    ops = _ops if _ops is not None else _Ops(tables.params)
    dt = 2.0 * noise.dt_half
    nv = _nv if _nv is not None else _NoiseView(noise, t + dt, dt)
    use_o5 = not drop_o5
    i5 = _i5 if _i5 is not None else F5NoiseIntegral(tables, noise)

    i5_1 = i5.value(t) if use_o5 else 0.0
    k1, expld1 = _nonlinear_drift(ops, psi, tables.f_values(t), nv.at(t) + shifted.s_value, i5_1)
    psi_p = psi + dt * k1

    t2 = t + dt
    n2p = np.vdot(psi_p, psi_p).real
    if not np.isfinite(n2p) or n2p == 0.0:
        raise TrajectoryBlowupError(t2)
    expld_pred = np.conj(np.vdot(psi_p, ops.l @ psi_p) / n2p)
    s_pred = shifted.predicted(expld1, expld_pred)
    i5_2 = i5.value(t2) if use_o5 else 0.0
    k2, _ = _nonlinear_drift(ops, psi_p, tables.f_values(t2), nv.at(t2) + s_pred, i5_2)

    out = psi + (0.5 * dt) * (k1 + k2)
    nrm2 = np.vdot(out, out).real
    if not np.isfinite(nrm2) or nrm2 == 0.0:
        raise TrajectoryBlowupError(t2)
    if renormalize:
        out = out / np.sqrt(nrm2)
    expld_new = np.conj(np.vdot(out, ops.l @ out) / np.vdot(out, out).real)
    return out, shifted.advanced(expld1, expld_new)


def _record_point(ops: _Ops, psi: np.ndarray):
    n2 = np.vdot(psi, psi).real
    lpsi = ops.l @ psi
    exp_l = np.vdot(psi, lpsi) / n2
    exp_l2 = np.vdot(psi, ops.l @ lpsi) / n2
    c = PSI_BASIS @ psi
    return np.sqrt(n2), complex(exp_l), c, abs(exp_l2 - exp_l * exp_l)


def run_trajectory(cfg: TrajectoryConfig, tables: CoeffTables, noise: NoisePath) -> Trajectory:
    """Integrate one trajectory and record every stride-th step.

    The noise grid must be the half-step grid of cfg.dt and cover the horizon;
    coefficient tables must cover it too. Raises TrajectoryBlowupError if the
    state stops being finite.
    """
    if cfg.t_final > tables.t_final + 1e-9:
        raise ValueError(
            f"tables end at {tables.t_final:g}, before t_final {cfg.t_final:g}"
        )
    ops = _Ops(tables.params)
    nv = _NoiseView(noise, cfg.t_final, cfg.dt)
    use_o5 = not cfg.drop_noise_operator
    i5 = F5NoiseIntegral(tables, noise) if use_o5 else None
    n_steps = cfg.n_steps

    psi = cfg.psi0.copy()
    if cfg.method == "nonlinear":
        _, expld0, _, _ = _record_point(ops, psi)
        shifted = ShiftedNoiseState.start(tables.kernel, cfg.dt, np.conj(expld0))
    else:
        shifted = None

    n_rec = n_steps // cfg.stride + 1 if n_steps else 1
    times = np.empty(n_rec)
    states = np.empty((n_rec, 4), dtype=complex) if cfg.record != "observables" else None
    norm = np.empty(n_rec)
    exp_l = np.empty(n_rec, dtype=complex)
    c_ser = np.empty((n_rec, 4), dtype=complex)
    fluct = np.empty(n_rec)

    def record(idx: int, t: float) -> None:
        times[idx] = t
        if states is not None:
            states[idx] = psi
        norm[idx], exp_l[idx], c_ser[idx], fluct[idx] = _record_point(ops, psi)

    record(0, 0.0)
    rec_idx = 1
    # Overflow surfaces as TrajectoryBlowupError, not numpy warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            t = k * cfg.dt
            if cfg.method == "linear":
                psi = step_linear(
                    psi, t, tables, noise, drop_o5=cfg.drop_noise_operator,
                    _ops=ops, _nv=nv, _i5=i5,
                )
                n2 = np.vdot(psi, psi).real
                if not np.isfinite(n2):
                    raise TrajectoryBlowupError(t + cfg.dt)
            else:
                psi, shifted = step_nonlinear(
                    psi, t, tables, noise, shifted, drop_o5=cfg.drop_noise_operator,
                    _ops=ops, _nv=nv, _i5=i5,
                )
            if (k + 1) % cfg.stride == 0:
                record(rec_idx, (k + 1) * cfg.dt)
                rec_idx += 1

    return Trajectory(
        times, states, norm, exp_l, c_ser, fluct, cfg.method,
        noise.master_seed, noise.stream_index,
    )


def symmetric_basis_oracle(
    cfg: TrajectoryConfig, tables: CoeffTables, noise: NoisePath
) -> Trajectory:
    """Independent linear-mode integrator in the collective basis.

    Valid only for omega_A = omega_B and kappa_A = kappa_B = 1, where the
    four collective amplitudes close on themselves:

        dc1 = [-i(2w + Jz) - 2 F1 - 2 F3] c1
        dc2 = [-i(Jxy - Jz) - 2 F1 + 2 F3] c2 + sqrt2 z* c1 - 2 sqrt2 i I5 c1
        dc3 = +i(Jxy + Jz) c3
        dc4 = -i(Jz - 2w) c4 + sqrt2 z* c2

    with I5 the same noise quadrature the state-space stepper uses. Uses the
    same Heun scheme and noise nodes, so it reconstructs the step_linear state
    up to rounding. Returns a Trajectory whose states are the reconstruction.
    """
    p = tables.params
    if not (p.omega_a == p.omega_b and p.kappa_a == 1.0 and p.kappa_b == 1.0):
        raise ValueError(
            "collective-basis reduction needs omega_a == omega_b and "
            "kappa_a == kappa_b == 1"
        )
    if cfg.method != "linear":
        raise ValueError("the collective-basis reduction integrates the linear equation")
    if cfg.t_final > tables.t_final + 1e-9:
        raise ValueError("tables end before t_final")

    omega, jxy, jz = p.omega_a, p.j_xy, p.j_z
    nv = _NoiseView(noise, cfg.t_final, cfg.dt)
    i5 = F5NoiseIntegral(tables, noise)
    use_o5 = not cfg.drop_noise_operator

    def rhs(c: np.ndarray, t: float) -> np.ndarray:
        f1, _, f3, _ = tables.f_values(t)
        z = nv.at(t)
        i5v = i5.value(t) if use_o5 else 0.0
        out = np.empty(4, dtype=complex)
        out[0] = (-1j * (2 * omega + jz) - 2 * f1 - 2 * f3) * c[0]
        out[1] = (
            (-1j * (jxy - jz) - 2 * f1 + 2 * f3) * c[1]
            + _SQRT2 * z * c[0]
            - 2 * _SQRT2 * (1j * i5v) * c[0]
        )
        out[2] = 1j * (jxy + jz) * c[2]
        out[3] = -1j * (jz - 2 * omega) * c[3] + _SQRT2 * z * c[1]
        return out

    n_steps = cfg.n_steps
    c = PSI_BASIS @ cfg.psi0
    n_rec = n_steps // cfg.stride + 1 if n_steps else 1
    times = np.empty(n_rec)
    c_ser = np.empty((n_rec, 4), dtype=complex)
    times[0] = 0.0
    c_ser[0] = c
    rec_idx = 1
    for k in range(n_steps):
        t = k * cfg.dt
        k1 = rhs(c, t)
        k2 = rhs(c + cfg.dt * k1, t + cfg.dt)
        c = c + (0.5 * cfg.dt) * (k1 + k2)
        if not np.all(np.isfinite(c)):
            raise TrajectoryBlowupError(t + cfg.dt)
        if (k + 1) % cfg.stride == 0:
            times[rec_idx] = (k + 1) * cfg.dt
            c_ser[rec_idx] = c
            rec_idx += 1

    states = c_ser @ PSI_BASIS  # real orthogonal basis, so transpose of inverse
    ops = _Ops(p)
    norm = np.empty(n_rec)
    exp_l = np.empty(n_rec, dtype=complex)
    fluct = np.empty(n_rec)
    for i in range(n_rec):
        norm[i], exp_l[i], _, fluct[i] = _record_point(ops, states[i])
    return Trajectory(
        times, states, norm, exp_l, c_ser, fluct, "linear",
        noise.master_seed, noise.stream_index,
    )


def dump_trajectory_csv(traj: Trajectory, fh) -> None:
    """Write (t, norm, Re/Im c1..c4, fluctuation) rows."""
    cols = ["t", "norm"]
    for j in range(1, 5):
        cols += [f"re_c{j}", f"im_c{j}"]
    cols.append("fluct_l")
    fh.write(",".join(cols) + "\n")
    for i, t in enumerate(traj.times):
        row = [repr(float(t)), repr(float(traj.norm[i]))]
        for j in range(4):
            row += [repr(float(traj.c[i, j].real)), repr(float(traj.c[i, j].imag))]
        row.append(repr(float(traj.fluct_l[i])))
        fh.write(",".join(row) + "\n")
