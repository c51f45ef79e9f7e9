"""Ensemble averaging over noise realizations and physical observables.

run_ensemble drives blocks of trajectories through a vectorized version of
the single-trajectory Heun steppers: a block of states is one (m, 4) array,
so every stage is a handful of matrix products regardless of block size.
Trajectory i always draws its noise from stream (master_seed, i), blocks are
contiguous index ranges fixed by n_traj alone, and block sums are merged in
block order, so results are independent of the worker count.

Observables: Wootters concurrence, purity, Lindblad-operator fluctuation,
collective-basis coefficients, and trailing-window steady-state extraction
with error bars. Density matrices recovered from the linear unraveling keep
their raw trace (a mean-one martingale, reported with its standard error);
concurrence and purity are evaluated on the trace-normalized matrix.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from multiprocessing import get_context

import numpy as np

from .algebra import PSI_BASIS, ModelParams, build_lowering
from .fields import CoeffTables
from .noise import NoisePath, OUKernel, RngStream, TableKernel, kernel_eval, sample_cholesky_path, sample_ou_path
from .oracles import DensityMatrixSeries
from .trajectory import TrajectoryConfig

__all__ = [
    "EnsembleConfig",
    "EnsembleError",
    "ObservableSeries",
    "run_ensemble",
    "concurrence",
    "purity",
    "fluctuation_L",
    "coefficients_c",
    "SteadyValue",
    "steady_extract",
    "write_ensemble_csv",
]

_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]])
_SYSY = np.kron(_SY, _SY).real


class EnsembleError(RuntimeError):
    """A member trajectory failed; carries the noise stream index."""

    def __init__(self, stream_index: int, t: float):
        self.stream_index = stream_index
        self.t = t
        super().__init__(
            f"trajectory with noise stream index {stream_index} "
            f"lost finiteness at t={t:g}"
        )


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size, seed, and the per-trajectory run description.

    stride, when given, overrides the stride inside traj for recording.
    """

    traj: TrajectoryConfig
    n_traj: int
    master_seed: int
    stride: int | None = None

    def __post_init__(self) -> None:
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ValueError("master_seed must be a non-negative integer")
        self.effective_traj()

    def effective_traj(self) -> TrajectoryConfig:
        if self.stride is None:
            return self.traj
        return replace(self.traj, stride=self.stride)


@dataclass
class ObservableSeries:
    """Per-time observables of the recovered density matrix.

    populations and coherences come from the trace-normalized matrix;
    trace is the raw ensemble-mean trace (identically 1 in nonlinear mode,
    a martingale estimate in linear mode). entry_stderr holds the per-entry
    Monte Carlo standard error of the raw matrix; concurrence and purity
    standard errors come from block (batch) means. block_rhos keeps the raw
    per-block mean matrices for downstream error analysis.
    """

    times: np.ndarray
    concurrence: np.ndarray
    concurrence_stderr: np.ndarray
    purity: np.ndarray
    purity_stderr: np.ndarray
    populations: np.ndarray
    coherences: np.ndarray
    trace: np.ndarray
    trace_stderr: np.ndarray
    entry_stderr: np.ndarray
    n_traj: int
    mode: str
    block_rhos: np.ndarray | None = None
    block_counts: np.ndarray | None = None


def concurrence(
    rho: np.ndarray,
    trace_tol: float = 0.05,
    psd_tol: float = 1e-6,
) -> float:
    """Wootters concurrence of a two-qubit density matrix.

    The input trace may deviate from 1 by at most trace_tol (the matrix is
    normalized before the construction); eigenvalues of rho may not be more
    negative than -psd_tol. The spectrum of rho rho~ must be real to 1e-8
    and non-negative to 1e-10; both are asserted, not repaired.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("density matrix must be 4x4")
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    if herm > 1e-8:
        raise ValueError(f"not Hermitian: max deviation {herm:.3e}")
    tr = float(np.trace(rho).real)
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"trace {tr!r} deviates from 1 beyond {trace_tol:g}")
    rho = 0.5 * (rho + rho.conj().T) / tr
    lo = float(np.linalg.eigvalsh(rho).min())
    if lo < -psd_tol:
        raise ValueError(f"not positive semidefinite: eigenvalue {lo:.3e}")
    rho_tilde = _SYSY @ rho.conj() @ _SYSY
    lam2 = np.linalg.eigvals(rho @ rho_tilde)
    worst_im = float(np.max(np.abs(lam2.imag)))
    if worst_im > 1e-8:
        raise ValueError(f"spectrum not real: |Im| = {worst_im:.3e}")
    re = lam2.real
    if re.min() < -1e-10:
        raise ValueError(f"spectrum not non-negative: eigenvalue {re.min():.3e}")
    lam = np.sqrt(np.clip(re, 0.0, None))
    lam.sort()
    return float(max(0.0, lam[3] - lam[2] - lam[1] - lam[0]))


def purity(rho: np.ndarray) -> float:
    """tr(rho^2)."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("density matrix must be 4x4")
    return float(np.trace(rho @ rho).real)


def fluctuation_L(psi: np.ndarray, p: ModelParams) -> float:
    """|<L^2> - <L>^2| of the normalized state."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (4,):
        raise ValueError("state must be a length-4 vector")
    n2 = float(np.vdot(psi, psi).real)
    if n2 == 0.0:
        raise ValueError("null state has no expectation values")
    l = build_lowering(p)
    lpsi = l @ psi
    exp_l = np.vdot(psi, lpsi) / n2
    exp_l2 = np.vdot(psi, l @ lpsi) / n2
    return float(abs(exp_l2 - exp_l * exp_l))


def coefficients_c(psi: np.ndarray) -> np.ndarray:
    """Amplitudes (c1..c4) on the collective basis (see algebra.PSI_BASIS)."""
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (4,):
        raise ValueError("state must be a length-4 vector")
    return PSI_BASIS @ psi


@dataclass(frozen=True)
class SteadyValue:
    value: float
    stderr: float
    stationary: bool
    n_points: int


def steady_extract(values, window: float = 0.2) -> SteadyValue:
    """Mean and standard error over the trailing window of a series.

    window is the trailing fraction of points used; it must lie in (0, 0.5]
    and cover at least 10 points. stationary is False when the two halves of
    the window differ by more than 3 combined standard errors (a trend
    detector, deliberately blunt).
    """
    if not 0.0 < window <= 0.5:
        raise ValueError("window fraction must lie in (0, 0.5]")
    vals = np.asarray(values, dtype=float).ravel()
    n_tail = int(round(window * vals.size))
    if n_tail < 10:
        raise ValueError(
            f"trailing window has {n_tail} points, need at least 10"
        )
    tail = vals[-n_tail:]
    mean = float(tail.mean())
    se = float(tail.std(ddof=1) / np.sqrt(n_tail))
    half = n_tail // 2
    a, b = tail[:half], tail[half:]
    se_a = a.std(ddof=1) / np.sqrt(a.size)
    se_b = b.std(ddof=1) / np.sqrt(b.size)
    gap = abs(float(a.mean()) - float(b.mean()))
    stationary = bool(gap <= 3.0 * float(np.hypot(se_a, se_b)))
    return SteadyValue(mean, se, stationary, n_tail)


# ---------------------------------------------------------------------------
# Batched stepping internals. One block of trajectories advances as a single
# (m, 4) array; operators act from the right as transposes. The arithmetic
# mirrors trajectory.step_linear / step_nonlinear stage for stage.

_CTX: dict = {}


class _BatchOps:
    def __init__(self, tables: CoeffTables, tcfg: TrajectoryConfig):
        from .algebra import basis_operator, build_hamiltonian

        p = tables.params
        h = build_hamiltonian(p)
        l = build_lowering(p)
        ld = l.conj().T
        o14 = np.stack([basis_operator(j) for j in (1, 2, 3, 4)])
        o5 = basis_operator(5)
        self.lt = l.T.copy()
        self.ldt = l.conj().copy()
        self.miht = (-1j * h).T.copy()
        self.o5t = o5.T.copy()
        self.ldo5t = (ld @ o5).T.copy()
        n_steps = tcfg.n_steps
        ts = tcfg.dt * np.arange(n_steps + 1)
        self.fv = np.stack([tables.f_values(t) for t in ts])
        self.obt = np.stack([np.tensordot(f, o14, axes=1).T for f in self.fv])
        ld_o14 = np.stack([ld @ o for o in o14])
        self.mdett = np.stack(
            [(-1j * h - np.tensordot(f, ld_o14, axes=1)).T for f in self.fv]
        )


class _BatchF5:
    """Block version of trajectory.F5NoiseIntegral: same quadrature, one
    prefix-sum array per table row covering every trajectory in the block."""

    def __init__(self, tables: CoeffTables, z_block: np.ndarray, dt_half: float):
        self.m_traj = z_block.shape[0]
        self.enabled = tables.F5 is not None and tables.t_grid.size > 1
        if not self.enabled:
            return
        self.dc = tables.dc
        self.s_grid = tables.t_grid
        self.f5 = tables.F5
        self.n_rows = tables.t_grid.size
        self.dt_half = dt_half
        self.z = z_block
        self._rows: dict = {}

    def _row(self, r: int):
        got = self._rows.get(r)
        if got is not None:
            return got
        n_max = min(int(round((r + 1) * self.dc / self.dt_half)) + 1, self.z.shape[1])
        nodes = self.dt_half * np.arange(n_max)
        vals = np.interp(nodes, self.s_grid, self.f5[r].real) + 1j * np.interp(
            nodes, self.s_grid, self.f5[r].imag
        )
        csum = np.cumsum(vals[None, :] * self.z[:, :n_max], axis=1)
        self._rows[r] = (vals, csum)
        if len(self._rows) > 3:
            for key in [k for k in self._rows if k < r - 1]:
                del self._rows[key]
        return self._rows[r]

    def value_at_node(self, node: int) -> np.ndarray:
        out = np.zeros(self.m_traj, dtype=complex)
        if not self.enabled or node == 0:
            return out
        t = node * self.dt_half
        xr = t / self.dc
        i = min(int(xr + 1e-9), self.n_rows - 2)
        w = min(max(xr - i, 0.0), 1.0)
        for r, wt in ((i, 1.0 - w), (i + 1, w)):
            if wt == 0.0:
                continue
            vals, csum = self._row(r)
            out += wt * (
                csum[:, node]
                - 0.5 * (vals[0] * self.z[:, 0] + vals[node] * self.z[:, node])
            )
        return out * self.dt_half


class _BatchShift:
    """Noise-shift recursion for a block; matches ShiftedNoiseState."""

    def __init__(self, kernel, dt: float, n_steps: int, m: int, expld0: np.ndarray):
        self.kernel = kernel
        self.dt = dt
        self.s = np.zeros(m, dtype=complex)
        self.ou = isinstance(kernel, OUKernel)
        if self.ou:
            self.decay = float(np.exp(-kernel.gamma * dt))
            self.a0 = 0.5 * kernel.gamma
        else:
            self.hist = np.empty((n_steps + 1, m), dtype=complex)
            self.hist[0] = expld0
            self.n_hist = 1

    def _ou_next(self, e_now: np.ndarray, e_next: np.ndarray) -> np.ndarray:
        return self.decay * self.s + 0.5 * self.dt * (
            self.a0 * self.decay * e_now + self.a0 * e_next
        )

    def _table_quad(self, e_next: np.ndarray) -> np.ndarray:
        n = self.n_hist
        grid = self.dt * np.arange(n + 1)
        w = np.full(n + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        alpha = np.conj(kernel_eval(self.kernel, grid[-1], grid))
        coef = w * alpha
        return coef[:n] @ self.hist[:n] + coef[n] * e_next

    def predicted(self, e_now: np.ndarray, e_next: np.ndarray) -> np.ndarray:
        if self.ou:
            return self._ou_next(e_now, e_next)
        return self._table_quad(e_next)

    def advance(self, e_now: np.ndarray, e_next: np.ndarray) -> None:
        if self.ou:
            self.s = self._ou_next(e_now, e_next)
        else:
            self.s = self._table_quad(e_next)
            self.hist[self.n_hist] = e_next
            self.n_hist += 1


@dataclass
class _BlockResult:
    proj: np.ndarray
    sq: np.ndarray
    w: np.ndarray
    w2: np.ndarray
    count: int


def _block_noise(lo: int, hi: int, tcfg: TrajectoryConfig) -> np.ndarray:
    ctx = _CTX
    dt_half = 0.5 * tcfg.dt
    paths = ctx["noise_paths"]
    rows = []
    for i in range(lo, hi):
        if paths is not None:
            path = paths[i]
            if not path.uniform:
                raise ValueError("injected noise paths must be uniform")
            if abs(2.0 * path.dt_half - tcfg.dt) > 1e-9 * tcfg.dt:
                raise ValueError(
                    f"injected path {i} spacing {path.dt_half!r} is not half "
                    f"the step {tcfg.dt!r}"
                )
            if path.t_final < tcfg.t_final - 1e-9:
                raise ValueError(f"injected path {i} ends before the horizon")
        else:
            kernel = ctx["tables"].kernel
            stream = RngStream(ctx["cfg"].master_seed, i)
            if isinstance(kernel, TableKernel):
                n_nodes = int(round(tcfg.t_final / dt_half))
                grid = dt_half * np.arange(n_nodes + 1)
                path = sample_cholesky_path(kernel, grid, stream)
            else:
                path = sample_ou_path(kernel, tcfg.t_final, dt_half, stream)
        rows.append(path.samples)
    n_nodes = 2 * int(round(tcfg.t_final / tcfg.dt)) + 1
    for i, r in enumerate(rows):
        if r.size < n_nodes:
            raise ValueError(f"noise path {lo + i} has {r.size} nodes, need {n_nodes}")
    return np.stack([r[:n_nodes] for r in rows])


def _first_bad_row(psi: np.ndarray, lo: int, t: float) -> None:
    ok = np.isfinite(psi).all(axis=1)
    if not ok.all():
        raise EnsembleError(lo + int(np.argmin(ok)), t)


def _run_block(span) -> _BlockResult:
    lo, hi = span
    ctx = _CTX
    cfg: EnsembleConfig = ctx["cfg"]
    tables: CoeffTables = ctx["tables"]
    tcfg = cfg.effective_traj()
    m = hi - lo
    dt = tcfg.dt
    n_steps = tcfg.n_steps
    stride = tcfg.stride
    use_o5 = not tcfg.drop_noise_operator
    nonlinear = tcfg.method == "nonlinear"

    z = _block_noise(lo, hi, tcfg)
    ops: _BatchOps = ctx["ops"]
    f5 = _BatchF5(tables, z, 0.5 * dt) if use_o5 else None

    psi = np.tile(tcfg.psi0, (m, 1))

    n_rec = n_steps // stride + 1 if n_steps else 1
    proj_sum = np.zeros((n_rec, 4, 4), dtype=complex)
    sq_sum = np.zeros((n_rec, 4, 4))
    w_sum = np.zeros(n_rec)
    w2_sum = np.zeros(n_rec)

    def record(idx: int) -> None:
        proj = psi[:, :, None] * psi.conj()[:, None, :]
        proj_sum[idx] = proj.sum(axis=0)
        sq_sum[idx] = (proj.real**2 + proj.imag**2).sum(axis=0)
        tr = (psi.real**2 + psi.imag**2).sum(axis=1)
        w_sum[idx] = tr.sum()
        w2_sum[idx] = (tr**2).sum()

    def expl_of(state: np.ndarray, n2: np.ndarray) -> np.ndarray:
        return np.einsum("ni,ni->n", state.conj(), state @ ops.lt) / n2

    def drift(state, k_stage, ztilde, i5v):
        lpsi = state @ ops.lt
        n2 = (state.real**2 + state.imag**2).sum(axis=1)
        expl = np.einsum("ni,ni->n", state.conj(), lpsi) / n2
        obar = state @ ops.obt[k_stage]
        if use_o5:
            obar = obar + (1j * i5v)[:, None] * (state @ ops.o5t)
        v = obar @ ops.ldt - expl.conj()[:, None] * obar
        meanv = np.einsum("ni,ni->n", state.conj(), v) / n2
        out = (
            state @ ops.miht
            + ztilde[:, None] * (lpsi - expl[:, None] * state)
            - v
            + meanv[:, None] * state
        )
        return out, expl.conj()

    if nonlinear:
        n2_0 = (psi.real**2 + psi.imag**2).sum(axis=1)
        shift = _BatchShift(
            tables.kernel, dt, n_steps, m, expl_of(psi, n2_0).conj()
        )
    zeros = np.zeros(m, dtype=complex)

    record(0)
    rec_idx = 1
    # Overflow surfaces as EnsembleError, not numpy warnings.
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            t2 = (k + 1) * dt
            z1 = z[:, 2 * k]
            z2 = z[:, 2 * k + 2]
            if use_o5:
                i5_1 = f5.value_at_node(2 * k)
                i5_2 = f5.value_at_node(2 * k + 2)
            else:
                i5_1 = i5_2 = zeros
            if nonlinear:
                k1, expld1 = drift(psi, k, z1 + shift.s, i5_1)
                psi_p = psi + dt * k1
                n2p = (psi_p.real**2 + psi_p.imag**2).sum(axis=1)
                if not np.all(np.isfinite(n2p) & (n2p > 0.0)):
                    bad = ~(np.isfinite(n2p) & (n2p > 0.0))
                    raise EnsembleError(lo + int(np.argmax(bad)), t2)
                expld_p = expl_of(psi_p, n2p).conj()
                s_pred = shift.predicted(expld1, expld_p)
                k2, _ = drift(psi_p, k + 1, z2 + s_pred, i5_2)
                psi = psi + (0.5 * dt) * (k1 + k2)
                nrm2 = (psi.real**2 + psi.imag**2).sum(axis=1)
                if not np.all(np.isfinite(nrm2) & (nrm2 > 0.0)):
                    bad = ~(np.isfinite(nrm2) & (nrm2 > 0.0))
                    raise EnsembleError(lo + int(np.argmax(bad)), t2)
                psi = psi / np.sqrt(nrm2)[:, None]
                expld_new = expl_of(psi, (psi.real**2 + psi.imag**2).sum(axis=1)).conj()
                shift.advance(expld1, expld_new)
            else:
                k1 = (
                    psi @ ops.mdett[k]
                    + z1[:, None] * (psi @ ops.lt)
                    - (1j * i5_1)[:, None] * (psi @ ops.ldo5t)
                )
                pred = psi + dt * k1
                k2 = (
                    pred @ ops.mdett[k + 1]
                    + z2[:, None] * (pred @ ops.lt)
                    - (1j * i5_2)[:, None] * (pred @ ops.ldo5t)
                )
                psi = psi + (0.5 * dt) * (k1 + k2)
                _first_bad_row(psi, lo, t2)
            if (k + 1) % stride == 0:
                record(rec_idx)
                rec_idx += 1
    return _BlockResult(proj_sum, sq_sum, w_sum, w2_sum, m)


def _block_spans(n: int, k: int) -> list:
    edges = [(b * n) // k for b in range(k + 1)]
    return [(edges[b], edges[b + 1]) for b in range(k) if edges[b + 1] > edges[b]]


def run_ensemble(
    cfg: EnsembleConfig,
    tables: CoeffTables,
    p: ModelParams | None = None,
    workers: int = 1,
    noise_paths=None,
):
    """Average n_traj trajectories; returns (DensityMatrixSeries, ObservableSeries).

    Trajectory i reads noise stream (master_seed, i); noise_paths, when given,
    replaces the seeded sampling with caller-supplied paths (one per
    trajectory, uniform half-step grids). The reduction runs over at most 10
    contiguous index blocks merged in ascending order, so the output is
    bitwise independent of workers. A non-finite state raises EnsembleError
    naming the stream index.
    """
    if p is not None and p != tables.params:
        raise ValueError("explicit params disagree with the coefficient tables")
    tcfg = cfg.effective_traj()
    if tcfg.t_final > tables.t_final + 1e-9:
        raise ValueError(
            f"tables end at {tables.t_final:g}, before t_final {tcfg.t_final:g}"
        )
    if noise_paths is not None and len(noise_paths) != cfg.n_traj:
        raise ValueError("need exactly one injected noise path per trajectory")

    spans = _block_spans(cfg.n_traj, min(10, cfg.n_traj))
    _CTX.clear()
    _CTX.update(
        cfg=cfg,
        tables=tables,
        noise_paths=noise_paths,
        ops=_BatchOps(tables, tcfg),
    )
    try:
        if workers <= 1 or len(spans) == 1:
            results = [_run_block(s) for s in spans]
        else:
            try:
                mp = get_context("fork")
            except ValueError:
                results = [_run_block(s) for s in spans]
            else:
                with ProcessPoolExecutor(
                    max_workers=min(workers, len(spans)), mp_context=mp
                ) as ex:
                    results = list(ex.map(_run_block, spans))
    finally:
        _CTX.clear()

    n = cfg.n_traj
    proj = np.zeros_like(results[0].proj)
    sq = np.zeros_like(results[0].sq)
    w = np.zeros_like(results[0].w)
    w2 = np.zeros_like(results[0].w2)
    for r in results:
        proj += r.proj
        sq += r.sq
        w += r.w
        w2 += r.w2
    rho_series = proj / n
    n_rec = rho_series.shape[0]
    times = tcfg.dt * tcfg.stride * np.arange(n_rec)

    trace = np.einsum("tii->t", rho_series).real
    var_w = np.maximum(w2 / n - (w / n) ** 2, 0.0)
    trace_stderr = np.sqrt(var_w / n)
    var_entry = np.maximum(sq / n - np.abs(rho_series) ** 2, 0.0)
    entry_stderr = np.sqrt(var_entry / n)

    rho_norm = rho_series / trace[:, None, None]
    conc = np.empty(n_rec)
    pur = np.empty(n_rec)
    for i in range(n_rec):
        conc[i] = concurrence(rho_norm[i])
        pur[i] = purity(rho_norm[i])

    k_blocks = len(results)
    block_rhos = np.stack([r.proj / r.count for r in results])
    block_counts = np.array([r.count for r in results])
    if k_blocks >= 2:
        cb = np.empty((k_blocks, n_rec))
        pb = np.empty((k_blocks, n_rec))
        for b, r in enumerate(results):
            for i in range(n_rec):
                rb = block_rhos[b, i]
                trb = float(np.trace(rb).real)
                rb = rb / trb
                cb[b, i] = concurrence(rb)
                pb[b, i] = purity(rb)
        conc_se = cb.std(axis=0, ddof=1) / np.sqrt(k_blocks)
        pur_se = pb.std(axis=0, ddof=1) / np.sqrt(k_blocks)
    else:
        conc_se = np.zeros(n_rec)
        pur_se = np.zeros(n_rec)

    pops = np.einsum("tii->ti", rho_norm).real
    iu, ju = np.triu_indices(4, k=1)
    cohs = rho_norm[:, iu, ju]

    dens = DensityMatrixSeries(times, rho_series)
    obs = ObservableSeries(
        times,
        conc,
        conc_se,
        pur,
        pur_se,
        pops,
        cohs,
        trace,
        trace_stderr,
        entry_stderr,
        n,
        tcfg.method,
        block_rhos,
        block_counts,
    )
    return dens, obs


def write_ensemble_csv(fh, dens: DensityMatrixSeries, obs: ObservableSeries,
                       metadata: dict | None = None) -> None:
    """One row per recorded time; '# key = value' metadata lines lead.

    Columns: t, concurrence, concurrence_stderr, purity, the raw density
    matrix entries Re/Im in row-major order, then the raw trace.
    """
    if dens.times.shape != obs.times.shape or not np.array_equal(dens.times, obs.times):
        raise ValueError("density and observable series disagree on times")
    for key in sorted(metadata or {}):
        fh.write(f"# {key} = {metadata[key]}\n")
    cols = ["t", "concurrence", "concurrence_stderr", "purity"]
    for i in range(1, 5):
        for j in range(1, 5):
            cols += [f"re_rho{i}{j}", f"im_rho{i}{j}"]
    cols.append("trace")
    fh.write(",".join(cols) + "\n")
    for idx, t in enumerate(obs.times):
        row = [
            repr(float(t)),
            repr(float(obs.concurrence[idx])),
            repr(float(obs.concurrence_stderr[idx])),
            repr(float(obs.purity[idx])),
        ]
        for i in range(4):
            for j in range(4):
                row.append(repr(float(dens.rhos[idx, i, j].real)))
                row.append(repr(float(dens.rhos[idx, i, j].imag)))
        row.append(repr(float(obs.trace[idx])))
        fh.write(",".join(row) + "\n")
