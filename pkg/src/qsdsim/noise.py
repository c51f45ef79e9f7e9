"""Colored complex Gaussian noise for the diffusion unraveling.

The driving process z*_t is a zero-mean complex Gaussian with
M[z*_t z_s] = alpha(t, s) and M[z_t z_s] = 0. Paths store the z* samples on a
uniform half-step grid so an explicit two-stage integrator never interpolates
noise: stage times land on even nodes and quadratures read every node.

Two samplers are provided. The recursive one is exact for the
Ornstein-Uhlenbeck kernel alpha(t,s) = (gamma/2) exp(-gamma |t-s|); the
Cholesky one factorizes the covariance on an arbitrary grid and serves as a
cross-method oracle (and handles tabulated kernels).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.signal import lfilter

__all__ = [
    "OUKernel",
    "TableKernel",
    "KernelSpec",
    "kernel_eval",
    "RngStream",
    "NoisePath",
    "sample_ou_path",
    "sample_cholesky_path",
    "covariance_estimate",
    "CovarianceEstimate",
    "dump_path_csv",
]


@dataclass(frozen=True)
class OUKernel:
    """Exponential memory kernel alpha(t,s) = (gamma/2) exp(-gamma |t-s|).

    gamma is the inverse memory time; the kernel integrates to 1 over the
    whole lag axis, so the Markov limit gamma -> inf has unit damping rate.
    """

    gamma: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma!r}")


@dataclass(frozen=True)
class TableKernel:
    """Stationary kernel tabulated on a lag grid, linearly interpolated.

    tau_grid must start at 0 and ascend; queries beyond the last lag raise.
    Hermitian symmetry alpha(s,t) = conj(alpha(t,s)) is applied for t < s.
    """

    tau_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau_grid, dtype=float)
        val = np.asarray(self.values, dtype=complex)
        if tau.ndim != 1 or tau.size < 2 or val.shape != tau.shape:
            raise ValueError("tau_grid and values must be matching 1-d arrays")
        if tau[0] != 0.0 or np.any(np.diff(tau) <= 0):
            raise ValueError("tau_grid must start at 0 and strictly ascend")
        object.__setattr__(self, "tau_grid", tau)
        object.__setattr__(self, "values", val)


KernelSpec = Union[OUKernel, TableKernel]


def kernel_eval(kernel: KernelSpec, t, s):
    """alpha(t, s), vectorized over either argument."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    tau = t - s
    if isinstance(kernel, OUKernel):
        out = 0.5 * kernel.gamma * np.exp(-kernel.gamma * np.abs(tau))
        return complex(out) if out.ndim == 0 else out.astype(complex)
    lag = np.abs(tau)
    if np.any(lag > kernel.tau_grid[-1] * (1 + 1e-12)):
        raise ValueError(
            f"lag {float(np.max(lag)):g} outside tabulated range "
            f"[0, {kernel.tau_grid[-1]:g}]"
        )
    re = np.interp(lag, kernel.tau_grid, kernel.values.real)
    im = np.interp(lag, kernel.tau_grid, kernel.values.imag)
    out = np.where(tau >= 0, re + 1j * im, re - 1j * im)
    return complex(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (master_seed, stream_index) -> generator.

    Streams with the same master seed and different indices are statistically
    independent and can be drawn in any order, which keeps worker scheduling
    out of the results.
    """

    master_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class NoisePath:
    """Samples of the conjugate noise z* on a time grid.

    samples[k] is z* at t_grid[k]. The grid must ascend from 0; uniform grids
    (the only kind the trajectory integrators accept) expose dt_half.
    """

    t_grid: np.ndarray
    samples: np.ndarray
    master_seed: int | None = None
    stream_index: int | None = None
    uniform: bool = field(init=False, default=False)

    def __post_init__(self) -> None:
        t = np.asarray(self.t_grid, dtype=float)
        z = np.asarray(self.samples, dtype=complex)
        if t.ndim != 1 or t.size < 1 or z.shape != t.shape:
            raise ValueError("t_grid and samples must be matching 1-d arrays")
        if t[0] != 0.0 or (t.size > 1 and np.any(np.diff(t) <= 0)):
            raise ValueError("t_grid must start at 0 and strictly ascend")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "samples", z)
        steps = np.diff(t)
        uniform = t.size > 1 and bool(
            np.all(np.abs(steps - steps[0]) <= 1e-12 * max(steps[0], 1.0))
        )
        object.__setattr__(self, "uniform", uniform)

    @property
    def dt_half(self) -> float:
        if not self.uniform:
            raise ValueError("dt_half is only defined for uniform noise grids")
        return float(self.t_grid[1] - self.t_grid[0])

    @property
    def t_final(self) -> float:
        return float(self.t_grid[-1])

    def subsample(self, factor: int) -> "NoisePath":
        """Every factor-th node; an exact coarse-grid path of the same process."""
        if factor < 1 or (self.t_grid.size - 1) % factor != 0:
            raise ValueError("factor must divide the number of steps")
        return NoisePath(
            self.t_grid[::factor].copy(),
            self.samples[::factor].copy(),
            self.master_seed,
            self.stream_index,
        )


def _ar1_scan(xi: np.ndarray, rho: float, step_sd: float, x0: float) -> np.ndarray:
    # x_k = rho x_{k-1} + step_sd * xi_k with x_0 given
    out = np.empty(xi.size + 1)
    out[0] = x0
    if xi.size:
        out[1:] = lfilter([step_sd], [1.0, -rho], xi) + x0 * rho ** np.arange(
            1, xi.size + 1
        )
    return out


def sample_ou_path(
    kernel: OUKernel,
    t_final: float,
    dt_half: float,
    stream: RngStream,
    start: str = "stationary",
) -> NoisePath:
    """Exact discrete OU path of z* on the uniform grid k * dt_half.

    z = (u + i v)/sqrt(2) with u, v independent real OU processes of variance
    gamma/2 and correlation rho = exp(-gamma dt_half) per node. start selects
    the initial marginal: "stationary" (the default, which is what makes
    M[z* z] = alpha hold at t = 0) or "zero".
    """
    if t_final < 0 or dt_half <= 0:
        raise ValueError("t_final must be >= 0 and dt_half > 0")
    n = int(round(t_final / dt_half))
    if abs(n * dt_half - t_final) > 1e-9 * max(t_final, 1.0):
        raise ValueError(f"dt_half {dt_half!r} does not divide t_final {t_final!r}")
    if start not in ("stationary", "zero"):
        raise ValueError(f"start must be 'stationary' or 'zero', got {start!r}")

    gamma = kernel.gamma
    rho = float(np.exp(-gamma * dt_half))
    sd_stat = float(np.sqrt(gamma / 2.0))
    step_sd = sd_stat * float(np.sqrt(1.0 - rho * rho))

    rng = stream.generator()
    if start == "stationary":
        u0, v0 = sd_stat * rng.standard_normal(2)
    else:
        u0 = v0 = 0.0
    xi = rng.standard_normal((2, n))
    u = _ar1_scan(xi[0], rho, step_sd, u0)
    v = _ar1_scan(xi[1], rho, step_sd, v0)

    samples = (u - 1j * v) / np.sqrt(2.0)
    t_grid = dt_half * np.arange(n + 1)
    return NoisePath(t_grid, samples, stream.master_seed, stream.stream_index)


def sample_cholesky_path(
    kernel: KernelSpec,
    t_grid: np.ndarray,
    stream: RngStream,
    psd_tol: float = 1e-10,
) -> NoisePath:
    """Dense-covariance sampler: z* = A xi with A A^H = [alpha(t_i, t_j)].

    Falls back to an eigenvalue square root when the plain Cholesky fails,
    clamping eigenvalues in [-psd_tol * max_eig, 0) to zero; anything more
    negative raises with the offending eigenvalue.
    """
    t = np.asarray(t_grid, dtype=float)
    cov = kernel_eval(kernel, t[:, None], t[None, :])
    cov = np.asarray(cov, dtype=complex)
    try:
        a = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        eigval, eigvec = np.linalg.eigh(cov)
        floor = -psd_tol * float(eigval.max(initial=0.0))
        worst = float(eigval.min())
        if worst < floor:
            raise ValueError(
                f"covariance is not positive semidefinite: eigenvalue {worst:.3e}"
            ) from None
        a = eigvec * np.sqrt(np.clip(eigval, 0.0, None))

    rng = stream.generator()
    xi = (rng.standard_normal(t.size) + 1j * rng.standard_normal(t.size)) / np.sqrt(2.0)
    return NoisePath(t, a @ xi, stream.master_seed, stream.stream_index)


@dataclass(frozen=True)
class CovarianceEstimate:
    """Empirical two-point statistics at requested node pairs."""

    pairs: tuple
    conj_cov: np.ndarray  # estimates of M[z*_t z_s]
    conj_se: np.ndarray
    plain_cov: np.ndarray  # estimates of M[z_t z_s]
    plain_se: np.ndarray
    n_paths: int


def covariance_estimate(
    paths: Sequence[NoisePath], lag_pairs: Sequence[tuple]
) -> CovarianceEstimate:
    """Unbiased M[z*_t z_s] and M[z_t z_s] estimates over >= 100 paths.

    lag_pairs are (i, j) node-index pairs into the shared grid. Standard
    errors are per complex mean, sqrt(Var_re + Var_im)/sqrt(N).
    """
    if len(paths) < 100:
        raise ValueError(f"need at least 100 paths, got {len(paths)}")
    grid = paths[0].t_grid
    for p in paths[1:]:
        if p.t_grid.shape != grid.shape or np.any(np.abs(p.t_grid - grid) > 1e-12):
            raise ValueError("all paths must share one time grid")
    zconj = np.stack([p.samples for p in paths])  # (N, nodes), values of z*
    n = zconj.shape[0]

    pairs = tuple((int(i), int(j)) for i, j in lag_pairs)
    conj_cov = np.empty(len(pairs), dtype=complex)
    conj_se = np.empty(len(pairs))
    plain_cov = np.empty(len(pairs), dtype=complex)
    plain_se = np.empty(len(pairs))
    for k, (i, j) in enumerate(pairs):
        prod = zconj[:, i] * np.conj(zconj[:, j])  # z*_t z_s
        conj_cov[k] = prod.mean()
        conj_se[k] = np.sqrt(max(np.mean(np.abs(prod) ** 2) - np.abs(prod.mean()) ** 2, 0.0) / n)
        prod = np.conj(zconj[:, i]) * np.conj(zconj[:, j])  # z_t z_s
        plain_cov[k] = prod.mean()
        plain_se[k] = np.sqrt(max(np.mean(np.abs(prod) ** 2) - np.abs(prod.mean()) ** 2, 0.0) / n)
    return CovarianceEstimate(pairs, conj_cov, conj_se, plain_cov, plain_se, n)


def dump_path_csv(path: NoisePath, fh: io.TextIOBase) -> None:
    """Write (t, Re z*, Im z*) rows with round-trip float formatting."""
    fh.write("t,re_zconj,im_zconj\n")
    for t, z in zip(path.t_grid, path.samples):
        fh.write(f"{float(t)!r},{float(z.real)!r},{float(z.imag)!r}\n")
