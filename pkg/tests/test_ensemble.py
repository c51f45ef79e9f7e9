import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsdsim.algebra import ModelParams, basis_state
from qsdsim.ensemble import (
    EnsembleConfig,
    EnsembleError,
    coefficients_c,
    concurrence,
    fluctuation_L,
    purity,
    run_ensemble,
    steady_extract,
    write_ensemble_csv,
)
from qsdsim.fields import solve_fields
from qsdsim.noise import NoisePath, OUKernel, RngStream, sample_ou_path
from qsdsim.oracles import DensityMatrixSeries
from qsdsim.trajectory import TrajectoryConfig, run_trajectory

KERNEL = OUKernel(1.0)
P_SYM = ModelParams(omega_a=0.5, omega_b=0.5, j_xy=0.2, j_z=0.1)
P_FREE = ModelParams(omega_a=0.5, omega_b=0.5, j_xy=0.4, j_z=0.0, kappa_a=0.0, kappa_b=0.0)

STEADY_RHO = np.array(
    [
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.25, -0.25, 0.0],
        [0.0, -0.25, 0.25, 0.0],
        [0.0, 0.0, 0.0, 0.5],
    ],
    dtype=complex,
)


@pytest.fixture(scope="module")
def tables_sym():
    return solve_fields(P_SYM, KERNEL, 2.0, 0.02)


@pytest.fixture(scope="module")
def tables_free():
    return solve_fields(P_FREE, KERNEL, 1.0, 0.02)


def pure(label: str) -> np.ndarray:
    psi = basis_state(label)
    return np.outer(psi, psi.conj())


# ---------------------------------------------------------------- observables


def test_concurrence_known_states():
    assert concurrence(pure("(11+00)")) == pytest.approx(1.0)
    assert concurrence(pure("(10-01)")) == pytest.approx(1.0)
    assert concurrence(pure("10")) == pytest.approx(0.0)
    assert concurrence(0.25 * np.eye(4, dtype=complex)) == pytest.approx(0.0)
    assert concurrence(STEADY_RHO) == pytest.approx(0.5)


def test_concurrence_validation():
    with pytest.raises(ValueError, match="4x4"):
        concurrence(np.eye(3))
    bad = pure("11")
    bad[0, 1] = 0.2
    with pytest.raises(ValueError, match="Hermitian"):
        concurrence(bad)
    with pytest.raises(ValueError, match="trace"):
        concurrence(1.2 * pure("11"))
    neg = np.diag([0.7, 0.4, -0.05, -0.05]).astype(complex)
    with pytest.raises(ValueError, match="positive semidefinite"):
        concurrence(neg)


def test_concurrence_tolerates_small_trace_drift():
    # Linear-mode matrices arrive with a martingale trace; a 3% deviation
    # must be normalized away, not rejected.
    assert concurrence(1.03 * pure("(11+00)")) == pytest.approx(1.0)


amp = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


@given(st.tuples(*([amp] * 8)))
def test_concurrence_pure_state_formula(raw):
    psi = np.array(
        [raw[0] + 1j * raw[1], raw[2] + 1j * raw[3], raw[4] + 1j * raw[5], raw[6] + 1j * raw[7]]
    )
    nrm = np.linalg.norm(psi)
    if nrm < 1e-2:
        return
    psi = psi / nrm
    expected = 2.0 * abs(psi[0] * psi[3] - psi[1] * psi[2])
    assert concurrence(np.outer(psi, psi.conj())) == pytest.approx(expected, abs=5e-8)


@given(
    diag=st.tuples(*(st.floats(min_value=0.02, max_value=1.0) for _ in range(4))),
    wfrac=st.floats(min_value=0.0, max_value=0.99),
    phase=st.floats(min_value=0.0, max_value=6.28),
)
def test_concurrence_x_state_formula(diag, wfrac, phase):
    a, b, c, d = (x / sum(diag) for x in diag)
    w = wfrac * np.sqrt(b * c) * np.exp(1j * phase)
    rho = np.diag([a, b, c, d]).astype(complex)
    rho[1, 2], rho[2, 1] = w, np.conj(w)
    expected = 2.0 * max(0.0, abs(w) - np.sqrt(a * d))
    assert concurrence(rho) == pytest.approx(expected, abs=1e-10)


@given(phi_a=st.floats(min_value=0.0, max_value=6.28), phi_b=st.floats(min_value=0.0, max_value=6.28))
def test_concurrence_local_phase_invariance(phi_a, phi_b):
    psi = basis_state("(11+00)") * 0.8 + basis_state("(10+01)") * 0.6
    rho = np.outer(psi, psi.conj())
    u = np.kron(np.diag([np.exp(1j * phi_a), 1.0]), np.diag([np.exp(1j * phi_b), 1.0]))
    rotated = u @ rho @ u.conj().T
    assert concurrence(rotated) == pytest.approx(concurrence(rho), abs=5e-8)


def test_purity():
    assert purity(pure("11")) == pytest.approx(1.0)
    assert purity(0.25 * np.eye(4, dtype=complex)) == pytest.approx(0.25)
    assert purity(STEADY_RHO) == pytest.approx(0.5)
    with pytest.raises(ValueError, match="4x4"):
        purity(np.eye(3))


def test_fluctuation_examples():
    p = ModelParams()
    assert fluctuation_L(basis_state("00"), p) == pytest.approx(0.0)
    assert fluctuation_L(basis_state("11"), p) == pytest.approx(0.0)
    assert fluctuation_L(basis_state("(11+00)"), p) == pytest.approx(1.0)
    # Scale invariance: expectations are of the normalized state.
    assert fluctuation_L(3.0 * basis_state("(11+00)"), p) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="null state"):
        fluctuation_L(np.zeros(4, dtype=complex), p)


def test_coefficients_c():
    np.testing.assert_allclose(
        coefficients_c(basis_state("(10+01)")), [0, 1, 0, 0], atol=1e-15
    )
    r2 = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(
        coefficients_c(basis_state("10")), [0, r2, r2, 0], atol=1e-15
    )
    with pytest.raises(ValueError, match="length-4"):
        coefficients_c(np.zeros(3))


def test_steady_extract():
    rng = np.random.default_rng(5)
    flat = 0.5 + 1e-3 * rng.standard_normal(200)
    out = steady_extract(flat)
    assert out.value == pytest.approx(0.5, abs=1e-3)
    assert out.stationary
    assert out.n_points == 40
    trending = np.linspace(0.0, 1.0, 200)
    assert not steady_extract(trending).stationary
    with pytest.raises(ValueError, match="window fraction"):
        steady_extract(flat, window=0.7)
    with pytest.raises(ValueError, match="at least 10"):
        steady_extract(flat[:20])


# ------------------------------------------------------------------ ensembles


@pytest.mark.parametrize("method", ["linear", "nonlinear"])
def test_batched_matches_scalar_stepper(tables_sym, method):
    tcfg = TrajectoryConfig(
        psi0=basis_state("11"), t_final=2.0, dt=0.02, method=method, stride=5
    )
    cfg = EnsembleConfig(traj=tcfg, n_traj=3, master_seed=777)
    dens, obs = run_ensemble(cfg, tables_sym)

    projs = []
    for i in range(3):
        noise = sample_ou_path(KERNEL, 2.0, 0.01, RngStream(777, i))
        traj = run_trajectory(tcfg, tables_sym, noise)
        projs.append(traj.states[:, :, None] * traj.states[:, None, :].conj())
    ref = np.mean(projs, axis=0)
    np.testing.assert_allclose(dens.rhos, ref, atol=1e-12)
    np.testing.assert_allclose(dens.times, 0.1 * np.arange(21), atol=1e-12)
    assert obs.n_traj == 3 and obs.mode == method


def test_worker_count_does_not_change_results(tables_sym):
    tcfg = TrajectoryConfig(psi0=basis_state("11"), t_final=1.0, dt=0.02, stride=10)
    cfg = EnsembleConfig(traj=tcfg, n_traj=6, master_seed=31)
    d1, o1 = run_ensemble(cfg, tables_sym, workers=1)
    d2, o2 = run_ensemble(cfg, tables_sym, workers=2)
    assert np.array_equal(d1.rhos, d2.rhos)
    assert np.array_equal(o1.concurrence, o2.concurrence)
    assert np.array_equal(o1.trace, o2.trace)


def test_block_means_recombine_to_ensemble_mean(tables_sym):
    tcfg = TrajectoryConfig(psi0=basis_state("11"), t_final=1.0, dt=0.02, stride=10)
    cfg = EnsembleConfig(traj=tcfg, n_traj=23, master_seed=9)
    dens, obs = run_ensemble(cfg, tables_sym)
    assert obs.block_rhos.shape[0] == 10
    assert int(obs.block_counts.sum()) == 23
    recombined = np.einsum(
        "btij,b->tij", obs.block_rhos, obs.block_counts.astype(float)
    ) / 23.0
    np.testing.assert_allclose(recombined, dens.rhos, atol=1e-14)


def test_ensemble_member_failure_names_stream(tables_sym):
    grid = 0.01 * np.arange(101)
    paths = [sample_ou_path(KERNEL, 1.0, 0.01, RngStream(1, i)) for i in range(4)]
    paths[2] = NoisePath(grid, np.full(101, 1e200, dtype=complex))
    tcfg = TrajectoryConfig(psi0=basis_state("11"), t_final=1.0, dt=0.02, method="linear")
    cfg = EnsembleConfig(traj=tcfg, n_traj=4, master_seed=1)
    with pytest.raises(EnsembleError, match="stream index 2") as exc:
        run_ensemble(cfg, tables_sym, noise_paths=paths)
    assert exc.value.stream_index == 2


def test_run_ensemble_validations(tables_sym):
    tcfg = TrajectoryConfig(psi0=basis_state("11"), t_final=1.0, dt=0.02)
    cfg = EnsembleConfig(traj=tcfg, n_traj=2, master_seed=0)
    with pytest.raises(ValueError, match="disagree"):
        run_ensemble(cfg, tables_sym, p=ModelParams(j_xy=0.9))
    long = EnsembleConfig(
        traj=TrajectoryConfig(psi0=basis_state("11"), t_final=5.0, dt=0.02),
        n_traj=2, master_seed=0,
    )
    with pytest.raises(ValueError, match="tables end at"):
        run_ensemble(long, tables_sym)
    with pytest.raises(ValueError, match="one injected noise path per"):
        run_ensemble(cfg, tables_sym, noise_paths=[None])
    coarse = [sample_ou_path(KERNEL, 1.0, 0.02, RngStream(0, i)) for i in range(2)]
    with pytest.raises(ValueError, match="not half"):
        run_ensemble(cfg, tables_sym, noise_paths=coarse)
    short = [sample_ou_path(KERNEL, 0.5, 0.01, RngStream(0, i)) for i in range(2)]
    with pytest.raises(ValueError, match="ends before"):
        run_ensemble(cfg, tables_sym, noise_paths=short)


def test_ensemble_config_validation():
    tcfg = TrajectoryConfig(psi0=basis_state("11"), t_final=1.0, dt=0.02)
    with pytest.raises(ValueError, match="n_traj"):
        EnsembleConfig(traj=tcfg, n_traj=0, master_seed=0)
    with pytest.raises(ValueError, match="master_seed"):
        EnsembleConfig(traj=tcfg, n_traj=1, master_seed=-4)
    with pytest.raises(ValueError, match="stride"):
        EnsembleConfig(traj=tcfg, n_traj=1, master_seed=0, stride=7)
    cfg = EnsembleConfig(traj=tcfg, n_traj=1, master_seed=0, stride=10)
    assert cfg.effective_traj().stride == 10


def test_zero_noise_single_member_is_unitary(tables_free):
    grid = 0.01 * np.arange(101)
    paths = [NoisePath(grid, np.zeros(101, dtype=complex))]
    tcfg = TrajectoryConfig(
        psi0=basis_state("(10+01)"), t_final=1.0, dt=0.02, method="linear", stride=10
    )
    cfg = EnsembleConfig(traj=tcfg, n_traj=1, master_seed=0)
    dens, obs = run_ensemble(cfg, tables_free, noise_paths=paths)
    np.testing.assert_allclose(obs.purity, 1.0, atol=1e-9)
    np.testing.assert_allclose(obs.trace, 1.0, atol=1e-7)
    np.testing.assert_allclose(obs.populations.sum(axis=1), 1.0, atol=1e-12)


def test_nonlinear_mode_keeps_unit_trace(tables_sym):
    tcfg = TrajectoryConfig(psi0=basis_state("11"), t_final=1.0, dt=0.02, stride=10)
    cfg = EnsembleConfig(traj=tcfg, n_traj=8, master_seed=4)
    dens, obs = run_ensemble(cfg, tables_sym)
    np.testing.assert_allclose(obs.trace, 1.0, atol=1e-9)
    assert np.max(obs.trace_stderr) <= 1e-12
    dens.validate(trace_tol=1e-9, herm_tol=1e-12, eig_tol=1e-9)


def test_linear_mode_trace_is_a_martingale(tables_sym):
    tcfg = TrajectoryConfig(
        psi0=basis_state("11"), t_final=2.0, dt=0.02, method="linear", stride=10
    )
    cfg = EnsembleConfig(traj=tcfg, n_traj=400, master_seed=12)
    dens, obs = run_ensemble(cfg, tables_sym)
    dev = np.abs(obs.trace - 1.0)
    assert dev[-1] <= 5.0 * obs.trace_stderr[-1]
    assert np.all(dev[1:] <= 6.0 * obs.trace_stderr[1:])
    assert np.max(obs.trace_stderr) > 0.0


def test_output_matrices_hermitian_and_psd(tables_sym):
    tcfg = TrajectoryConfig(
        psi0=basis_state("11"), t_final=2.0, dt=0.02, method="linear", stride=10
    )
    cfg = EnsembleConfig(traj=tcfg, n_traj=40, master_seed=3)
    dens, obs = run_ensemble(cfg, tables_sym)
    for idx in range(dens.rhos.shape[0]):
        rho = dens.rhos[idx]
        assert np.max(np.abs(rho - rho.conj().T)) <= 1e-12
        assert np.linalg.eigvalsh(rho).min() >= -1e-9
    # Normalized coherences are the upper triangle, row-major.
    tr = np.trace(dens.rhos[5]).real
    iu, ju = np.triu_indices(4, k=1)
    np.testing.assert_allclose(obs.coherences[5], dens.rhos[5][iu, ju] / tr, atol=1e-13)


def test_stderr_scales_inverse_sqrt_n(tables_sym):
    ses = []
    for n in (500, 2000, 8000):
        tcfg = TrajectoryConfig(
            psi0=basis_state("11"), t_final=1.0, dt=0.02, method="linear", stride=50
        )
        cfg = EnsembleConfig(traj=tcfg, n_traj=n, master_seed=2024)
        _, obs = run_ensemble(cfg, tables_sym)
        ses.append(obs.trace_stderr[-1])
    for a, b in ((0, 1), (1, 2)):
        ratio = ses[a] / ses[b]
        assert 2.0 / 1.5 < ratio < 2.0 * 1.5


def test_write_ensemble_csv(tables_sym):
    tcfg = TrajectoryConfig(psi0=basis_state("11"), t_final=1.0, dt=0.02, stride=10)
    cfg = EnsembleConfig(traj=tcfg, n_traj=4, master_seed=8)
    dens, obs = run_ensemble(cfg, tables_sym)
    buf = io.StringIO()
    write_ensemble_csv(buf, dens, obs, metadata={"gamma": 1.0, "preset": "none"})
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# gamma = 1.0"
    assert lines[1] == "# preset = none"
    header = lines[2].split(",")
    assert header[:4] == ["t", "concurrence", "concurrence_stderr", "purity"]
    assert header[4] == "re_rho11" and header[5] == "im_rho11"
    assert header[-2] == "im_rho44" and header[-1] == "trace"
    assert len(header) == 37
    assert len(lines) == 3 + dens.times.size
    row = [float(x) for x in lines[3].split(",")]
    assert len(row) == 37 and row[0] == 0.0


def test_write_ensemble_csv_times_mismatch(tables_sym):
    tcfg = TrajectoryConfig(psi0=basis_state("11"), t_final=1.0, dt=0.02, stride=10)
    cfg = EnsembleConfig(traj=tcfg, n_traj=2, master_seed=8)
    dens, obs = run_ensemble(cfg, tables_sym)
    clipped = DensityMatrixSeries(dens.times[:-1], dens.rhos[:-1])
    with pytest.raises(ValueError, match="disagree on times"):
        write_ensemble_csv(io.StringIO(), clipped, obs)
