"""Free-fermion fast path against the exact-diagonalization oracle."""

import numpy as np
import pytest

from fermiproc.drive import KernelSpec, Perturbation, switch_on_protocol
from fermiproc.harness import (exact_trajectory, probe_matrices, probe_site_pairs,
                               quadratic_trajectory, time_grid)
from fermiproc.harness import LatticeConfig, GibbsConfig, RunConfig
from fermiproc.lattice import (LatticeSpec, hopping_hamiltonian, number_operator,
                               one_body_laplacian, quadratic_fock_operator)
from fermiproc.linalg import max_abs
from fermiproc.observables import expectation
from fermiproc.propagator import TimeDependentHamiltonian, propagate
from fermiproc.quadratic import (NonQuadraticDriveError, ScalarDriveReferenceCache,
                                 correlation_entropy, evolve_correlation,
                                 gibbs_correlation, one_body_grand_potential,
                                 pauli_defect, quadratic_entropy_ledger,
                                 quadratic_observable, reference_scalars)
from fermiproc.states import GibbsParams, gibbs_state, von_neumann_entropy

from conftest import random_hermitian


def test_gibbs_correlation_scalar():
    eps, beta, mu = 0.8, 1.4, 0.3
    gamma = gibbs_correlation(np.array([[eps]]), GibbsParams(beta, mu))
    assert gamma[0, 0] == pytest.approx(1.0 / (1.0 + np.exp(beta * (eps - mu))), abs=1e-12)


def test_gibbs_correlation_filled_band():
    h = one_body_laplacian(LatticeSpec(5))
    params = GibbsParams(2.0, float(np.max(np.linalg.eigvalsh(h))) + 25.0)
    gamma = gibbs_correlation(h, params)
    assert max_abs(gamma - np.eye(5)) <= 1e-8


def test_gibbs_correlation_commutes_with_h():
    h = one_body_laplacian(LatticeSpec(6))
    gamma = gibbs_correlation(h, GibbsParams(1.1, 0.4))
    # Gamma = f(h)^T, so it commutes with h^T
    assert max_abs(gamma @ h.T - h.T @ gamma) <= 1e-10


@pytest.mark.parametrize("n_sites", [2, 4, 6])
def test_gibbs_correlation_matches_fock(n_sites, rng):
    spec = LatticeSpec(n_sites)
    params = GibbsParams(1.3, 0.2)
    rho = gibbs_state(hopping_hamiltonian(spec), number_operator(spec), params).rho
    gamma = gibbs_correlation(one_body_laplacian(spec), params)
    w = random_hermitian(rng, n_sites)
    fock_val = expectation(rho, quadratic_fock_operator(spec, w))
    assert quadratic_observable(gamma, w) == pytest.approx(fock_val, abs=1e-8)


def test_one_body_grand_potential_matches_fock():
    spec = LatticeSpec(5)
    params = GibbsParams(0.9, -0.3)
    g_fock = gibbs_state(hopping_hamiltonian(spec), number_operator(spec), params)
    g_one, beta_g = one_body_grand_potential(one_body_laplacian(spec), params)
    assert g_one == pytest.approx(g_fock.grand_potential, abs=1e-10)
    assert beta_g == pytest.approx(g_fock.beta_g, abs=1e-10)


def test_static_evolution_conserves_number_and_entropy():
    h = one_body_laplacian(LatticeSpec(8))
    params = GibbsParams(1.0, 0.5)
    gamma0 = gibbs_correlation(h, params)
    gamma_t = evolve_correlation(gamma0, h, 0.0, 2.5, 1e-10)
    assert abs(np.trace(gamma_t).real - np.trace(gamma0).real) <= 1e-10
    assert abs(correlation_entropy(gamma_t) - correlation_entropy(gamma0)) <= 1e-9
    # t = s leaves Gamma unchanged
    assert max_abs(evolve_correlation(gamma0, h, 1.0, 1.0, 1e-10) - gamma0) == 0


def test_two_site_rabi_conformance():
    # frozen convention check: h = sigma_x, particle starts on site 0,
    # occupation oscillates as cos^2(t)
    h = np.array([[0.0, 1.0], [1.0, 0.0]])
    gamma0 = np.diag([1.0, 0.0]).astype(complex)
    for t in (0.3, 0.7, 1.9):
        gamma = evolve_correlation(gamma0, h, 0.0, t, 1e-12)
        assert gamma[0, 0].real == pytest.approx(np.cos(t) ** 2, abs=1e-10)
        assert gamma[1, 1].real == pytest.approx(np.sin(t) ** 2, abs=1e-10)


def test_driven_occupations_match_fock_oracle():
    # the transpose/conjugate convention of the evolution is pinned here
    spec = LatticeSpec(4, local_region=(1, 2))
    coeffs = np.array([[0.6, 0.25], [0.25, -0.5]])
    pert = Perturbation([KernelSpec(1, (1, 2), coeffs)], spec)
    protocol = switch_on_protocol(pert, 0.0, 0.6, 0.4)
    params = GibbsParams(1.3, 0.2)
    rho = gibbs_state(hopping_hamiltonian(spec), number_operator(spec), params).rho
    tdh_f = TimeDependentHamiltonian(hopping_hamiltonian(spec), protocol, 0.0, "fock")
    gamma = gibbs_correlation(one_body_laplacian(spec), params)
    tdh_q = TimeDependentHamiltonian(one_body_laplacian(spec), protocol, 0.0, "one_body")
    t_prev = 0.0
    for t in (0.4, 1.1, 1.9):
        u = propagate(tdh_f, t_prev, t, 1e-9)
        rho = u.matrix @ rho @ u.matrix.conj().T
        gamma = evolve_correlation(gamma, tdh_q, t_prev, t, 1e-9)
        t_prev = t
        for site in range(4):
            w = np.zeros((4, 4))
            w[site, site] = 1.0
            fock_val = expectation(rho, quadratic_fock_operator(spec, w))
            assert quadratic_observable(gamma, w) == pytest.approx(fock_val, abs=1e-8)
    assert pauli_defect(gamma) <= 1e-9


def test_quadratic_observable_total_number():
    gamma = gibbs_correlation(one_body_laplacian(LatticeSpec(5)), GibbsParams(1.0, 0.2))
    total = quadratic_observable(gamma, np.eye(5))
    assert total == pytest.approx(np.trace(gamma).real, abs=1e-12)


def test_quadratic_observable_dimension_check():
    with pytest.raises(ValueError):
        quadratic_observable(np.eye(3), np.eye(4))


def test_reference_cache_matches_direct(rng):
    h0 = one_body_laplacian(LatticeSpec(30))
    v = np.zeros((30, 30))
    v[14, 14], v[15, 15], v[14, 15], v[15, 14] = 0.7, -0.4, 0.3, 0.3
    params = GibbsParams(1.1, 0.25)
    cache = ScalarDriveReferenceCache(h0, v, params, 0.0, 0.08)
    for lam in rng.uniform(0.0, 0.08, 7):
        direct = reference_scalars(h0 + lam * v, params, [v])
        interp = cache(lam)
        assert interp.grand_potential == pytest.approx(direct.grand_potential, abs=1e-10)
        assert interp.gradient[0] == pytest.approx(direct.gradient[0], abs=1e-10)


def test_ledger_rejects_interaction_kernels():
    spec = LatticeSpec(4, local_region=(1, 2))
    quartic = KernelSpec(2, (1, 2), np.zeros((2, 2, 2, 2)))
    pert = Perturbation([quartic], spec)
    protocol = switch_on_protocol(pert, 0.0, 0.5, 0.1)
    gamma = gibbs_correlation(one_body_laplacian(spec), GibbsParams(1.0))
    with pytest.raises(NonQuadraticDriveError):
        quadratic_entropy_ledger(gamma, 0.0, one_body_laplacian(spec), protocol,
                                 GibbsParams(1.0), 0.0)


def test_zero_drive_ledger_is_flat():
    spec = LatticeSpec(6)
    params = GibbsParams(1.2, 0.1)
    times = time_grid(0.0, 1.0, 0.1)
    traj = quadratic_trajectory(spec, params, None, times, 1e-9)
    u0 = traj.records[0].U
    for rec in traj.records:
        assert rec.Sdot == 0.0
        assert abs(rec.U - u0) <= 1e-9
        assert abs(rec.relS) <= 1e-9


@pytest.mark.parametrize("n_sites", [2, 3, 4, 5, 6])
def test_full_ledger_against_exact_path(n_sites, rng):
    # every ProcessRecord field from the one-particle route must match the
    # Fock-space route on random quadratic switch-on drives
    region = tuple(range(max(0, n_sites // 2 - 1), min(n_sites, n_sites // 2 + 1)))
    spec = LatticeSpec(n_sites, local_region=region)
    m = len(region)
    c = rng.normal(size=(m, m))
    kern = KernelSpec(1, region, 0.5 * (c + c.T))
    pert = Perturbation([kern], spec)
    protocol = switch_on_protocol(pert, 0.0, 0.8, 0.25)
    params = GibbsParams(1.1, 0.15)
    times = time_grid(0.0, 1.5, 0.075)  # 20 sample intervals
    pairs = probe_site_pairs(RunConfig(LatticeConfig(n_sites), GibbsConfig(1.1)), spec)
    te = exact_trajectory(spec, params, protocol, times, 1e-9,
                          probe_matrices(pairs, spec, "fock"))
    tq = quadratic_trajectory(spec, params, protocol, times, 1e-9,
                              probe_matrices(pairs, spec, "one_body"))
    for re_, rq in zip(te.records, tq.records):
        for name in ("t", "U", "q", "S", "Sdot", "relS", "work", "G"):
            assert abs(getattr(re_, name) - getattr(rq, name)) <= 1e-7, name
    assert np.max(np.abs(te.probe_series - tq.probe_series)) <= 1e-7


def test_correlation_entropy_matches_fock():
    spec = LatticeSpec(5)
    params = GibbsParams(0.8, 0.1)
    gamma = gibbs_correlation(one_body_laplacian(spec), params)
    s_quad = correlation_entropy(gamma)
    rho = gibbs_state(hopping_hamiltonian(spec), number_operator(spec), params).rho
    assert s_quad == pytest.approx(von_neumann_entropy(rho), abs=1e-9)


def test_pauli_bounds_along_run(rng):
    spec = LatticeSpec(24, local_region=(11, 12))
    c = rng.normal(size=(2, 2))
    pert = Perturbation([KernelSpec(1, (11, 12), 0.5 * (c + c.T))], spec)
    protocol = switch_on_protocol(pert, 0.0, 0.5, 0.4)
    params = GibbsParams(1.5, 0.0)
    gamma = gibbs_correlation(one_body_laplacian(spec), params)
    tdh = TimeDependentHamiltonian(one_body_laplacian(spec), protocol, 0.0, "one_body")
    t_prev = 0.0
    for t in np.linspace(0.5, 6.0, 12):
        gamma = evolve_correlation(gamma, tdh, t_prev, float(t), 1e-7)
        t_prev = float(t)
        assert pauli_defect(gamma) <= 1e-9
