"""Free-fermion fast path: L x L one-particle dynamics for quadratic drives.

A quasi-free state is fully described by its correlation matrix
Gamma_ij = <a_i^* a_j>. For a quadratic Hamiltonian H = sum h_ij a_i^* a_j the
evolved correlations are Gamma(t) = conj(u) Gamma conj(u)^dagger with u the
one-particle propagator of h(t); Gibbs states have Gamma = transpose of the
Fermi-Dirac function of h. The transpose/conjugate placement is the classic
bug source; it is pinned here by an exact-diagonalization oracle in the test
suite before anything large runs on it.
"""

from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

from .linalg import ensure_hermitian, symmetrize
from .observables import ProcessRecord
from .propagator import DEFAULT_TOL, propagate
from .states import EIG_FLOOR


class NonQuadraticDriveError(ValueError):
    """Fast path requested for a drive with interaction (degree >= 2) kernels."""


def gibbs_correlation(h, params):
    """Correlation matrix of the grand-canonical state of a quadratic H.

    Gamma = transpose of (1 + exp(beta*(h - mu)))^{-1}; eigenvalues are the
    Fermi-Dirac occupations of the modes of h, and [Gamma, h^T] = 0.
    """
    h = ensure_hermitian(np.asarray(h), "one-body Hamiltonian")
    w, v = np.linalg.eigh(h)
    occ = expit(-params.beta * (w - params.mu))
    return symmetrize(((v * occ) @ v.conj().T).conj())


def one_body_grand_potential(h, params):
    """(G, beta*G) with beta*G = -sum_k ln(1 + e^{-beta*(eps_k - mu)})."""
    w = np.linalg.eigvalsh(ensure_hermitian(np.asarray(h), "one-body Hamiltonian"))
    beta_g = -float(np.sum(np.logaddexp(0.0, -params.beta * (w - params.mu))))
    return beta_g / params.beta, beta_g


def evolve_correlation(gamma, h_of_t, s, t, tol=DEFAULT_TOL):
    """Propagate Gamma from time s to t under the one-particle Hamiltonian.

    Uses the same adaptive midpoint-exponential integrator as the full-space
    propagator, on the L x L matrix; the spectrum of Gamma (hence the Pauli
    bounds) is preserved up to integrator roundoff.
    """
    u = propagate(h_of_t, s, t, tol).matrix
    v = u.conj()
    return symmetrize(v @ np.asarray(gamma) @ v.conj().T)


def quadratic_observable(gamma, w):
    """Expectation <sum_ij w_ij a_i^* a_j> = sum_ij w_ij Gamma_ij."""
    gamma = np.asarray(gamma)
    w = np.asarray(w)
    if gamma.shape != w.shape:
        raise ValueError("kernel and correlation matrix dimensions differ")
    val = complex(np.sum(w * gamma))
    return float(val.real)


def correlation_entropy(gamma):
    """Von Neumann entropy of the quasi-free state with correlations Gamma."""
    nu = np.clip(np.linalg.eigvalsh(np.asarray(gamma)), 0.0, 1.0)
    out = 0.0
    for x in nu:
        if x > EIG_FLOOR:
            out -= x * np.log(x)
        if 1.0 - x > EIG_FLOOR:
            out -= (1.0 - x) * np.log(1.0 - x)
    return float(out)


def pauli_defect(gamma):
    """How far the spectrum of Gamma escapes [0, 1]."""
    nu = np.linalg.eigvalsh(np.asarray(gamma))
    return float(max(0.0, -nu.min(), nu.max() - 1.0))


class ReferenceScalars(NamedTuple):
    """Reference-state inputs to the ledger at one time."""

    grand_potential: float
    gradient: np.ndarray  # <dW/dlambda_j> in the reference state, per control


def reference_scalars(h_t, params, d_kernels):
    """Direct evaluation of G and the reference gradient at one Hamiltonian."""
    h_t = np.asarray(h_t)
    w, v = np.linalg.eigh(h_t)
    beta_g = -float(np.sum(np.logaddexp(0.0, -params.beta * (w - params.mu))))
    occ = expit(-params.beta * (w - params.mu))
    gamma_ref = ((v * occ) @ v.conj().T).conj()
    grads = np.array([float(np.real(np.sum(np.asarray(dk) * gamma_ref)))
                      for dk in d_kernels])
    return ReferenceScalars(beta_g / params.beta, grads)


class _ChebyshevFit:
    """Deterministic Chebyshev interpolant on first-kind nodes over [lo, hi]."""

    def __init__(self, lo, hi, values):
        n = len(values)
        j = np.arange(n)
        theta = np.pi * (2 * j + 1) / (2 * n)
        # coefficients of the degree-(n-1) interpolant through f(cos theta_j)
        k = np.arange(n)[:, None]
        self.coeffs = (2.0 / n) * (np.cos(k * theta[None, :]) @ np.asarray(values))
        self.coeffs[0] *= 0.5
        self.lo, self.hi = lo, hi

    def __call__(self, x):
        u = (2.0 * x - (self.lo + self.hi)) / (self.hi - self.lo)
        return float(np.polynomial.chebyshev.chebval(u, self.coeffs))


class ScalarDriveReferenceCache:
    """Chebyshev interpolation of G(lambda) and <dW/dlambda>_ref(lambda).

    For a single-control linear drive h(lambda) = h0 + lambda*v the reference
    scalars are analytic functions of the scalar lambda; interpolating them on
    Chebyshev nodes replaces an O(L^3) eigendecomposition per output time with
    an O(nodes) evaluation. Accuracy is checked against the direct route at
    construction; out-of-range lookups fall back to the direct route.
    """

    def __init__(self, h0, v, params, lam_min, lam_max, nodes=33, check_tol=1e-9):
        self.lam_min = float(lam_min)
        self.lam_max = float(lam_max)
        if self.lam_max <= self.lam_min:
            self.lam_max = self.lam_min + 1e-12
        j = np.arange(nodes)
        x = np.cos(np.pi * (2 * j + 1) / (2 * nodes))  # first-kind nodes on (-1, 1)
        lams = 0.5 * (self.lam_min + self.lam_max) + 0.5 * (self.lam_max - self.lam_min) * x
        g_vals, d_vals = [], []
        for lam in lams:
            ref = reference_scalars(h0 + lam * v, params, [v])
            g_vals.append(ref.grand_potential)
            d_vals.append(ref.gradient[0])
        self._g = _ChebyshevFit(self.lam_min, self.lam_max, g_vals)
        self._d = _ChebyshevFit(self.lam_min, self.lam_max, d_vals)
        self._h0, self._v, self._params = h0, v, params
        mid = 0.5 * (self.lam_min + self.lam_max) + 0.123456 * (self.lam_max - self.lam_min) / 2
        exact = reference_scalars(h0 + mid * v, params, [v])
        err = max(abs(self._g(mid) - exact.grand_potential),
                  abs(self._d(mid) - exact.gradient[0]))
        if err > check_tol:
            raise RuntimeError(f"reference interpolation error {err:.3e} exceeds {check_tol:.1e}")

    def __call__(self, lam):
        lam = float(lam)
        if not (self.lam_min - 1e-12 <= lam <= self.lam_max + 1e-12):
            return reference_scalars(self._h0 + lam * self._v, self._params, [self._v])
        return ReferenceScalars(self._g(lam), np.array([self._d(lam)]))


def quadratic_entropy_ledger(gamma_t, t, h0, drive, params, s_start,
                             work_prev=0.0, prev: Optional[ProcessRecord] = None,
                             reference: Optional[ReferenceScalars] = None,
                             probe_deviation=float("nan")):
    """One ledger row of a quadratic-drive process at time t.

    All expectations reduce to trace pairings with Gamma; the entropy uses
    the closed-form grand potential of the one-particle spectrum. `s_start`
    is the entropy at the initial time (conserved along the unitary flow, a
    fact verified separately rather than re-diagonalized per row). Work is
    accumulated from the previous record via the exact charge increment and
    the trapezoid rule on (dG/dlambda).lambda_dot.
    """
    if drive is not None and not drive.is_quadratic:
        raise NonQuadraticDriveError("fast path accepts one-body (degree-1) kernels only")
    gamma_t = np.asarray(gamma_t)
    beta, mu = params.beta, params.mu
    if drive is None:
        w_t = np.zeros_like(h0)
        d_kernels = []
        lam_dot = np.zeros(0)
    else:
        w_t = drive.operator(t, "one_body")
        d_kernels = drive.d_operator(t, "one_body")
        lam_dot = np.atleast_1d(drive.lam_dot(t))
    h_t = h0 + w_t
    if reference is None:
        reference = reference_scalars(h_t, params, d_kernels)
    energy = float(np.real(np.sum(h_t * gamma_t)))
    q = float(np.real(np.trace(gamma_t)))
    s_val = beta * (energy - mu * q - reference.grand_potential)
    drive_expect = np.array([float(np.real(np.sum(np.asarray(dk) * gamma_t)))
                             for dk in d_kernels])
    sdot = float(beta * np.sum((drive_expect - reference.gradient) * lam_dot))
    dg_dt = float(np.sum(reference.gradient * lam_dot))
    work = work_prev
    if prev is not None:
        dt = t - prev.t
        work += -mu * (q - prev.q) - 0.5 * (dg_dt + prev.dG_dt) * dt
    return ProcessRecord(
        t=t, U=energy, q=q, S=s_val, Sdot=sdot, relS=s_val - s_start,
        work=work, G=reference.grand_potential, D_probe=probe_deviation,
        dG_dt=dg_dt,
    )


__all__ = [
    "NonQuadraticDriveError", "gibbs_correlation", "one_body_grand_potential",
    "evolve_correlation", "quadratic_observable", "correlation_entropy",
    "pauli_defect", "ReferenceScalars", "reference_scalars",
    "ScalarDriveReferenceCache", "quadratic_entropy_ledger",
]
