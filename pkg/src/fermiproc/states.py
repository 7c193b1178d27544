"""Grand-canonical Gibbs states, reference states, and entropies."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .linalg import ensure_hermitian, max_abs, symmetrize

#: eigenvalues below this contribute zero to entropy sums (x ln x -> 0)
EIG_FLOOR = 1e-14
#: density-matrix eigenvalues may dip this far below zero before we error
NEGATIVE_EIG_TOL = 1e-12


class SupportError(ValueError):
    """Reference state vanishes on part of the true state's support."""


@dataclass(frozen=True)
class GibbsParams:
    """Inverse temperature and chemical potential of the thermal ensemble."""

    beta: float
    mu: float = 0.0

    def __post_init__(self):
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not np.isfinite(self.mu):
            raise ValueError("mu must be finite")


class GibbsResult(NamedTuple):
    """Gibbs state with its grand potential.

    `beta_g` is -ln Xi (dimensionless); `grand_potential` is beta_g / beta.
    `min_eigenvalue` is the smallest Boltzmann weight of rho (always > 0).
    """

    rho: np.ndarray
    grand_potential: float
    beta_g: float
    min_eigenvalue: float


def gibbs_state(h, n_op, params):
    """Grand-canonical state rho = exp(-beta*(H - mu*N)) / Xi.

    Diagonalizes K = H - mu*N and shifts by the ground energy before
    exponentiating (log-sum-exp stabilization), so arbitrary beta are safe.
    Returns the state together with the grand potential G and beta*G = -ln Xi.
    """
    h = ensure_hermitian(np.asarray(h), "Hamiltonian")
    n_op = ensure_hermitian(np.asarray(n_op), "charge operator")
    if h.shape != n_op.shape:
        raise ValueError("Hamiltonian and charge operator dimensions differ")
    k = h - params.mu * n_op
    w, v = np.linalg.eigh(k)
    w0 = w - w[0]
    z = np.exp(-params.beta * w0)
    xi_shifted = float(np.sum(z))
    beta_g = float(params.beta * w[0] - np.log(xi_shifted))
    weights = z / xi_shifted
    rho = symmetrize((v * weights) @ v.conj().T)
    return GibbsResult(rho, beta_g / params.beta, beta_g, float(weights.min()))


def reference_state(h_t, n_op, params):
    """Instantaneous Gibbs state of the time-t Hamiltonian H_t = H_0 + W(t)."""
    return gibbs_state(h_t, n_op, params)


def evolve_state(rho, propagator):
    """Unitary update rho -> U rho U^dagger (spectrum and trace preserved)."""
    u = propagator.matrix if hasattr(propagator, "matrix") else np.asarray(propagator)
    rho = np.asarray(rho)
    if rho.shape != u.shape:
        raise ValueError("state and propagator dimensions differ")
    return symmetrize(u @ rho @ u.conj().T)


def validate_density_matrix(rho, trace_tol=1e-10, herm_tol=1e-12, eig_tol=NEGATIVE_EIG_TOL):
    """Raise unless rho is Hermitian, positive within eig_tol, unit trace."""
    rho = np.asarray(rho)
    drift = max_abs(rho - rho.conj().T)
    if drift > herm_tol:
        raise ValueError(f"density matrix Hermiticity drift {drift:.3e}")
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"density matrix trace {tr} deviates from 1")
    wmin = float(np.linalg.eigvalsh(rho)[0])
    if wmin < -eig_tol:
        raise ValueError(f"density matrix eigenvalue {wmin:.3e} below -{eig_tol:.0e}")
    return rho


def von_neumann_entropy(rho):
    """S(rho) = -tr(rho ln rho), eigenvalues below 1e-14 contributing zero."""
    w = np.linalg.eigvalsh(np.asarray(rho))
    if w[0] < -NEGATIVE_EIG_TOL:
        raise ValueError(f"negative eigenvalue {w[0]:.3e} beyond tolerance")
    w = w[w > EIG_FLOOR]
    return float(-np.sum(w * np.log(w)))


def relative_entropy(state, reference):
    """Relative entropy of `state` with respect to `reference`.

    Computes tr(rho ln rho - rho ln sigma) for rho = state, sigma = reference;
    non-negative (Klein inequality) and zero iff the states coincide. The
    reference must be strictly positive, or at least carry the state's
    support; a support violation raises `SupportError` naming the deficient
    eigenspace.
    """
    rho = np.asarray(state)
    sigma = np.asarray(reference)
    if rho.shape != sigma.shape:
        raise ValueError("state dimensions differ")
    ws, vs = np.linalg.eigh(sigma)
    null = ws <= EIG_FLOOR
    if np.any(null):
        null_vecs = vs[:, null]
        mass = float(np.real(np.sum(null_vecs.conj() * (rho @ null_vecs))))
        if mass > 1e-12:
            raise SupportError(
                f"reference state has {int(null.sum())} null direction(s) "
                f"carrying state mass {mass:.3e}"
            )
    wr = np.linalg.eigvalsh(rho)
    if wr[0] < -NEGATIVE_EIG_TOL:
        raise ValueError(f"state eigenvalue {wr[0]:.3e} beyond tolerance")
    wr = wr[wr > EIG_FLOOR]
    s_rho = float(np.sum(wr * np.log(wr)))  # tr(rho ln rho)
    keep = ~null
    diag = np.real(np.einsum("ik,ij,jk->k", vs[:, keep].conj(), rho, vs[:, keep]))
    cross = float(np.sum(diag * np.log(ws[keep])))  # tr(rho ln sigma) on the support
    return s_rho - cross


def purity(rho):
    """tr(rho^2)."""
    rho = np.asarray(rho)
    return float(np.real(np.einsum("ij,ji->", rho, rho)))


__all__ = [
    "GibbsParams", "GibbsResult", "SupportError", "gibbs_state", "reference_state",
    "evolve_state", "von_neumann_entropy", "relative_entropy", "purity",
    "validate_density_matrix", "EIG_FLOOR",
]
