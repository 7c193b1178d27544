"""Shared dense linear-algebra helpers: norms, Hermiticity policy, unitary exponentials."""

import numpy as np

#: entrywise drift below which a matrix is accepted as Hermitian outright
HERMITIAN_TOL = 1e-12
#: drift above HERMITIAN_TOL but below this is repaired by symmetrization
HERMITIAN_REPAIR_TOL = 1e-8


class NonHermitianError(ValueError):
    """Operator fails the Hermiticity certificate beyond the repairable band."""


def max_abs(a):
    """Entrywise max-modulus norm ||A||_max."""
    a = np.asarray(a)
    return 0.0 if a.size == 0 else float(np.max(np.abs(a)))


def hermiticity_drift(a):
    """||A - A^dagger||_max."""
    return max_abs(a - a.conj().T)


def is_hermitian(a, tol=HERMITIAN_TOL):
    return hermiticity_drift(a) <= tol


def ensure_hermitian(a, name="operator"):
    """Certify `a` as Hermitian.

    Drift <= 1e-12 passes unchanged; drift below 1e-8 is repaired by
    A <- (A + A^dagger)/2; anything larger is a hard error.
    """
    a = np.asarray(a)
    drift = hermiticity_drift(a)
    if drift <= HERMITIAN_TOL:
        return a
    if drift < HERMITIAN_REPAIR_TOL:
        return 0.5 * (a + a.conj().T)
    raise NonHermitianError(f"{name}: Hermiticity drift {drift:.3e} exceeds {HERMITIAN_REPAIR_TOL:.0e}")


def symmetrize(a):
    """(A + A^dagger)/2, without certification."""
    return 0.5 * (a + np.asarray(a).conj().T)


def spectral_norm(a):
    """Operator 2-norm of a Hermitian matrix (max |eigenvalue|)."""
    if a.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(a))))


# -- unitary exponentials ----------------------------------------------------

# Taylor threshold: after scaling, |dt|*||h|| <= _TAYLOR_THETA keeps the
# degree-8 remainder below 3e-17.
_TAYLOR_THETA = 0.1
# below this dimension the spectral route is at least as fast as Taylor
_TAYLOR_MIN_DIM = 129


def expm_hermitian_spectral(h, dt):
    """exp(-i*dt*h) for Hermitian h via eigendecomposition (exactly unitary)."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * dt * w)) @ v.conj().T


def _cos_sin_taylor(x):
    """(cos(x), sin(x)) of a square matrix with ||x|| <= theta, degree 8/9."""
    eye = np.eye(x.shape[0], dtype=x.dtype)
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    x8 = x4 @ x4
    c = eye - x2 / 2.0 + x4 / 24.0 - x6 / 720.0 + x8 / 40320.0
    s = x @ (eye - x2 / 6.0 + x4 / 120.0 - x6 / 5040.0 + x8 / 362880.0)
    return c, s


def expm_hermitian_taylor(h, dt):
    """exp(-i*dt*h) via scaled cos/sin Taylor series.

    For real-symmetric h the powers stay in real arithmetic, which is the
    fast path for large one-particle matrices. Truncation error < 1e-16.
    """
    nrm = abs(dt) * float(np.linalg.norm(h, np.inf))
    squarings = max(0, int(np.ceil(np.log2(nrm / _TAYLOR_THETA)))) if nrm > _TAYLOR_THETA else 0
    x = (dt / 2.0**squarings) * h
    c, s = _cos_sin_taylor(x)
    u = c - 1j * s
    for _ in range(squarings):
        u = u @ u
    return u


def expm_unitary(h, dt, method="auto"):
    """exp(-i*dt*h) for Hermitian h.

    method: "spectral", "taylor", or "auto" (Taylor for large real-symmetric
    matrices, spectral otherwise).
    """
    if method == "spectral":
        return expm_hermitian_spectral(h, dt)
    if method == "taylor":
        return expm_hermitian_taylor(h, dt)
    if h.shape[0] >= _TAYLOR_MIN_DIM and np.isrealobj(h):
        return expm_hermitian_taylor(h, dt)
    return expm_hermitian_spectral(h, dt)


def unitarity_defect(u):
    """||U^dagger U - 1||_max."""
    return max_abs(u.conj().T @ u - np.eye(u.shape[0]))
