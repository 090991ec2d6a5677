"""Householder rotations and their differentials.

A Householder rotation ``H = 2 u u^T - I`` with ``u`` the normalized bisector
of two unit vectors is a proper rotation by pi about ``u``; it maps each of the
two vectors onto the other. All routines work in 3-D; planar vectors are
embedded at ``z = 0``.
"""

from __future__ import annotations

import numpy as np

ANTIPODAL_TOL = 1e-9


class AntipodalInputs(ValueError):
    """The bisector of the two directions is undefined (they are opposite)."""


def embed3(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] == 3:
        return v
    if v.shape[-1] != 2:
        raise ValueError(f"expected a 2-D or 3-D vector, got shape {v.shape}")
    pad = np.zeros(v.shape[:-1] + (1,))
    return np.concatenate([v, pad], axis=-1)


def skew(v) -> np.ndarray:
    """Cross-product matrix ``[v]_x`` with ``[v]_x w = v x w``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _antipodal_axis(nu_f: np.ndarray) -> np.ndarray:
    # smallest-index canonical axis not parallel to nu_f, orthogonalized
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        if abs(nu_f @ e) < 1.0 - 1e-6:
            w = e - (nu_f @ e) * nu_f
            return w / np.linalg.norm(w)
    raise AssertionError("unreachable for a unit vector")


def householder(nu_f, nu_e, allow_antipodal: bool = False) -> np.ndarray:
    """Householder rotation mapping ``nu_f`` onto ``nu_e``.

    Parameters
    ----------
    nu_f, nu_e : array_like
        Unit vectors (2-D inputs are embedded in the ``z = 0`` plane).
    allow_antipodal : bool
        When the inputs are opposite, return a rotation by pi about the
        smallest-index canonical axis orthogonal to ``nu_f`` instead of
        raising.

    Returns
    -------
    ndarray, shape (3, 3)
        Symmetric, orthonormal, determinant one, ``H @ nu_f == nu_e``.
    """
    nu_f = embed3(nu_f)
    nu_e = embed3(nu_e)
    for name, v in (("nu_F", nu_f), ("nu_E", nu_e)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError(f"{name} must be a unit vector")
    u_prime = nu_f + nu_e
    norm = np.linalg.norm(u_prime)
    if norm < ANTIPODAL_TOL:
        if not allow_antipodal:
            raise AntipodalInputs("nu_F and nu_E are antipodal")
        u = _antipodal_axis(nu_f)
    else:
        u = u_prime / norm
    return 2.0 * np.outer(u, u) - np.eye(3)


def householder_m_matrix(nu_f, nu_e) -> np.ndarray:
    """Matrix ``M`` with ``d/dt H = H [-2 M nu_f_rate]_x``.

    ``nu_f`` need not be unit length: the factor ``(I - nu nu^T) / |nu|`` maps
    the rate of an unnormalized direction to the rate of its normalization.
    """
    nu_f = embed3(nu_f)
    nu_e = embed3(nu_e)
    nu_norm = np.linalg.norm(nu_f)
    nu_hat = nu_f / nu_norm
    u_prime = nu_hat + nu_e
    up_norm = np.linalg.norm(u_prime)
    if up_norm < ANTIPODAL_TOL:
        raise AntipodalInputs("nu_F and nu_E are antipodal")
    u = u_prime / up_norm
    eye = np.eye(3)
    return skew(u) @ (eye - np.outer(u, u)) @ (eye - np.outer(nu_hat, nu_hat)) / (up_norm * nu_norm)


def householder_differential(nu_f, nu_e, nu_f_rate) -> np.ndarray:
    """Time derivative of ``householder(nu_f(t), nu_e)``.

    Returns ``H [-2 M nu_f_rate]_x``; the radial part of ``nu_f_rate`` is
    projected out by ``M``.
    """
    H = householder(nu_f, nu_e)
    M = householder_m_matrix(nu_f, nu_e)
    return H @ skew(-2.0 * M @ embed3(nu_f_rate))
