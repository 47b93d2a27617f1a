"""Structured marginal covariance of one subject's stacked projected data.

After projection, subject ``i``'s stacked coefficients ``(y~_ij - alpha_j)``
over ``j in J_i`` have covariance

    sigma_gamma^2 (1 1' kron I_K) + sigma_omega_i^2 I + sigma_eps^2 (I kron D^{-1}).

For a fixed basis index ``l`` this is ``s 1 1' + c_l I`` on the ``J_i``
conditions with ``c_l = sigma_omega_i^2 + sigma_eps^2 / d_l``, so the inverse
follows from Sherman-Morrison: block ``(j, j')`` of the inverse is
``diag(delta_jj' a + b)`` with ``a = 1 / c`` and ``b = -s / (c (c + J_i s))``.
"""

import numpy as np


def inverse_weights(counts, gram_diag, sigma_gamma2, sigma_omega2, sigma_eps2):
    """Sherman-Morrison weights ``(a, b)``, each of shape ``(n, K)``.

    ``sigma_gamma2`` or ``sigma_omega2`` set to 0 drop that random-effect level.
    ``sigma_omega2`` may be a scalar or a length-``n`` array.
    """
    counts = np.asarray(counts, dtype=float)
    s_om = np.broadcast_to(np.asarray(sigma_omega2, dtype=float), counts.shape)
    c = s_om[:, None] + sigma_eps2 / np.asarray(gram_diag)[None, :]
    a = 1.0 / c
    b = -sigma_gamma2 / (c * (c + counts[:, None] * sigma_gamma2))
    return a, b


def subject_covariance(n_cond, gram_diag, sigma_gamma2, sigma_omega2, sigma_eps2):
    """Dense ``(J_i K) x (J_i K)`` covariance, conditions outermost."""
    K = len(gram_diag)
    ones = np.ones((n_cond, n_cond))
    return (sigma_gamma2 * np.kron(ones, np.eye(K))
            + sigma_omega2 * np.eye(n_cond * K)
            + sigma_eps2 * np.kron(np.eye(n_cond), np.diag(1.0 / np.asarray(gram_diag))))


def dense_inverse_from_weights(a_i, b_i, n_cond):
    """Assemble the dense inverse for one subject from its weights."""
    return np.kron(np.eye(n_cond), np.diag(a_i)) + np.kron(np.ones((n_cond, n_cond)), np.diag(b_i))
