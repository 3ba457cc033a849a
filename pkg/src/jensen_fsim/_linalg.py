"""Symmetric solves with the package-wide jitter policy."""

import numpy as np
from scipy import linalg

from .errors import IllConditionedError

JITTER_START = 1e-10
JITTER_MAX = 1e-6


def jittered_cho_factor(M):
    """Cholesky-factor a symmetric PSD matrix, escalating diagonal jitter on failure.

    Jitter is relative to the mean diagonal: 1e-10, 1e-9, ..., 1e-6.
    Returns ``(cho, jitter)`` where ``cho`` is usable with ``scipy.linalg.cho_solve``.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise IllConditionedError("matrix has non-finite entries")
    scale = float(np.mean(np.diag(M)))
    if not scale > 0:
        scale = 1.0
    try:
        return linalg.cho_factor(M, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(M.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            return linalg.cho_factor(M + jitter * scale * eye, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise IllConditionedError(
        f"matrix not positive definite after jitter {JITTER_MAX:g} x mean diagonal"
    )


def jittered_solve(M, B):
    cho, _ = jittered_cho_factor(M)
    return linalg.cho_solve(cho, B, check_finite=False)


def jittered_inverse(M):
    return jittered_solve(M, np.eye(np.asarray(M).shape[0]))


class PenalizedLS:
    """Penalized least squares ``min |y - Phi c|^2 + lam |R c|^2`` via QR of ``[Phi; sqrt(lam) R]``.

    Forming ``Phi'Phi + lam P`` squares the condition number; at large ``lam`` the
    unpenalized (null-space) directions are then lost to rounding. The QR route keeps
    them. If the stacked matrix is rank deficient, ridge rows are appended with the
    same escalation as :func:`jittered_cho_factor`.
    """

    _RANK_TOL = 1e-13

    def __init__(self, Phi, R_pen, lam):
        Phi = np.asarray(Phi, dtype=float)
        n, K = Phi.shape
        A = np.vstack([Phi, np.sqrt(float(lam)) * R_pen])
        if not np.all(np.isfinite(A)):
            raise IllConditionedError("design or penalty has non-finite entries")
        scale = float(np.sum(A * A)) / K
        if not scale > 0:
            scale = 1.0
        jitter = 0.0
        while True:
            B = A if jitter == 0.0 else np.vstack([A, np.sqrt(jitter * scale) * np.eye(K)])
            Q, R = linalg.qr(B, mode="economic", check_finite=False)
            r = np.abs(np.diag(R))
            if r.min() > self._RANK_TOL * r.max():
                break
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise IllConditionedError(
                    f"penalized design rank deficient after jitter {JITTER_MAX:g} x mean diagonal")
        self.Q1 = Q[:n]
        self.R = R
        self.jitter = jitter

    def coef(self, y):
        return linalg.solve_triangular(self.R, self.Q1.T @ y, check_finite=False)

    def inv_apply(self, B):
        """``(Phi'Phi + lam P)^-1 B``."""
        W = linalg.solve_triangular(self.R, B, trans="T", check_finite=False)
        return linalg.solve_triangular(self.R, W, check_finite=False)

    def weights(self, b):
        """Row vector ``u = b' M^-1 Phi'`` so that ``u @ y = b' coef(y)``."""
        return self.Q1 @ linalg.solve_triangular(self.R, b, trans="T", check_finite=False)

    def hat_traces(self):
        """``tr(S)`` and ``tr(S S')`` for ``S = Phi M^-1 Phi' = Q1 Q1'``."""
        G = self.Q1.T @ self.Q1
        return float(np.sum(self.Q1 * self.Q1)), float(np.sum(G * G))

    def smoother(self):
        S = self.Q1 @ self.Q1.T
        return 0.5 * (S + S.T)
