"""Marginal spline bases and the orthogonalized tensor-product basis.

Vectorization convention used everywhere in the package: a ``T x F`` surface
``Y`` is flattened column-major with time varying fastest, so that
``y[t + T * f] == Y[t, f]``.  Coefficient vectors of length ``K = K_T * K_F``
follow the same rule, ``beta[kt + K_T * kf] == B[kt, kf]``, which makes the
tensor basis ``kron(psi, phi)``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import BSpline

from .errors import InvalidDegreeError, InvalidGridError, RankDeficiencyError, ShapeError

_RANK_TOL = 1e-10


def vec(mat):
    """Column-major flatten of a ``(..., K_T, K_F)`` array."""
    mat = np.asarray(mat)
    return np.swapaxes(mat, -1, -2).reshape(mat.shape[:-2] + (-1,))


def unvec(beta, n_time, n_freq):
    """Inverse of :func:`vec`; returns ``(..., n_time, n_freq)``."""
    beta = np.asarray(beta)
    return np.swapaxes(beta.reshape(beta.shape[:-1] + (n_freq, n_time)), -1, -2)


@dataclass(frozen=True, eq=False)
class MarginalBasis:
    """Natural cubic B-spline basis evaluated on one grid.

    ``knots`` and ``constraint`` live on the rescaled ``[0, 1]`` axis;
    ``evaluate`` accepts points in original units.
    """

    grid_points: np.ndarray
    eval_matrix: np.ndarray
    knots: np.ndarray
    constraint: np.ndarray
    lower: float
    upper: float
    kind: str = "natural_cubic_bspline"

    @property
    def K_dim(self):
        return self.eval_matrix.shape[1]

    @property
    def n_points(self):
        return self.eval_matrix.shape[0]

    def rescale(self, points):
        return (np.asarray(points, dtype=float) - self.lower) / (self.upper - self.lower)

    def _raw(self, s, nu=0):
        n_raw = len(self.knots) - 4
        out = np.empty((len(s), n_raw))
        for i in range(n_raw):
            coef = np.zeros(n_raw)
            coef[i] = 1.0
            spl = BSpline(self.knots, coef, 3, extrapolate=True)
            out[:, i] = spl(s, nu=nu) if nu else spl(s)
        return out

    def evaluate(self, points, nu=0):
        """Basis values (or ``nu``-th derivatives w.r.t. original units) at ``points``."""
        s = np.atleast_1d(self.rescale(points))
        scale = (self.upper - self.lower) ** (-nu)
        return scale * self._raw(s, nu) @ self.constraint


def _natural_constraint(knots):
    n_raw = len(knots) - 4
    cmat = np.empty((2, n_raw))
    for i in range(n_raw):
        coef = np.zeros(n_raw)
        coef[i] = 1.0
        d2 = BSpline(knots, coef, 3).derivative(2)
        cmat[:, i] = d2(np.array([0.0, 1.0]))
    # orthonormal basis of the null space of the two boundary constraints
    q, _ = np.linalg.qr(cmat.T, mode="complete")
    return q[:, 2:]


def build_natural_cubic_basis(grid, K_dim):
    """Natural cubic B-spline basis of dimension ``K_dim`` on ``grid``.

    Uses ``K_dim - 2`` evenly spaced interior knots between the grid
    extremes. The raw cubic B-spline space (dimension ``K_dim + 2``) is cut
    down by requiring zero second derivative at both boundaries.
    """
    grid = np.asarray(grid, dtype=float)
    if K_dim < 4:
        raise InvalidDegreeError(f"natural cubic basis needs K_dim >= 4, got {K_dim}")
    if grid.ndim != 1 or len(grid) < 2 or not np.all(np.diff(grid) > 0):
        raise InvalidGridError("grid must be a strictly increasing 1-d sequence")
    if len(grid) < K_dim:
        raise InvalidGridError(f"grid has {len(grid)} points, fewer than K_dim={K_dim}")

    lower, upper = float(grid[0]), float(grid[-1])
    interior = np.linspace(0.0, 1.0, K_dim)[1:-1]
    knots = np.concatenate([np.zeros(4), interior, np.ones(4)])
    constraint = _natural_constraint(knots)
    basis = MarginalBasis(grid, np.empty((len(grid), K_dim)), knots, constraint, lower, upper)
    evals = basis.evaluate(grid)
    basis = MarginalBasis(grid, evals, knots, constraint, lower, upper)

    sv = np.linalg.svd(evals, compute_uv=False)
    if sv[-1] <= _RANK_TOL * sv[0]:
        raise RankDeficiencyError("grid", "natural cubic basis is rank deficient on this grid")
    return basis


def _canonical_clusters(s, v, tol=1e-8):
    """Fix the free rotation inside groups of (numerically) equal singular values.

    Within each group the coordinate axes are projected onto the group's
    right-singular subspace and orthonormalized in order of decreasing
    projected length, so that e.g. an already orthonormal matrix gets the
    identity rotation.
    """
    v = v.copy()
    start = 0
    while start < len(s):
        stop = start + 1
        while stop < len(s) and s[start] - s[stop] <= tol * s[0]:
            stop += 1
        if stop - start > 1:
            block = v[:, start:stop]
            proj = block @ block.T
            order = np.argsort(-np.round(np.diag(proj), 8), kind="stable")
            cols = []
            for axis in order:
                c = proj[:, axis].copy()
                for prev in cols:
                    c -= (prev @ c) * prev
                norm = np.linalg.norm(c)
                if norm > 1e-6:
                    cols.append(c / norm)
                if len(cols) == stop - start:
                    break
            v[:, start:stop] = np.column_stack(cols)
        start = stop
    return v


def _signed_svd(mat):
    _, s, vt = np.linalg.svd(mat, full_matrices=False)
    v = _canonical_clusters(s, vt.T)
    u = mat @ v / s
    # largest-magnitude entry of every right-singular vector made positive
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs, s, v * signs


@dataclass(frozen=True, eq=False)
class TensorBasis:
    time: MarginalBasis
    freq: MarginalBasis
    rot_time: np.ndarray
    rot_freq: np.ndarray
    sv_time: np.ndarray
    sv_freq: np.ndarray
    ortho_time: np.ndarray = field(repr=False)
    ortho_freq: np.ndarray = field(repr=False)

    @property
    def K_T(self):
        return self.time.K_dim

    @property
    def K_F(self):
        return self.freq.K_dim

    @property
    def K(self):
        return self.K_T * self.K_F

    @property
    def T(self):
        return self.time.n_points

    @property
    def F(self):
        return self.freq.n_points

    @cached_property
    def gram_diag(self):
        return np.kron(self.sv_freq**2, self.sv_time**2)

    @cached_property
    def ortho_eval(self):
        """Dense ``(T*F, K)`` orthogonalized evaluation matrix."""
        return np.kron(self.ortho_freq, self.ortho_time)

    @cached_property
    def raw_eval(self):
        return np.kron(self.freq.eval_matrix, self.time.eval_matrix)

    def rotate(self, coef):
        """Map raw tensor coefficients to the orthogonalized parametrization."""
        mat = unvec(coef, self.K_T, self.K_F)
        return vec(self.rot_time.T @ mat @ self.rot_freq)

    def unrotate(self, coef):
        mat = unvec(coef, self.K_T, self.K_F)
        return vec(self.rot_time @ mat @ self.rot_freq.T)

    def _as_batch(self, y, length, name):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != length:
            raise ShapeError(f"{name} has trailing length {y.shape[-1]}, expected {length}")
        return y

    def project(self, y):
        """Least-squares basis coefficients ``(O'O)^{-1} O' y`` for one or many responses."""
        y = self._as_batch(y, self.T * self.F, "response")
        surf = y.reshape(y.shape[:-1] + (self.F, self.T))
        coef = np.einsum("...ft,tk,fm->...mk", surf, self.ortho_time, self.ortho_freq)
        return coef.reshape(y.shape[:-1] + (self.K,)) / self.gram_diag

    def synthesize(self, beta):
        """``O @ beta`` for one or many coefficient vectors."""
        beta = self._as_batch(beta, self.K, "coefficient vector")
        cmat = beta.reshape(beta.shape[:-1] + (self.K_F, self.K_T))
        surf = np.einsum("...mk,tk,fm->...ft", cmat, self.ortho_time, self.ortho_freq)
        return surf.reshape(beta.shape[:-1] + (self.T * self.F,))

    def surface(self, beta):
        """Coefficients to ``(..., T, F)`` surfaces on the grid."""
        y = self.synthesize(beta)
        return np.swapaxes(y.reshape(y.shape[:-1] + (self.F, self.T)), -1, -2)


def build_tensor_basis(time, freq):
    """Orthogonalize two marginal bases through their SVDs."""
    parts = {}
    for name, marg in (("time", time), ("freq", freq)):
        u, s, v = _signed_svd(marg.eval_matrix)
        if s[-1] <= _RANK_TOL * s[0]:
            raise RankDeficiencyError(name)
        parts[name] = (u * s, s, v)
    (ot, st, vt), (of, sf, vf) = parts["time"], parts["freq"]
    return TensorBasis(time, freq, vt, vf, st, sf, ot, of)


def project(basis, y):
    return basis.project(y)
