"""Random variate generators used by the Gibbs sampler.

All samplers take an explicit ``numpy.random.Generator``; nothing here touches
global random state.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SamplerDegenerateError, ShapeError

ATTEMPT_BUDGET = 1_000_000
_BATCH = 32


@dataclass
class FisherBinghamParams:
    """Density ``exp(linear' x - x' quadratic x / 2)`` on the unit sphere."""

    linear: np.ndarray
    quadratic: np.ndarray

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float).ravel()
        self.quadratic = np.atleast_2d(np.asarray(self.quadratic, dtype=float))
        d = len(self.linear)
        if self.quadratic.shape != (d, d):
            raise ShapeError(f"quadratic must be {d}x{d}, got {self.quadratic.shape}")
        if not np.allclose(self.quadratic, self.quadratic.T, rtol=0, atol=1e-10 * max(1.0, np.abs(self.quadratic).max())):
            raise DomainError("quadratic term must be symmetric")
        self.quadratic = 0.5 * (self.quadratic + self.quadratic.T)

    @property
    def dim(self):
        return len(self.linear)


@dataclass
class RejectionTelemetry:
    """Running proposal/acceptance counts for a rejection sampler."""

    proposals: int = 0
    accepted: int = 0
    calls: int = 0
    worst_rate: float = 1.0
    history: list = field(default_factory=list, repr=False)

    def record(self, proposals, accepted=1):
        self.calls += 1
        self.proposals += proposals
        self.accepted += accepted
        self.worst_rate = min(self.worst_rate, accepted / max(proposals, 1))

    @property
    def acceptance_rate(self):
        return self.accepted / self.proposals if self.proposals else float("nan")

    def as_dict(self):
        return {"calls": self.calls, "proposals": self.proposals, "accepted": self.accepted,
                "acceptance_rate": self.acceptance_rate, "worst_rate": self.worst_rate}


def _acg_b(lam):
    """Root ``b`` of ``sum 1 / (b + 2 lam_i) = 1`` for eigenvalues with min 0.

    The left side is convex and decreasing in ``b`` and the root lies in
    ``[1, q]``, so Newton steps started at ``b = 1`` increase monotonically.
    """
    q = len(lam)
    two_lam = 2.0 * lam
    if not np.any(two_lam > 0):
        return float(q)
    b = 1.0
    for _ in range(100):
        w = 1.0 / (b + two_lam)
        f = w.sum() - 1.0
        step = f / (w @ w)
        b = min(b + step, float(q))
        if step <= 1e-13 * b:
            break
    return b


def _mode_on_sphere(linear, evals, evecs):
    """Maximizer of ``g'x - x'Sx/2`` on the sphere via the secular equation.

    Solves ``||(S + lam I)^{-1} g|| = 1`` for ``lam > -min(eig S)`` with
    bracketed Newton steps on ``1 - 1 / ||x(lam)||``.
    """
    gp = evecs.T @ linear
    gnorm = np.linalg.norm(gp)
    shifted = evals - evals[0]
    tiny = 1e-12 * max(1.0, gnorm, abs(evals[-1]))
    lo, hi = tiny, gnorm + tiny
    norm_lo = np.linalg.norm(gp / (shifted + lo))
    if norm_lo <= 1.0:
        # hard case: linear term has (almost) no weight on the bottom eigenvector
        x = gp / (shifted + lo)
        x[0] = np.sqrt(max(0.0, 1.0 - np.sum(x[1:] ** 2)))
        x = evecs @ x
        return x / np.linalg.norm(x)
    mu = hi
    for _ in range(100):
        x = gp / (shifted + mu)
        nx = math.sqrt(x @ x)
        if abs(nx - 1.0) < 1e-12:
            break
        if nx > 1.0:
            lo = mu
        else:
            hi = mu
        dnx = -(x @ (x / (shifted + mu))) / nx
        trial = mu - (1.0 - 1.0 / nx) / (dnx / nx**2)
        mu = trial if lo < trial < hi else 0.5 * (lo + hi)
        if hi - lo < 1e-14 * max(1.0, hi):
            break
    x = evecs @ (gp / (shifted + mu))
    return x / np.linalg.norm(x)


def sample_fisher_bingham(params, rng, telemetry=None, max_attempts=ATTEMPT_BUDGET, context=None):
    """One draw from the Fisher-Bingham distribution on the unit sphere.

    Rejection sampling with an angular central Gaussian envelope for a
    Bingham density. The linear term is folded into the Bingham part through
    ``t <= (t^2 + a^2) / (2a)`` with ``a = g'x*`` at the density mode ``x*``,
    so the envelope touches the target at its mode regardless of how
    anisotropic the quadratic term is.
    """
    g, S = params.linear, params.quadratic
    d = params.dim
    if d == 1:
        # the sphere is {-1, +1}; quadratic term is constant there
        p_plus = 1.0 / (1.0 + np.exp(-2.0 * g[0]))
        if telemetry is not None:
            telemetry.record(1)
        return np.array([1.0 if rng.random() < p_plus else -1.0])

    evals, evecs = np.linalg.eigh(S)
    gnorm = np.linalg.norm(g)
    if gnorm > 0:
        xstar = _mode_on_sphere(g, evals, evecs)
        a = max(float(g @ xstar), 1e-8 * gnorm)
        A = 0.5 * S - np.outer(g, g) / (2.0 * a)
        lam, P = np.linalg.eigh(0.5 * (A + A.T))
    else:
        a = None
        lam, P = 0.5 * evals, evecs
    lam = np.maximum(lam - lam[0], 0.0)
    b = _acg_b(lam)
    omega = 1.0 + 2.0 * lam / b
    log_m = -(d - b) / 2.0 + (d / 2.0) * np.log(d / b)
    sd = 1.0 / np.sqrt(omega)

    tried = 0
    while tried < max_attempts:
        batch = min(_BATCH, max_attempts - tried)
        z = rng.standard_normal((batch, d)) * sd
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        quad = np.einsum("bi,i,bi->b", z, lam, z)
        log_ratio = -quad + (d / 2.0) * np.log(np.einsum("bi,i,bi->b", z, omega, z)) - log_m
        x = z @ P.T
        if a is not None:
            t = x @ g
            log_ratio -= (t - a) ** 2 / (2.0 * a)
        u = rng.random(batch)
        hit = np.flatnonzero(np.log(u) < log_ratio)
        if len(hit):
            k = hit[0]
            tried += k + 1
            if telemetry is not None:
                telemetry.record(tried)
            out = x[k]
            return out / np.linalg.norm(out)
        tried += batch
    if telemetry is not None:
        telemetry.record(tried, 0)
    raise SamplerDegenerateError(
        f"Fisher-Bingham sampler accepted nothing in {tried} proposals", params=params, attempts=tried,
        context=context,
    )


def sample_uniform_sphere(dim, rng):
    z = rng.standard_normal(dim)
    return z / np.linalg.norm(z)


def gig_mode(a, b, c):
    """Mode ``(c - 1 + sqrt((c - 1)^2 + a b)) / a`` of GIG(a, b, c), floored at 1e-12.

    GIG density is proportional to ``x^(c-1) exp(-(a x + b / x) / 2)``.
    """
    if not a > 0:
        raise DomainError(f"GIG parameter a must be positive, got {a}")
    if b < 0:
        raise DomainError(f"GIG parameter b must be nonnegative, got {b}")
    cm1 = c - 1.0
    return max((cm1 + np.sqrt(cm1 * cm1 + a * b)) / a, 1e-12)


def sample_inverse_gamma(shape, scale, rng, size=None):
    """Inverse-gamma draw with density proportional to ``x^(-shape-1) exp(-scale / x)``."""
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(shape <= 0) or np.any(scale <= 0):
        raise DomainError("inverse-gamma shape and scale must be positive")
    draw = scale / rng.standard_gamma(shape, size=size)
    return float(draw) if np.ndim(draw) == 0 else draw


def half_laplace_logpdf(tau, h):
    return -np.asarray(tau) / h - np.log(h)


def half_laplace_pdf(tau, h):
    return np.exp(half_laplace_logpdf(tau, h))


def orthonormal_complement(cols, dim=None):
    """Orthonormal basis of the complement of the span of ``cols``.

    ``cols`` is ``(dim, m)`` with orthonormal columns; returns ``(dim, dim - m)``.
    Column signs are fixed so the largest-magnitude entry is positive.
    """
    cols = np.asarray(cols, dtype=float)
    dim = cols.shape[0] if dim is None else dim
    if cols.size == 0:
        return np.eye(dim)
    q, _ = np.linalg.qr(cols, mode="complete")
    comp = q[:, cols.shape[1]:]
    idx = np.argmax(np.abs(comp), axis=0)
    signs = np.sign(comp[idx, np.arange(comp.shape[1])])
    return comp * np.where(signs == 0, 1.0, signs)


def sample_uniform_stiefel(rows, cols, rng):
    """Uniform draw from the Stiefel manifold of ``rows x cols`` orthonormal frames.

    QR of a Gaussian matrix with the sign of ``diag(R)`` absorbed into ``Q``.
    """
    if cols > rows:
        raise ShapeError(f"need cols <= rows, got {rows}x{cols}")
    z = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(z)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s
