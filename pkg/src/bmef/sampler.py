"""Two-block Gibbs sampler for the covariate-dependent CP mixed-effects model.

Block 1 draws the fixed effects (CP factor columns, covariate coefficients and
the spike-and-slab state) with the random effects integrated out, then the
subject effects ``gamma`` and the subject-by-condition effects ``omega``.
Block 2 draws the variance components. During burn-in the CP rank is adapted
by a warm-start rule that grows from rank 1 and prunes shrunk components.

All coefficient vectors of length ``K`` use the column-major ``vec`` layout of
:mod:`bmef.basis` (time index fastest).
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import expit

from .basis import build_natural_cubic_basis, build_tensor_basis, unvec
from .covariance import inverse_weights
from .distributions import (
    FisherBinghamParams,
    RejectionTelemetry,
    gig_mode,
    half_laplace_logpdf,
    orthonormal_complement,
    sample_fisher_bingham,
    sample_uniform_sphere,
    sample_uniform_stiefel,
)
from .errors import NumericalDivergenceError, SamplerDegenerateError, ShapeError, SpecError

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
MODEL_SPECS = ("ABC", "AB", "A")
VARIANCE_MODES = ("heterogeneous", "homogeneous")


@dataclass
class FitConfig:
    """Hyperparameters and run controls. Defaults follow the simulation study."""

    K_T: int = 6
    K_F: int = 6
    variance_mode: str = "heterogeneous"
    model_spec: str = "ABC"
    a_gamma: float = 3.0
    b_gamma: float = 0.5
    a_omega: float = 3.0
    b_omega: float = 0.5
    sigma_delta: object = 5.0
    a_delta: float = 1.0
    b_delta: float = 1.0
    h0: float = 0.01
    h1: float = 1.0
    rank_threshold: float = 0.05
    warm_start_interval: int = 100
    initial_rank: int = 1
    burn_in: int = 800
    n_draws: int = 400
    seed: int = 0
    factor_prior: object = None
    threads: int = 1
    checkpoint_every: int = 0
    store_random_effects: bool = True

    def __post_init__(self):
        if self.model_spec not in MODEL_SPECS:
            raise SpecError(f"model_spec must be one of {MODEL_SPECS}")
        if self.variance_mode not in VARIANCE_MODES:
            raise SpecError(f"variance_mode must be one of {VARIANCE_MODES}")
        if not self.h0 < self.h1:
            raise SpecError("need h0 < h1")
        if not self.rank_threshold > 0:
            raise SpecError("rank_threshold must be positive")
        if self.burn_in < 1 or self.n_draws < 1:
            raise SpecError("burn_in and n_draws must be >= 1")
        if self.initial_rank < 1 or self.initial_rank > min(self.K_T, self.K_F):
            raise SpecError("initial_rank must lie in 1..min(K_T, K_F)")
        for name in ("a_gamma", "b_gamma", "a_omega", "b_omega", "a_delta", "b_delta"):
            if not getattr(self, name) > 0:
                raise SpecError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"unknown fit config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        out = asdict(self)
        if isinstance(self.sigma_delta, np.ndarray):
            out["sigma_delta"] = self.sigma_delta.tolist()
        return out

    def sigma_delta_matrices(self, n_conditions, p):
        """Per-condition prior covariance ``(J, p, p)``."""
        sd = np.asarray(self.sigma_delta, dtype=float)
        if sd.ndim == 0:
            mats = np.broadcast_to(sd * np.eye(p), (n_conditions, p, p))
        elif sd.ndim == 2:
            mats = np.broadcast_to(sd, (n_conditions, p, p))
        else:
            mats = sd
        if mats.shape != (n_conditions, p, p):
            raise SpecError(f"sigma_delta has shape {sd.shape}, incompatible with J={n_conditions}, p={p}")
        return np.array(mats)


def load_fit_config(path, **overrides):
    """Read a JSON or TOML fit config; ``overrides`` replace file values."""
    path = str(path)
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    else:
        with open(path) as fh:
            data = json.load(fh)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return FitConfig.from_dict(data)


@dataclass
class CPFixedEffect:
    """CP representation ``A_j(x) = sum_r (delta_jr' x) u_r v_r'`` in rotated coordinates."""

    U: np.ndarray
    V: np.ndarray
    delta: np.ndarray
    tau: np.ndarray
    m: np.ndarray
    pi: float
    slots: np.ndarray = None

    def __post_init__(self):
        if self.slots is None:
            self.slots = np.arange(self.rank)

    @property
    def rank(self):
        return self.U.shape[1]

    def copy(self):
        return CPFixedEffect(self.U.copy(), self.V.copy(), self.delta.copy(), self.tau.copy(),
                             self.m.copy(), float(self.pi), self.slots.copy())

    def weights(self, X, conditions):
        """``lambda`` of shape ``(len(X), R)`` for rows of ``X`` under ``conditions``."""
        return np.einsum("nrp,np->nr", self.delta[conditions], X)

    def outer_vecs(self):
        """Rows ``vec(u_r v_r')`` stacked into ``(R, K)``."""
        # kron(v, u) == outer(v, u).ravel()
        return np.einsum("fr,tr->rft", self.V, self.U).reshape(self.rank, -1)

    def coefficients(self, x, j):
        lam = self.delta[j] @ np.asarray(x, dtype=float)
        return lam @ self.outer_vecs()

    def orthonormality_error(self):
        R = self.rank
        return max(np.abs(self.U.T @ self.U - np.eye(R)).max(), np.abs(self.V.T @ self.V - np.eye(R)).max())


@dataclass
class RandomEffectState:
    gamma: np.ndarray
    omega: np.ndarray
    sigma_gamma2: float
    sigma_omega2: object
    sigma_eps2: float

    def copy(self):
        so = self.sigma_omega2
        return RandomEffectState(self.gamma.copy(), self.omega.copy(), float(self.sigma_gamma2),
                                 so.copy() if isinstance(so, np.ndarray) else float(so), float(self.sigma_eps2))

    def omega_variances(self, n):
        return np.broadcast_to(np.asarray(self.sigma_omega2, dtype=float), (n,))


def _sym_orthonormalize(M):
    w, Q = np.linalg.eigh(M.T @ M)
    return M @ (Q / np.sqrt(w)) @ Q.T


class GibbsSampler:
    """Holds projected data and the current state; one method per conditional update.

    The ``*_conditional`` / ``*_params`` methods return the exact parameters of
    each full conditional and are what the tests compare against dense
    oracles; the ``update_*`` methods draw from them.
    """

    def __init__(self, ds, cfg, basis=None, rng=None):
        self.ds = ds
        self.cfg = cfg
        if basis is None:
            basis = build_tensor_basis(build_natural_cubic_basis(ds.time_grid, cfg.K_T),
                                       build_natural_cubic_basis(ds.freq_grid, cfg.K_F))
        if (basis.K_T, basis.K_F) != (cfg.K_T, cfg.K_F):
            raise SpecError("basis dimensions disagree with the fit config")
        self.basis = basis
        self.rng = np.random.default_rng(cfg.seed) if rng is None else rng
        self.telemetry = RejectionTelemetry()

        self.X = ds.covariates
        self.n, self.p = self.X.shape
        self.J = ds.n_conditions
        self.K_T, self.K_F, self.K = basis.K_T, basis.K_F, basis.K
        self.d = basis.gram_diag
        self.subj = ds.pair_subject
        self.cond = ds.pair_condition
        self.counts = ds.condition_counts.astype(float)
        self.Zt = ds.design.T
        self.Xp = self.X[self.subj]
        self.ytil = basis.project(ds.responses)
        fitted = basis.synthesize(self.ytil)
        self.rss0 = float(np.sum((ds.responses - fitted) ** 2))
        self.n_obs = ds.n_pairs * basis.T * basis.F
        self.cond_rows = [np.flatnonzero(self.cond == j) for j in range(self.J)]

        self.use_gamma = cfg.model_spec in ("ABC", "AB")
        self.use_omega = cfg.model_spec == "ABC"
        self.homogeneous = cfg.variance_mode == "homogeneous"
        self.sigma_delta = cfg.sigma_delta_matrices(self.J, self.p)
        self.sigma_delta_inv = np.linalg.inv(self.sigma_delta)
        self.additions_disabled = False
        self._weights_cache = None
        self._cache = {}
        self.iteration = 0
        self.rank_history = []
        self._prior_dirs = self._factor_prior_dirs(cfg.factor_prior)
        self.fixed, self.state = self.initial_state()

    @property
    def fixed(self):
        return self._fixed

    @fixed.setter
    def fixed(self, value):
        self._fixed = value
        self._cache = {}

    # ------------------------------------------------------------------ setup
    def _factor_prior_dirs(self, spec):
        if spec is None or spec == "uniform" or (isinstance(spec, dict) and spec.get("type", "uniform") == "uniform"):
            return None
        if not isinstance(spec, dict) or spec.get("type") != "mvmf":
            raise SpecError("factor_prior must be 'uniform' or {'type': 'mvmf', ...}")
        nu = float(spec["nu"])
        ft = np.asarray(spec["time_directions"], dtype=float)
        ff = np.asarray(spec["freq_directions"], dtype=float)
        if nu <= 0 or ft.shape[0] != self.K_T or ff.shape[0] != self.K_F:
            raise SpecError("mvmf prior needs nu > 0 and direction matrices with K_T / K_F rows")
        return {"U": ft, "V": ff, "nu": nu}

    def initial_state(self):
        cfg, rng = self.cfg, self.rng
        R = cfg.initial_rank
        fixed = CPFixedEffect(
            U=sample_uniform_stiefel(self.K_T, R, rng),
            V=sample_uniform_stiefel(self.K_F, R, rng),
            delta=np.zeros((self.J, R, self.p)),
            tau=np.full(R, cfg.h1),
            m=np.ones(R, dtype=int),
            pi=0.5,
        )
        dof = self.ds.n_pairs * (self.basis.T * self.basis.F - self.K)
        s_eps = self.rss0 / dof if dof > 0 and self.rss0 > 0 else 1.0
        s_g = cfg.b_gamma / (cfg.a_gamma - 1.0) if cfg.a_gamma > 1 else cfg.b_gamma
        s_o = cfg.b_omega / (cfg.a_omega - 1.0) if cfg.a_omega > 1 else cfg.b_omega
        state = RandomEffectState(
            gamma=np.zeros((self.n, self.K)),
            omega=np.zeros((self.ds.n_pairs, self.K)),
            sigma_gamma2=s_g if self.use_gamma else 0.0,
            sigma_omega2=(s_o if self.homogeneous else np.full(self.n, s_o)) if self.use_omega else 0.0,
            sigma_eps2=max(s_eps, VARIANCE_FLOOR),
        )
        return fixed, state

    # ------------------------------------------------------------ quantities
    def lambdas(self, fixed=None):
        if fixed is None:
            return self._memo("lam", lambda: self.fixed.weights(self.Xp, self.cond))
        return fixed.weights(self.Xp, self.cond)

    def alpha(self, fixed=None):
        """Fixed-effect coefficients per observed pair, ``(J', K)``."""
        fixed = self.fixed if fixed is None else fixed
        return self.lambdas(fixed if fixed is not self.fixed else None) @ fixed.outer_vecs()

    def residual(self, fixed=None):
        """``y~ - alpha`` per observed pair, ``(J', K)``."""
        if fixed is None:
            return self._memo("E", lambda: self.ytil - self.alpha())
        return self.ytil - self.alpha(fixed)

    def subject_residual(self):
        """Residual summed over each subject's conditions, ``(n, K)``."""
        return self._memo("ZtE", lambda: self.Zt @ self.residual())

    def _memo(self, key, compute):
        if key not in self._cache:
            self._cache[key] = compute()
        return self._cache[key]

    def invalidate(self):
        """Drop cached quantities that depend on the fixed effect."""
        self._cache.clear()

    def weights(self, state=None):
        """Sherman-Morrison weights of the marginal covariance, ``(n, K)`` each."""
        state = self.state if state is None else state
        s_g = state.sigma_gamma2 if self.use_gamma else 0.0
        s_o = state.omega_variances(self.n) if self.use_omega else np.zeros(self.n)
        key = (s_g, tuple(np.asarray(s_o).tolist()), state.sigma_eps2)
        if self._weights_cache is None or self._weights_cache[0] != key:
            self._weights_cache = (key, inverse_weights(self.counts, self.d, s_g, s_o, state.sigma_eps2))
        return self._weights_cache[1]

    # ---------------------------------------------------------- factor update
    def factor_column_params(self, which, r):
        """Fisher-Bingham parameters ``(g, Q)`` and complement basis ``B`` for column ``r``."""
        fixed = self.fixed
        a, b = self.weights()
        lam = self.lambdas()
        wr = np.outer(fixed.V[:, r], fixed.U[:, r]).ravel()
        lr = lam[:, r]
        q = self.residual() + lr[:, None] * wr
        L1 = self.Zt @ lr
        L2 = self.Zt @ lr**2
        hvec = L2 @ a + (L1**2) @ b
        LQ = self.Zt @ (lr[:, None] * q)
        SQ = self.Zt @ q
        wvec = np.sum(a * LQ + b * (L1[:, None] * SQ), axis=0)
        Hm = unvec(hvec, self.K_T, self.K_F)
        Wm = unvec(wvec, self.K_T, self.K_F)
        if which == "U":
            h = Hm @ fixed.V[:, r] ** 2
            w = Wm @ fixed.V[:, r]
            others = np.delete(fixed.U, r, axis=1)
        else:
            h = Hm.T @ fixed.U[:, r] ** 2
            w = Wm.T @ fixed.U[:, r]
            others = np.delete(fixed.V, r, axis=1)
        B = orthonormal_complement(others, len(h))
        Q = B.T @ (h[:, None] * B)
        g = B.T @ w
        if self._prior_dirs is not None:
            dirs = self._prior_dirs[which]
            slot = fixed.slots[r]
            if slot < dirs.shape[1]:
                g = g + self._prior_dirs["nu"] * (B.T @ dirs[:, slot])
        return g, 0.5 * (Q + Q.T), B

    def update_factor_column(self, which, r, rng=None):
        rng = self.rng if rng is None else rng
        g, Q, B = self.factor_column_params(which, r)
        try:
            theta = sample_fisher_bingham(FisherBinghamParams(g, Q), rng, self.telemetry,
                                          context={"which": which, "r": r, "iteration": self.iteration})
        except SamplerDegenerateError as exc:
            exc.context.update({"which": which, "r": r, "iteration": self.iteration})
            raise
        col = B @ theta
        mat = self.fixed.U if which == "U" else self.fixed.V
        mat[:, r] = col / np.linalg.norm(col)
        self.invalidate()
        if self.fixed.orthonormality_error() > 1e-10:
            self.fixed.U = _sym_orthonormalize(self.fixed.U)
            self.fixed.V = _sym_orthonormalize(self.fixed.V)
        return mat[:, r]

    # ----------------------------------------------------------- delta update
    def delta_conditional(self, j, r):
        """Mean and covariance of ``delta_{j,r}`` given everything else."""
        fixed = self.fixed
        a, b = self.weights()
        rows = self.cond_rows[j]
        subj = self.subj[rows]
        lam = self.lambdas()
        E = self.residual()
        wr = np.outer(fixed.V[:, r], fixed.U[:, r]).ravel()
        qj = E[rows] + lam[rows, r][:, None] * wr
        s_sub = self.subject_residual()[subj]
        aS, bS = a[subj], b[subj]
        kappa = (wr**2 * (aS + bS)).sum(axis=1)
        proj = (wr * (aS * qj + bS * (qj + s_sub - E[rows]))).sum(axis=1)
        xs = self.X[subj]
        prec = self.sigma_delta_inv[j] / fixed.tau[r] + xs.T @ (kappa[:, None] * xs)
        gvec = xs.T @ proj
        try:
            chol = np.linalg.cholesky(0.5 * (prec + prec.T))
        except np.linalg.LinAlgError as exc:
            raise NumericalDivergenceError(f"singular precision for delta[{j},{r}]", self.iteration) from exc
        mean = cho_solve((chol, True), gvec)
        return mean, chol

    def update_delta(self, j, r, rng=None):
        rng = self.rng if rng is None else rng
        mean, chol = self.delta_conditional(j, r)
        z = rng.standard_normal(len(mean))
        draw = mean + solve_triangular(chol, z, lower=True, trans="T")
        if not np.all(np.isfinite(draw)):
            raise NumericalDivergenceError(f"non-finite delta[{j},{r}]", self.iteration)
        self.fixed.delta[j, r] = draw
        self.invalidate()
        return draw

    # ------------------------------------------------------------- SSL state
    def tau_modes(self):
        fixed, cfg = self.fixed, self.cfg
        quad = np.einsum("jrp,jpq,jrq->r", fixed.delta, self.sigma_delta_inv, fixed.delta)
        c = -self.p * self.J / 2.0 + 1.0
        return np.array([gig_mode(2.0 / (cfg.h1 if fixed.m[r] else cfg.h0), quad[r], c)
                         for r in range(fixed.rank)])

    def slab_probability(self, tau, pi):
        cfg = self.cfg
        if pi <= 0:
            return np.zeros_like(np.asarray(tau, dtype=float))
        if pi >= 1:
            return np.ones_like(np.asarray(tau, dtype=float))
        logit = (np.log(pi) + half_laplace_logpdf(tau, cfg.h1)
                 - np.log1p(-pi) - half_laplace_logpdf(tau, cfg.h0))
        return expit(logit)

    def update_ssl_state(self, rng=None):
        rng = self.rng if rng is None else rng
        fixed, cfg = self.fixed, self.cfg
        fixed.tau = self.tau_modes()
        prob = self.slab_probability(fixed.tau, fixed.pi)
        fixed.m = (rng.random(fixed.rank) < prob).astype(int)
        n_slab = int(fixed.m.sum())
        fixed.pi = float(rng.beta(cfg.a_delta + n_slab, cfg.b_delta + fixed.rank - n_slab))
        return fixed.tau, fixed.m, fixed.pi

    # ------------------------------------------------------- random effects
    def gamma_conditional(self):
        """Elementwise posterior mean and variance of ``gamma``, both ``(n, K)``."""
        st = self.state
        s_o = st.omega_variances(self.n) if self.use_omega else np.zeros(self.n)
        c = s_o[:, None] + st.sigma_eps2 / self.d[None, :]
        prec = 1.0 / st.sigma_gamma2 + self.counts[:, None] / c
        g = self.subject_residual() / c
        return g / prec, 1.0 / prec

    def omega_conditional(self):
        st = self.state
        s_o = st.omega_variances(self.n)[self.subj]
        scaled = self.d[None, :] / st.sigma_eps2
        prec = 1.0 / s_o[:, None] + scaled
        g = scaled * (self.residual() - st.gamma[self.subj])
        return g / prec, 1.0 / prec

    def _per_l(self, mean, var, z):
        """Draw ``mean + sqrt(var) * z`` column-block by column-block over ``l``.

        ``z`` carries one pre-drawn standard-normal row per basis index, so the
        result does not depend on how ``l`` is split across workers.
        """
        out = np.empty_like(mean)
        K = mean.shape[1]

        def work(sl):
            out[:, sl] = mean[:, sl] + np.sqrt(var[:, sl]) * z[sl].T

        threads = max(1, int(self.cfg.threads))
        if threads == 1:
            work(slice(0, K))
        else:
            bounds = np.linspace(0, K, threads + 1).astype(int)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, [slice(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]))
        return out

    def update_gamma(self, rng=None):
        rng = self.rng if rng is None else rng
        if not self.use_gamma:
            return self.state.gamma
        mean, var = self.gamma_conditional()
        z = rng.standard_normal((self.K, self.n))
        self.state.gamma = self._per_l(mean, var, z)
        return self.state.gamma

    def update_omega(self, rng=None):
        rng = self.rng if rng is None else rng
        if not self.use_omega:
            return self.state.omega
        mean, var = self.omega_conditional()
        z = rng.standard_normal((self.K, self.ds.n_pairs))
        self.state.omega = self._per_l(mean, var, z)
        return self.state.omega

    # ------------------------------------------------------------- variances
    def fitted_residual_ss(self):
        """``sum_ij ||y_ij - O beta_ij||^2`` via the projection identity."""
        st = self.state
        res = self.residual() - st.gamma[self.subj] - st.omega
        return self.rss0 + float(np.sum(self.d * res**2))

    def variance_conditionals(self):
        """Inverse-gamma ``(shape, scale)`` pairs for each variance component."""
        cfg, st = self.cfg, self.state
        out = {}
        if self.use_gamma:
            out["sigma_gamma2"] = (cfg.a_gamma + 0.5 * self.n * self.K,
                                   cfg.b_gamma + 0.5 * float(np.sum(st.gamma**2)))
        if self.use_omega:
            per_subject = self.Zt @ np.sum(st.omega**2, axis=1)
            if self.homogeneous:
                out["sigma_omega2"] = (cfg.a_omega + 0.5 * self.ds.n_pairs * self.K,
                                       cfg.b_omega + 0.5 * float(per_subject.sum()))
            else:
                out["sigma_omega2"] = (cfg.a_omega + 0.5 * self.counts * self.K,
                                       cfg.b_omega + 0.5 * per_subject)
        out["sigma_eps2"] = (0.5 * self.n_obs, 0.5 * self.fitted_residual_ss())
        return out

    def update_variances(self, rng=None):
        rng = self.rng if rng is None else rng
        params = self.variance_conditionals()
        st = self.state
        for name, (shape, scale) in params.items():
            if not (np.all(np.isfinite(scale)) and np.all(np.asarray(scale) > 0)):
                raise NumericalDivergenceError(f"non-finite or non-positive scale for {name}", self.iteration)
            draw = np.maximum(np.asarray(scale) / rng.standard_gamma(shape), VARIANCE_FLOOR)
            setattr(st, name, float(draw) if np.ndim(draw) == 0 else draw)
        return st

    # ------------------------------------------------------------ warm start
    def warm_start_rank_step(self, rng=None):
        """Add or remove CP ranks based on the current ``tau`` values.

        Every rank with ``tau`` below the threshold is removed, after which no
        rank is ever added again. A rank is added only when all ``tau`` exceed
        the threshold. At least one rank always survives: if every rank is
        below the threshold the one with the largest ``tau`` is kept.
        """
        rng = self.rng if rng is None else rng
        fixed, cfg = self.fixed, self.cfg
        below = fixed.tau < cfg.rank_threshold
        if below.all():
            below[np.argmax(fixed.tau)] = False
        if below.any():
            keep = np.flatnonzero(~below)
            self.fixed = CPFixedEffect(fixed.U[:, keep], fixed.V[:, keep], fixed.delta[:, keep], fixed.tau[keep],
                                       fixed.m[keep], fixed.pi, fixed.slots[keep])
            self.additions_disabled = True
            return "removed"
        if (fixed.tau <= cfg.rank_threshold).any():
            # a lone rank below the threshold, or one sitting exactly on it
            return "unchanged"
        if not self.additions_disabled and fixed.rank < min(self.K_T, self.K_F):
            new_u = orthonormal_complement(fixed.U, self.K_T) @ sample_uniform_sphere(self.K_T - fixed.rank, rng)
            new_v = orthonormal_complement(fixed.V, self.K_F) @ sample_uniform_sphere(self.K_F - fixed.rank, rng)
            free = [s for s in range(min(self.K_T, self.K_F)) if s not in set(fixed.slots.tolist())]
            self.fixed = CPFixedEffect(
                np.column_stack([fixed.U, new_u]), np.column_stack([fixed.V, new_v]),
                np.concatenate([fixed.delta, np.zeros((self.J, 1, self.p))], axis=1),
                np.append(fixed.tau, cfg.h1), np.append(fixed.m, 1), fixed.pi,
                np.append(fixed.slots, free[0]))
            return "added"
        return "unchanged"

    # ------------------------------------------------------------- iteration
    def sweep(self):
        """One full iteration: Block 1 then Block 2."""
        fixed = self.fixed
        for r in range(fixed.rank):
            self.update_factor_column("U", r)
            self.update_factor_column("V", r)
        for j in range(self.J):
            for r in range(fixed.rank):
                self.update_delta(j, r)
        self.update_ssl_state()
        self.update_gamma()
        self.update_omega()
        self.update_variances()


@dataclass
class _Recorder:
    n_draws: int
    shapes: dict
    arrays: dict = field(default_factory=dict)
    count: int = 0

    def __post_init__(self):
        self.arrays = {k: np.zeros((self.n_draws,) + s) for k, s in self.shapes.items()}

    def add(self, values):
        for k, v in values.items():
            self.arrays[k][self.count] = v
        self.count += 1

    def trimmed(self):
        return {k: v[: self.count] for k, v in self.arrays.items()}


def _snapshot(sampler):
    fx, st = sampler.fixed, sampler.state
    out = {"U": fx.U, "V": fx.V, "delta": fx.delta, "tau": fx.tau, "m": fx.m, "pi": fx.pi,
           "sigma_eps2": st.sigma_eps2}
    if sampler.use_gamma:
        out["sigma_gamma2"] = st.sigma_gamma2
        if sampler.cfg.store_random_effects:
            out["gamma"] = st.gamma
    if sampler.use_omega:
        out["sigma_omega2"] = st.sigma_omega2
        if sampler.cfg.store_random_effects:
            out["omega"] = st.omega
    return out


def _recorder_shapes(sampler):
    R, n, K = sampler.fixed.rank, sampler.n, sampler.K
    shapes = {"U": (sampler.K_T, R), "V": (sampler.K_F, R), "delta": (sampler.J, R, sampler.p),
              "tau": (R,), "m": (R,), "pi": (), "sigma_eps2": ()}
    if sampler.use_gamma:
        shapes["sigma_gamma2"] = ()
        if sampler.cfg.store_random_effects:
            shapes["gamma"] = (n, K)
    if sampler.use_omega:
        shapes["sigma_omega2"] = () if sampler.homogeneous else (n,)
        if sampler.cfg.store_random_effects:
            shapes["omega"] = (sampler.ds.n_pairs, K)
    return shapes


def fit(ds, cfg, basis=None, checkpoint=None, progress_every=100, initial=None):
    """Run the sampler and return a :class:`bmef.posterior.PosteriorChain`.

    ``checkpoint`` is an optional callable receiving the partial chain every
    ``cfg.checkpoint_every`` post-burn-in iterations. ``initial`` is an
    optional :class:`CPFixedEffect` to start from instead of a random draw.
    """
    from .posterior import PosteriorChain

    sampler = GibbsSampler(ds, cfg, basis)
    if initial is not None:
        if initial.U.shape[0] != sampler.K_T or initial.V.shape[0] != sampler.K_F or \
                initial.delta.shape[::2] != (sampler.J, sampler.p):
            raise ShapeError("initial fixed effect does not match the data and basis dimensions")
        sampler.fixed = initial.copy()
    total = cfg.burn_in + cfg.n_draws
    recorder = None
    started = time.perf_counter()

    def make_chain():
        arrays = recorder.trimmed() if recorder is not None else {}
        meta = {"config": cfg.to_dict(), "seed": cfg.seed, "elapsed_seconds": time.perf_counter() - started,
                "rank_history": list(sampler.rank_history), "fisher_bingham": sampler.telemetry.as_dict(),
                "iterations_completed": sampler.iteration}
        return PosteriorChain.from_arrays(arrays, sampler.basis, ds, meta)

    for it in range(1, total + 1):
        sampler.iteration = it
        try:
            sampler.sweep()
        except NumericalDivergenceError as exc:
            exc.iteration = it
            exc.partial_chain = make_chain()
            raise
        if it < cfg.burn_in and cfg.warm_start_interval > 0 and it % cfg.warm_start_interval == 0:
            action = sampler.warm_start_rank_step()
            if action in ("added", "removed"):
                sampler.rank_history.append((it, action, sampler.fixed.rank))
                log.info("iteration %d: rank %s, R=%d", it, action, sampler.fixed.rank)
        if it == cfg.burn_in:
            recorder = _Recorder(cfg.n_draws, _recorder_shapes(sampler))
        if it > cfg.burn_in:
            recorder.add(_snapshot(sampler))
            if checkpoint is not None and cfg.checkpoint_every and recorder.count % cfg.checkpoint_every == 0:
                checkpoint(make_chain())
        if progress_every and it % progress_every == 0:
            log.info("iteration %d/%d R=%d sigma_eps2=%.4g FB acceptance=%.3f", it, total, sampler.fixed.rank,
                     sampler.state.sigma_eps2, sampler.telemetry.acceptance_rate)
    return make_chain()


# Thin functional wrappers over a sampler instance.

def update_variances(sampler, rng=None):
    return sampler.update_variances(rng)


def update_gamma(sampler, rng=None):
    return sampler.update_gamma(rng)


def update_omega(sampler, rng=None):
    return sampler.update_omega(rng)


def update_factor_column(sampler, which, r, rng=None):
    return sampler.update_factor_column(which, r, rng)


def update_delta(sampler, j, r, rng=None):
    return sampler.update_delta(j, r, rng)


def update_ssl_state(sampler, rng=None):
    return sampler.update_ssl_state(rng)


def warm_start_rank_step(sampler, rng=None):
    return sampler.warm_start_rank_step(rng)
