"""Synthetic data from the CP mixed-effects model and the evaluation metrics.

Covariate scenarios: ``S1`` has an intercept only, ``S2`` adds a
``Unif(-3, 3)`` covariate and ``S3`` adds a further ``Bernoulli(0.5)`` one.
Variance settings: ``H1`` gives every subject ``sigma_omega^2 = 0.16``,
``H2`` draws ``sigma_omega_i^2 ~ Unif(0.04, 1)``.
"""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .basis import build_natural_cubic_basis, build_tensor_basis
from .dataset import FunctionalDataset
from .distributions import sample_uniform_stiefel
from .errors import ScenarioError, ShapeError, SpecError
from .posterior import contrast, posterior_mean_fixed
from .sampler import CPFixedEffect

SCENARIO_P = {"S1": 1, "S2": 2, "S3": 3}
H1_OMEGA2 = 0.4**2
H2_OMEGA2_RANGE = (0.2**2, 1.0)
_MISSING_RETRIES = 1000


@dataclass
class SimulationConfig:
    scenario: str = "S1"
    rank: int = 2
    variance_setting: str = "H1"
    n_subjects: int = 50
    J: int = 3
    T: int = 50
    F: int = 50
    K_T: int = 6
    K_F: int = 6
    sigma_gamma2: float = 0.4**2
    sigma_eps2: float = 0.1**2
    missingness: float = None
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIO_P:
            raise ScenarioError(f"scenario must be one of {sorted(SCENARIO_P)}")
        if self.variance_setting not in ("H1", "H2"):
            raise ScenarioError("variance_setting must be H1 or H2")
        if not 1 <= self.rank <= min(self.K_T, self.K_F):
            raise SpecError(f"rank must lie in 1..{min(self.K_T, self.K_F)}")
        if self.n_subjects < 1 or self.J < 1:
            raise SpecError("need at least one subject and one condition")
        if self.sigma_gamma2 < 0 or self.sigma_eps2 <= 0:
            raise SpecError("variances must be nonnegative (sigma_eps2 positive)")
        if self.missingness is not None and not 0 <= self.missingness < 1:
            raise SpecError("missingness must lie in [0, 1)")

    @property
    def p(self):
        return SCENARIO_P[self.scenario]

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"unknown simulation config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class GroundTruth:
    """Generating parameters and noiseless surfaces.

    ``omega`` and ``epsilon`` rows follow the dataset's ``pairs``.
    """

    fixed: CPFixedEffect
    gamma: np.ndarray
    omega: np.ndarray
    sigma_gamma2: float
    sigma_omega2: np.ndarray
    sigma_eps2: float
    epsilon: np.ndarray
    covariates: np.ndarray
    pairs: np.ndarray
    n_conditions: int
    basis: object
    scenario: str = "S1"

    def fixed_coefficients(self):
        """True ``alpha_j(x_i)`` coefficients for all ``(i, j)``: ``(n, J, K)``."""
        lam = np.einsum("jrp,np->njr", self.fixed.delta, self.covariates)
        return lam @ self.fixed.outer_vecs()

    def fixed_surfaces(self):
        return self.basis.surface(self.fixed_coefficients())

    def random_surfaces(self, level):
        if level == "B":
            return self.basis.surface(self.gamma)
        if level == "C":
            return self.basis.surface(self.omega)
        raise SpecError(f"unknown random-effect level {level!r}")

    def contrast_surfaces(self, k):
        """True effect of covariate ``k`` moving 0 to 1, per condition: ``(J, T, F)``."""
        p = self.covariates.shape[1]
        if not 1 <= k < p:
            raise ScenarioError(f"covariate {k} has no contrast under scenario {self.scenario} (p={p})")
        coef = self.fixed.delta[:, :, k] @ self.fixed.outer_vecs()
        return self.basis.surface(coef)

    def to_dict(self):
        b = self.basis
        return {
            "U": self.fixed.U.tolist(), "V": self.fixed.V.tolist(), "delta": self.fixed.delta.tolist(),
            "gamma": self.gamma.tolist(), "omega": self.omega.tolist(),
            "sigma_gamma2": float(self.sigma_gamma2), "sigma_omega2": np.asarray(self.sigma_omega2).tolist(),
            "sigma_eps2": float(self.sigma_eps2), "epsilon": self.epsilon.tolist(),
            "covariates": self.covariates.tolist(), "pairs": self.pairs.tolist(),
            "n_conditions": int(self.n_conditions), "scenario": self.scenario,
            "basis": {"time": b.time.grid_points.tolist(), "freq": b.freq.grid_points.tolist(),
                      "K_T": b.K_T, "K_F": b.K_F},
        }

    @classmethod
    def from_dict(cls, d):
        bd = d["basis"]
        basis = build_tensor_basis(build_natural_cubic_basis(bd["time"], bd["K_T"]),
                                   build_natural_cubic_basis(bd["freq"], bd["K_F"]))
        delta = np.asarray(d["delta"], dtype=float)
        R = delta.shape[1]
        fixed = CPFixedEffect(np.asarray(d["U"]), np.asarray(d["V"]), delta, np.ones(R), np.ones(R, dtype=int), 0.5)
        return cls(fixed, np.asarray(d["gamma"]), np.asarray(d["omega"]), d["sigma_gamma2"],
                   np.asarray(d["sigma_omega2"]), d["sigma_eps2"], np.asarray(d["epsilon"]),
                   np.asarray(d["covariates"]), np.asarray(d["pairs"]), d["n_conditions"], basis, d["scenario"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
        return Path(path)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def spawn_seeds(master_seed, count):
    """Independent integer seeds for ``count`` runs derived from ``master_seed``.

    Child ``k`` is ``SeedSequence(master_seed).spawn(count)[k]`` reduced to a
    63-bit integer, so run ``k`` does not depend on how many runs are made.
    """
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def _covariates(scenario, n, rng):
    cols = [np.ones(n)]
    if scenario in ("S2", "S3"):
        cols.append(rng.uniform(-3.0, 3.0, n))
    if scenario == "S3":
        cols.append(rng.binomial(1, 0.5, n).astype(float))
    return np.column_stack(cols)


def _delta(J, R, p, rng):
    mag = rng.uniform(0.5, 1.0, (J, R, p))
    sign = np.where(rng.random((J, R, p)) < 0.5, -1.0, 1.0)
    return sign * mag


def _observed_pairs(n, J, missingness, rng):
    if not missingness:
        return np.array([(i, j) for i in range(n) for j in range(J)], dtype=np.int64)
    for _ in range(_MISSING_RETRIES):
        keep = rng.random((n, J)) >= missingness
        if keep.any(axis=1).all() and keep.any(axis=0).all():
            return np.argwhere(keep).astype(np.int64)
    raise SpecError("could not draw a missingness pattern that keeps every subject and condition")


def generate(cfg):
    """Draw a dataset and its ground truth from ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    time_grid = np.linspace(0.0, 1.0, cfg.T)
    freq_grid = np.linspace(0.0, 1.0, cfg.F)
    basis = build_tensor_basis(build_natural_cubic_basis(time_grid, cfg.K_T),
                               build_natural_cubic_basis(freq_grid, cfg.K_F))
    n, J, R, p, K = cfg.n_subjects, cfg.J, cfg.rank, cfg.p, basis.K

    X = _covariates(cfg.scenario, n, rng)
    U = sample_uniform_stiefel(cfg.K_T, R, rng)
    V = sample_uniform_stiefel(cfg.K_F, R, rng)
    delta = _delta(J, R, p, rng)
    fixed = CPFixedEffect(U, V, delta, np.ones(R), np.ones(R, dtype=int), 0.5)

    if cfg.variance_setting == "H1":
        s_omega = np.full(n, H1_OMEGA2)
    else:
        s_omega = rng.uniform(*H2_OMEGA2_RANGE, n)
    pairs = _observed_pairs(n, J, cfg.missingness, rng)
    subj, cond = pairs[:, 0], pairs[:, 1]

    gamma = np.sqrt(cfg.sigma_gamma2) * rng.standard_normal((n, K))
    omega = np.sqrt(s_omega[subj])[:, None] * rng.standard_normal((len(pairs), K))
    lam = np.einsum("prq,pq->pr", delta[cond], X[subj])
    beta = lam @ fixed.outer_vecs() + gamma[subj] + omega
    signal = basis.synthesize(beta)
    noise = np.sqrt(cfg.sigma_eps2) * rng.standard_normal(signal.shape)
    y = signal + noise

    names = ["x1", "x2", "x3"][:p]
    ds = FunctionalDataset([f"s{i + 1:03d}" for i in range(n)], X, time_grid, freq_grid, J, pairs, y, names)
    truth = GroundTruth(fixed, gamma, omega, cfg.sigma_gamma2, s_omega, cfg.sigma_eps2, y - signal, X, pairs, J,
                        basis, cfg.scenario)
    return ds, truth


# -------------------------------------------------------------------- metrics

def mse_fixed(truth, est):
    """Average squared Frobenius error of ``A_j(x_i)`` over subjects and conditions.

    ``truth`` is a :class:`GroundTruth` or an ``(n, J, T, F)`` array; ``est``
    is an ``(n, J, T, F)`` array of estimates.
    """
    ref = truth.fixed_surfaces() if isinstance(truth, GroundTruth) else np.asarray(truth)
    est = np.asarray(est)
    if est.shape != ref.shape:
        raise ShapeError(f"estimate shape {est.shape} does not match truth {ref.shape}")
    n, J = ref.shape[:2]
    return float(np.sum((est - ref) ** 2) / (n * J))


def mse_random(truth, est, level):
    """``B``: squared error summed over subjects over ``n``; ``C``: over pairs, divided by ``n J'``."""
    if level not in ("B", "C"):
        raise SpecError(f"level must be 'B' or 'C', got {level!r}")
    if est is None:
        raise SpecError(f"level {level} is absent from the fitted model")
    ref = truth.random_surfaces(level)
    est = np.asarray(est)
    if est.shape != ref.shape:
        raise ShapeError(f"estimate shape {est.shape} does not match truth {ref.shape}")
    n = truth.covariates.shape[0]
    denom = n if level == "B" else n * len(truth.pairs)
    return float(np.sum((est - ref) ** 2) / denom)


def cmse(truth, chain, k):
    """Contrast MSE for covariate ``k`` (0-based column, so ``k >= 1``).

    The contrast does not vary with the subject, so the average over
    ``(i, j)`` reduces to an average over conditions.
    """
    ref = truth.contrast_surfaces(k)
    est = np.stack([contrast(chain, j, k).mean for j in range(truth.n_conditions)])
    n, J = truth.covariates.shape[0], truth.n_conditions
    return float(n * np.sum((est - ref) ** 2) / (n * J))


def fixed_effect_estimate(chain):
    return posterior_mean_fixed(chain)


def selected_rank(run):
    return int(run) if np.isscalar(run) else int(run.rank)


def rank_accuracy(runs, true_R):
    """Share of runs (chains or integer ranks) whose selected rank equals ``true_R``."""
    runs = list(runs)
    if not runs:
        raise SpecError("rank_accuracy needs at least one run")
    return sum(selected_rank(r) == true_R for r in runs) / len(runs)
