import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bmef.dataset import FunctionalDataset  # noqa: E402
from bmef.distributions import sample_uniform_stiefel  # noqa: E402
from bmef.sampler import FitConfig, GibbsSampler  # noqa: E402
from bmef.simulate import SimulationConfig, generate  # noqa: E402


def tiny_dataset(seed=0, p=2, drop_last=True):
    """n=3, J=2, T=F=8 data; subject 3 misses condition 1 unless ``drop_last`` is False."""
    scenario = {1: "S1", 2: "S2", 3: "S3"}[p]
    ds, truth = generate(SimulationConfig(scenario=scenario, rank=2, n_subjects=3, J=2, T=8, F=8, K_T=4, K_F=4,
                                          seed=seed))
    if not drop_last:
        return ds, truth
    keep = ~((ds.pairs[:, 0] == 2) & (ds.pairs[:, 1] == 0))
    ds = FunctionalDataset(ds.subject_ids, ds.covariates, ds.time_grid, ds.freq_grid, 2, ds.pairs[keep],
                           ds.responses[keep], ds.covariate_names)
    return ds, truth


def randomize_state(s, seed=1):
    """Put a sampler into an arbitrary but valid state."""
    rng = np.random.default_rng(seed)
    R = s.fixed.rank
    f = s.fixed
    f.U = sample_uniform_stiefel(s.K_T, R, rng)
    f.V = sample_uniform_stiefel(s.K_F, R, rng)
    f.delta = rng.standard_normal((s.J, R, s.p))
    f.tau = rng.uniform(0.05, 1.0, R)
    s.invalidate()
    st = s.state
    if s.use_gamma:
        st.sigma_gamma2 = 0.3
        st.gamma = 0.3 * rng.standard_normal((s.n, s.K))
    if s.use_omega:
        st.sigma_omega2 = 0.25 if s.homogeneous else rng.uniform(0.1, 0.6, s.n)
        st.omega = 0.3 * rng.standard_normal((s.ds.n_pairs, s.K))
    st.sigma_eps2 = 0.05
    return s


def make_sampler(cls=GibbsSampler, seed=0, rank=2, p=2, drop_last=True, **cfg):
    ds, _ = tiny_dataset(seed, p, drop_last)
    options = dict(K_T=4, K_F=4, initial_rank=rank, seed=seed)
    options.update(cfg)
    return randomize_state(cls(ds, FitConfig(**options)), seed + 1)


@pytest.fixture
def sampler():
    return make_sampler()
