"""Posterior summaries: reconstruction, alignment, contrasts, bands and WAIC.

A :class:`PosteriorChain` stores every recorded quantity as a stacked array
whose first axis indexes draws. Condition indices ``j`` and covariate indices
``k`` are 0-based.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .basis import build_natural_cubic_basis, build_tensor_basis
from .errors import InsufficientDrawsError, ShapeError, SpecError
from .sampler import CPFixedEffect, RandomEffectState

FIXED_KEYS = ("U", "V", "delta", "tau", "m", "pi")
CHAIN_FORMATS = ("jsonl", "binary")


@dataclass
class PosteriorChain:
    """Post-burn-in draws plus what is needed to map them back to surfaces.

    ``arrays`` maps parameter names to arrays of shape ``(S, ...)``.
    ``alignment`` holds the permutation ``perm`` ``(S, R)`` and the sign
    flags ``sign_u``/``sign_v`` ``(S, R)`` applied by :func:`align_components`.
    """

    arrays: dict
    basis: object
    covariates: np.ndarray
    pairs: np.ndarray
    n_conditions: int
    alignment: dict = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if self.alignment is None:
            S, R = self.n_draws, self.rank
            self.alignment = {"perm": np.tile(np.arange(R), (S, 1)),
                              "sign_u": np.ones((S, R)), "sign_v": np.ones((S, R))}

    @classmethod
    def from_arrays(cls, arrays, basis, ds, meta=None):
        return cls(dict(arrays), basis, ds.covariates, ds.pairs, ds.n_conditions, meta=dict(meta or {}))

    @property
    def n_draws(self):
        return len(self.arrays["U"]) if "U" in self.arrays else 0

    @property
    def rank(self):
        return self.arrays["U"].shape[2] if "U" in self.arrays else 0

    @property
    def n_subjects(self):
        return self.covariates.shape[0]

    @property
    def model_spec(self):
        if "omega" in self.arrays or "sigma_omega2" in self.arrays:
            return "ABC"
        if "gamma" in self.arrays or "sigma_gamma2" in self.arrays:
            return "AB"
        return "A"

    def fixed(self, s):
        a = self.arrays
        return CPFixedEffect(a["U"][s], a["V"][s], a["delta"][s], a["tau"][s], a["m"][s].astype(int),
                             float(a["pi"][s]))

    def random(self, s):
        a = self.arrays
        n, K = self.n_subjects, self.basis.K
        gamma = a["gamma"][s] if "gamma" in a else np.zeros((n, K))
        omega = a["omega"][s] if "omega" in a else np.zeros((len(self.pairs), K))
        s_o = a["sigma_omega2"][s] if "sigma_omega2" in a else 0.0
        return RandomEffectState(gamma, omega, float(a["sigma_gamma2"][s]) if "sigma_gamma2" in a else 0.0,
                                 s_o, float(a["sigma_eps2"][s]))

    def draw(self, s):
        """``(CPFixedEffect, RandomEffectState)`` snapshot of draw ``s``."""
        return self.fixed(s), self.random(s)

    @property
    def draws(self):
        return [self.draw(s) for s in range(self.n_draws)]

    def outer_vecs(self):
        """``vec(u_r v_r')`` for every draw, shape ``(S, R, K)``."""
        U, V = self.arrays["U"], self.arrays["V"]
        return np.einsum("sfr,str->srft", V, U).reshape(self.n_draws, self.rank, -1)

    def weights(self, X, conditions):
        """``lambda_{j,r}(x)`` per draw for paired rows of ``X`` and ``conditions``: ``(S, N, R)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.covariates.shape[1]:
            raise ShapeError(f"covariates have {X.shape[1]} columns, expected {self.covariates.shape[1]}")
        return np.einsum("snrp,np->snr", self.arrays["delta"][:, np.asarray(conditions)], X)

    def fixed_coefficients(self, X, conditions):
        """Per-draw fixed-effect coefficients ``(S, N, K)``."""
        return np.einsum("snr,srk->snk", self.weights(X, conditions), self.outer_vecs())


# ------------------------------------------------------------------ alignment

def align_components(chain):
    """Resolve rank permutations and sign flips across draws.

    Each draw is greedily matched to the running mean of the already aligned
    draws on ``|u_r' ubar_q| * |v_r' vbar_q|``. Flipping ``u_r`` or ``v_r``
    flips every ``delta_{j,r}`` so that reconstructions are unchanged.
    """
    a = {k: v.copy() for k, v in chain.arrays.items()}
    S, R = chain.n_draws, chain.rank
    perm_all = np.tile(np.arange(R), (S, 1))
    su_all, sv_all = np.ones((S, R)), np.ones((S, R))
    if S == 0 or R == 0:
        return PosteriorChain(a, chain.basis, chain.covariates, chain.pairs, chain.n_conditions,
                              {"perm": perm_all, "sign_u": su_all, "sign_v": sv_all}, dict(chain.meta))
    sum_u, sum_v = a["U"][0].copy(), a["V"][0].copy()
    for s in range(1, S):
        U, V = a["U"][s], a["V"][s]
        cu = U.T @ sum_u
        cv = V.T @ sum_v
        score = np.abs(cu) * np.abs(cv)
        perm = np.full(R, -1)
        free_src, free_dst = set(range(R)), set(range(R))
        for _ in range(R):
            best, pick = -1.0, None
            for r in free_src:
                for q in free_dst:
                    if score[r, q] > best:
                        best, pick = score[r, q], (r, q)
            r, q = pick
            perm[q] = r
            free_src.discard(r)
            free_dst.discard(q)
        su = np.sign(cu[perm, np.arange(R)])
        sv = np.sign(cv[perm, np.arange(R)])
        su[su == 0] = 1.0
        sv[sv == 0] = 1.0
        a["U"][s] = U[:, perm] * su
        a["V"][s] = V[:, perm] * sv
        a["delta"][s] = a["delta"][s][:, perm] * (su * sv)[None, :, None]
        for key in ("tau", "m"):
            a[key][s] = a[key][s][perm]
        perm_all[s], su_all[s], sv_all[s] = perm, su, sv
        sum_u += a["U"][s]
        sum_v += a["V"][s]
    return PosteriorChain(a, chain.basis, chain.covariates, chain.pairs, chain.n_conditions,
                          {"perm": perm_all, "sign_u": su_all, "sign_v": sv_all}, dict(chain.meta))


# ------------------------------------------------------------- reconstruction

def _as_fixed(draw):
    return draw[0] if isinstance(draw, tuple) else draw


def principal_functions(draw, basis):
    """Marginal principal functions on the grids: ``(R, T)`` and ``(R, F)``."""
    fixed = _as_fixed(draw)
    return (basis.ortho_time @ fixed.U).T, (basis.ortho_freq @ fixed.V).T


def reconstruct_fixed_effect(draw, x, j, basis):
    """``A_j(x)`` on the ``T x F`` grid for one draw."""
    fixed = _as_fixed(draw)
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != fixed.delta.shape[2]:
        raise ShapeError(f"covariate vector has length {x.shape[0]}, expected {fixed.delta.shape[2]}")
    lam = fixed.delta[j] @ x
    phi, psi = principal_functions(fixed, basis)
    return np.einsum("r,rt,rf->tf", lam, phi, psi)


def base_patterns(draw, basis):
    """Rank-one surfaces ``phi*_r psi*_r'`` of shape ``(R, T, F)``."""
    phi, psi = principal_functions(draw, basis)
    return np.einsum("rt,rf->rtf", phi, psi)


def credible_band(samples, level=0.95):
    """Equal-tailed pointwise interval over the leading (draw) axis."""
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(np.asarray(samples), [tail, 1.0 - tail], axis=0)
    return lo, hi


@dataclass
class Summary:
    draws: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def summarize_draws(samples, level=0.95):
    samples = np.asarray(samples)
    lo, hi = credible_band(samples, level)
    return Summary(samples, samples.mean(axis=0), lo, hi)


def principal_function_summary(chain, level=0.95):
    """Draw-wise principal functions with bands; returns ``(time, freq)`` summaries."""
    basis = chain.basis
    time = np.einsum("tk,skr->srt", basis.ortho_time, chain.arrays["U"])
    freq = np.einsum("fk,skr->srf", basis.ortho_freq, chain.arrays["V"])
    return summarize_draws(time, level), summarize_draws(freq, level)


def fixed_effect_draws(chain, x, j):
    """Per-draw ``A_j(x)`` surfaces, shape ``(S, T, F)``."""
    x = np.asarray(x, dtype=float).ravel()
    coef = chain.fixed_coefficients(x[None, :], [j])[:, 0]
    return chain.basis.surface(coef)


def contrast(chain, j, k, x=None, level=0.95):
    """Effect on ``A_j`` of moving covariate ``k`` from 0 to 1.

    The other coordinates are held at ``x`` (zeros by default). The effect
    is linear in ``x``, so the result does not depend on them; this is
    verified by recomputing at a second conditioning point.
    """
    p = chain.covariates.shape[1]
    if not 0 <= k < p:
        raise IndexError(f"covariate index {k} outside 0..{p - 1}")
    base = np.zeros(p) if x is None else np.asarray(x, dtype=float).copy()
    diffs = []
    for cond_point in (base, base + 1.0):
        hi, lo = cond_point.copy(), cond_point.copy()
        hi[k], lo[k] = 1.0, 0.0
        diffs.append(fixed_effect_draws(chain, hi, j) - fixed_effect_draws(chain, lo, j))
    gap = float(np.max(np.abs(diffs[0] - diffs[1]))) if diffs[0].size else 0.0
    scale = max(1.0, float(np.max(np.abs(diffs[0]))) if diffs[0].size else 1.0)
    if gap > 1e-10 * scale:
        raise SpecError(f"contrast depends on the conditioning point (gap {gap:.3g})")
    return summarize_draws(diffs[0], level)


def weight_summary(chain, profiles, level=0.95):
    """``lambda_{j,r}(x)`` intervals for each condition, covariate profile and rank.

    Returns a list of dict rows ``{condition, profile, rank, mean, lower, upper}``.
    """
    profiles = np.atleast_2d(np.asarray(profiles, dtype=float))
    rows = []
    for j in range(chain.n_conditions):
        lam = chain.weights(profiles, np.full(len(profiles), j))
        lo, hi = credible_band(lam, level)
        mean = lam.mean(axis=0)
        for c in range(len(profiles)):
            for r in range(chain.rank):
                rows.append({"condition": j, "profile": c, "rank": r, "mean": float(mean[c, r]),
                             "lower": float(lo[c, r]), "upper": float(hi[c, r])})
    return rows


def posterior_mean_fixed(chain, X=None):
    """Posterior-mean ``A_j(x_i)`` surfaces for all subjects and conditions, ``(n, J, T, F)``."""
    X = chain.covariates if X is None else np.atleast_2d(X)
    n, J = X.shape[0], chain.n_conditions
    rows = np.repeat(np.arange(n), J)
    conds = np.tile(np.arange(J), n)
    coef = chain.fixed_coefficients(X[rows], conds).mean(axis=0)
    return chain.basis.surface(coef).reshape(n, J, chain.basis.T, chain.basis.F)


def posterior_mean_random(chain, level):
    """Posterior-mean random-effect surfaces: ``B`` gives ``(n, T, F)``, ``C`` gives ``(J', T, F)``."""
    key = {"B": "gamma", "C": "omega"}.get(level)
    if key is None:
        raise SpecError(f"unknown random-effect level {level!r}")
    if key not in chain.arrays:
        raise SpecError(f"chain has no stored {key} draws (model {chain.model_spec})")
    return chain.basis.surface(chain.arrays[key].mean(axis=0))


# ----------------------------------------------------------------------- WAIC

def pointwise_loglik(chain, ds):
    """Per-draw, per-subject conditional log-likelihood ``(S, n)``.

    Uses ``||y - O beta||^2 = ||y - O y~||^2 + sum_l d_l (y~ - beta)_l^2``
    so the grid-level residual is never formed per draw.
    """
    basis = chain.basis
    if chain.model_spec != "A" and ("gamma" not in chain.arrays and "sigma_gamma2" in chain.arrays):
        raise SpecError("WAIC needs stored random-effect draws")
    ytil = basis.project(ds.responses)
    rss0 = np.sum((ds.responses - basis.synthesize(ytil)) ** 2, axis=1)
    subj, cond = ds.pair_subject, ds.pair_condition
    beta = chain.fixed_coefficients(ds.covariates[subj], cond)
    if "gamma" in chain.arrays:
        beta = beta + chain.arrays["gamma"][:, subj]
    if "omega" in chain.arrays:
        beta = beta + chain.arrays["omega"]
    rss = rss0[None, :] + np.einsum("spk,k->sp", (ytil[None] - beta) ** 2, basis.gram_diag)
    s2 = chain.arrays["sigma_eps2"][:, None]
    tf = basis.T * basis.F
    ll_pair = -0.5 * tf * np.log(2.0 * np.pi * s2) - rss / (2.0 * s2)
    out = np.zeros((chain.n_draws, ds.n_subjects))
    np.add.at(out.T, subj, ll_pair.T)
    return out


def waic(chain, ds):
    """WAIC on the deviance scale, with subjects as the predictive units."""
    S = chain.n_draws
    if S < 2:
        raise InsufficientDrawsError(f"WAIC needs at least 2 draws, got {S}")
    ll = pointwise_loglik(chain, ds)
    lppd = logsumexp(ll, axis=0) - np.log(S)
    penalty = ll.var(axis=0, ddof=1)
    return float(-2.0 * (lppd.sum() - penalty.sum()))


# ------------------------------------------------------------------ chain I/O

def _header(chain):
    b = chain.basis
    return {
        "format": "bmef-chain", "version": 1,
        "basis": {"time": b.time.grid_points.tolist(), "freq": b.freq.grid_points.tolist(),
                  "K_T": b.K_T, "K_F": b.K_F},
        "covariates": chain.covariates.tolist(), "pairs": chain.pairs.tolist(),
        "n_conditions": int(chain.n_conditions), "meta": chain.meta,
        "shapes": {k: list(v.shape[1:]) for k, v in chain.arrays.items()},
    }


def _basis_from_header(h):
    b = h["basis"]
    return build_tensor_basis(build_natural_cubic_basis(b["time"], b["K_T"]),
                              build_natural_cubic_basis(b["freq"], b["K_F"]))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def save_chain(chain, path, fmt="jsonl"):
    """Write a chain as JSON lines (header line, then one line per draw) or ``.npz``.

    Both formats round-trip every float exactly.
    """
    if fmt not in CHAIN_FORMATS:
        raise SpecError(f"chain format must be one of {CHAIN_FORMATS}")
    path = Path(path)
    header = _header(chain)
    if fmt == "jsonl":
        with open(path, "w") as fh:
            fh.write(json.dumps(header, default=_json_default) + "\n")
            for s in range(chain.n_draws):
                row = {k: v[s] for k, v in chain.arrays.items()}
                row.update({k: v[s] for k, v in chain.alignment.items()})
                fh.write(json.dumps(row, default=_json_default) + "\n")
    else:
        payload = {f"draw__{k}": v for k, v in chain.arrays.items()}
        payload.update({f"align__{k}": v for k, v in chain.alignment.items()})
        payload["header"] = np.array(json.dumps(header, default=_json_default))
        with open(path, "wb") as fh:
            np.savez(fh, **payload)
    return path


def load_chain(path, basis=None):
    """Read a chain written by :func:`save_chain`; the format is sniffed from the file."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"PK":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            arrays = {k[6:]: z[k] for k in z.files if k.startswith("draw__")}
            alignment = {k[7:]: z[k] for k in z.files if k.startswith("align__")}
    else:
        with open(path) as fh:
            header = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        shapes = header["shapes"]
        arrays = {k: np.array([r[k] for r in rows], dtype=float).reshape((len(rows),) + tuple(shp))
                  for k, shp in shapes.items()}
        alignment = {k: np.array([r[k] for r in rows]) for k in ("perm", "sign_u", "sign_v")} if rows else None
        if alignment is not None:
            alignment["perm"] = alignment["perm"].astype(np.int64)
    if "m" in arrays:
        arrays["m"] = arrays["m"].astype(np.int64)
    basis = _basis_from_header(header) if basis is None else basis
    return PosteriorChain(arrays, basis, header["covariates"], header["pairs"], header["n_conditions"],
                          alignment or None, header["meta"])
