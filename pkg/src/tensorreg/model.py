"""Rank-R generalized linear tensor regression.

The coefficient array of a GLM with tensor covariates is constrained to a
rank-R CP form ``B = [[B_1, ..., B_D]]`` and estimated by cyclic exact
maximization: holding all but one factor fixed, the linear predictor is
linear in the remaining factor, so each update is an ordinary (or
penalized) GLM on a derived ``n x (p_d R)`` design.  The module also
provides the identifiability normalization that makes factors comparable
across fits, BIC-based rank selection, and score/Fisher-information
inference for the free parametrization.
"""

from __future__ import annotations

import itertools
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateNormalizationWarning,
    DomainError,
    FitConvergenceError,
    InferenceError,
    KRankSizeError,
    SingularDesignError,
    TensorRegError,
)
from .glm import GlmFamily, get_family, irls_fit, log_likelihood, penalized_fit
from .penalties import PenaltySpec, penalty_value
from .tensor_core import (
    CpTensor,
    DenseTensor,
    cp_to_full,
    factor_chain_omitting,
    khatri_rao_chain,
    mode_d_matricize,
    mode_dd_matricize,
)

__all__ = [
    "TensorGlmDataset",
    "FitConfig",
    "TensorGlmModel",
    "InferenceReport",
    "UniquenessReport",
    "build_block_design",
    "fit",
    "normalize_identifiability",
    "effective_parameters",
    "raw_parameter_count",
    "bic",
    "select_rank",
    "eta_gradient",
    "eta_hessian",
    "score_and_information",
    "log_density_hessian",
    "k_rank",
    "check_uniqueness",
    "model_to_document",
    "model_from_document",
    "max_workers",
]


def max_workers():
    """Worker cap for embarrassingly parallel fits (TENSORREG_THREADS)."""
    try:
        return max(1, int(os.environ.get("TENSORREG_THREADS", "1")))
    except ValueError:
        return 1


def _run_indexed(tasks, workers):
    """Run ``tasks`` (callables) and return results in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(t) for t in tasks]
        return [f.result() for f in futures]


class TensorGlmDataset:
    """Observations ``(y_i, x_i, z_i)`` with tensor covariates of shared dims.

    Parameters
    ----------
    y : (n,) array
    x : list of DenseTensor, or array of shape ``(n, p_1, ..., p_D)``
    z : (n, p_0) array or None
        Ordinary covariates; ``None`` means ``p_0 = 0``.
    """

    def __init__(self, y, x, z=None):
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        n = y.size
        if n < 1:
            raise DomainError("dataset needs at least one observation")
        if isinstance(x, (list, tuple)):
            if len(x) != n:
                raise DomainError(f"{len(x)} tensors for {n} responses")
            dims = x[0].dims
            for t in x:
                if t.dims != dims:
                    raise DomainError(f"tensor dims differ: {t.dims} vs {dims}")
            stack = np.stack([t.to_array() for t in x])
        else:
            stack = np.asarray(x, dtype=np.float64)
            if stack.ndim < 2 or stack.shape[0] != n:
                raise DomainError(
                    f"covariate stack must have shape (n, p_1, ..., p_D) with n={n}"
                )
            dims = stack.shape[1:]
        if z is None:
            z = np.zeros((n, 0))
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != n:
            raise DomainError(f"z has {z.shape[0]} rows for {n} responses")
        self.y = y
        self.z = z
        self.dims = tuple(int(p) for p in dims)
        self._stack = np.ascontiguousarray(stack, dtype=np.float64)
        self._mode_stacks = {}
        self._x_matrix = None

    @property
    def n(self):
        return self.y.size

    @property
    def p0(self):
        return self.z.shape[1]

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def x(self):
        """The tensor covariates as a list of DenseTensor."""
        return [DenseTensor.from_array(a) for a in self._stack]

    def x_matrix(self):
        """``(n, prod(dims))`` matrix whose row i is ``vec(x_i)``."""
        if self._x_matrix is None:
            D = self.ndim
            arr = self._stack.transpose([0] + list(range(D, 0, -1)))
            self._x_matrix = np.ascontiguousarray(arr).reshape(self.n, -1)
        return self._x_matrix

    def mode_stack(self, d):
        """``(n, p_d, prod_{d' != d} p_{d'})`` stack of mode-d matricizations."""
        if d not in self._mode_stacks:
            if not 1 <= d <= self.ndim:
                raise DomainError(f"mode {d} out of range")
            rest = [k for k in range(1, self.ndim + 1) if k != d]
            arr = self._stack.transpose([0, d] + rest)
            # reversing the trailing axes makes a C reshape equal an F flatten
            arr = arr.transpose([0, 1] + list(range(arr.ndim - 1, 1, -1)))
            self._mode_stacks[d] = np.ascontiguousarray(arr).reshape(
                self.n, self.dims[d - 1], -1
            )
        return self._mode_stacks[d]


@dataclass
class FitConfig:
    """Knobs for the alternating fit.

    ``epsilon`` is the absolute stopping threshold on the objective
    increase per outer cycle; ``None`` uses ``1e-6 * (1 + |objective|)``.
    """

    rank: int = 1
    epsilon: float | None = None
    max_outer_iters: int = 500
    restarts: int = 5
    seed: int = 0
    penalty: PenaltySpec | None = None

    def __post_init__(self):
        if self.rank < 1:
            raise DomainError(f"rank must be >= 1, got {self.rank}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise DomainError("epsilon must be positive")
        if self.max_outer_iters < 1:
            raise DomainError("max_outer_iters must be >= 1")
        if self.restarts < 1:
            raise DomainError("restarts must be >= 1")


@dataclass
class TensorGlmModel:
    """A fitted rank-R tensor GLM."""

    alpha: float
    gamma: np.ndarray
    coeff: CpTensor
    family: GlmFamily
    phi: float
    loglik: float
    bic: float
    trace: list
    converged: bool
    restarts_used: int
    n: int
    p0: int
    penalty: PenaltySpec | None = None

    @property
    def dims(self):
        return self.coeff.dims

    @property
    def rank(self):
        return self.coeff.rank

    def coefficient_tensor(self):
        return cp_to_full(self.coeff)

    def linear_predictor(self, dataset):
        eta = np.full(dataset.n, self.alpha)
        if self.p0:
            eta = eta + dataset.z @ self.gamma
        return eta + dataset.x_matrix() @ cp_to_full(self.coeff).data

    def predict_mean(self, dataset):
        return self.family.mean(self.linear_predictor(dataset))


def build_block_design(dataset, coeff, d):
    """Design matrix for the mode-d factor update.

    Row i is ``vec(X_{i(d)} W_d)`` where ``W_d`` is the Khatri-Rao chain
    of the other factors in descending mode order, so that
    ``row_i . vec(B_d) = <B, x_i>`` with the other blocks frozen.
    """
    if coeff.dims != dataset.dims:
        raise DomainError(
            f"coefficient dims {coeff.dims} do not match data dims {dataset.dims}"
        )
    if not 1 <= d <= dataset.ndim:
        raise DomainError(f"mode {d} out of range")
    chain = factor_chain_omitting(coeff.factors, d)
    stacked = dataset.mode_stack(d)  # (n, p_d, q_d)
    out = np.einsum("npq,qr->nrp", stacked, chain)
    return out.reshape(dataset.n, coeff.rank * dataset.dims[d - 1])


def effective_parameters(dims, rank, p0):
    """Effective parameter count: intercept + covariates + free CP entries."""
    dims = tuple(int(p) for p in dims)
    R = int(rank)
    if R < 1:
        raise DomainError("rank must be >= 1")
    D = len(dims)
    if D == 1:
        tensor_part = dims[0]
    elif D == 2:
        tensor_part = R * (dims[0] + dims[1]) - R * R
    else:
        tensor_part = R * (sum(dims) - D + 1)
    return int(p0) + 1 + tensor_part


def raw_parameter_count(dims, rank, p0):
    """Unadjusted count: intercept + covariates + all CP entries."""
    return int(p0) + 1 + int(rank) * int(sum(dims))


def _penalty_total(spec, factors):
    if spec is None or spec.rho == 0.0:
        return 0.0
    return float(sum(np.sum(penalty_value(spec, f)) for f in factors))


def _fit_once(dataset, family, config, rng, init_factors=None):
    """One run of the alternating maximization from a single start."""
    n, dims, R = dataset.n, dataset.dims, config.rank
    D = len(dims)
    y = dataset.y
    zdesign = np.hstack([np.ones((n, 1)), dataset.z])
    spec = config.penalty
    # TENSORREG_SELFCHECK=1 cross-checks the incrementally maintained
    # linear predictor against a fresh densify-and-contract every cycle.
    selfcheck = os.environ.get("TENSORREG_SELFCHECK") == "1"

    # Intercept/covariate start: GLM with the tensor part zeroed out.
    base = irls_fit(zdesign, y, family)
    ag = base.coefficients.copy()

    if init_factors is not None:
        factors = [np.array(f, dtype=np.float64) for f in init_factors]
    else:
        factors = []
        for p in dims:
            f = rng.standard_normal((p, R))
            f /= np.maximum(np.linalg.norm(f, axis=0), 1e-12)
            factors.append(f)

    coeff = CpTensor(factors)
    offset_ag = zdesign @ ag
    eta_tensor = dataset.x_matrix() @ cp_to_full(coeff).data

    def objective(eta_full):
        ll = log_likelihood(family, y, eta_full, 1.0)
        return ll, ll - _penalty_total(spec, coeff.factors)

    ll, obj = objective(offset_ag + eta_tensor)
    trace = [obj]
    converged = False
    iterations = 0
    for _ in range(config.max_outer_iters):
        iterations += 1
        for d in range(1, D + 1):
            design = build_block_design(dataset, coeff, d)
            warm = coeff.factors[d - 1].ravel(order="F")
            try:
                if spec is not None and spec.rho > 0.0:
                    blk = penalized_fit(
                        design, y, family, offset=offset_ag, penalty=spec,
                        warm_start=warm,
                    )
                else:
                    blk = irls_fit(design, y, family, offset=offset_ag, start=warm)
            except SingularDesignError as err:
                raise SingularDesignError(err.ncols, err.rank, block=d) from None
            newf = list(coeff.factors)
            newf[d - 1] = blk.coefficients.reshape((dims[d - 1], R), order="F")
            coeff = CpTensor(newf)
            eta_tensor = blk.eta - offset_ag
        if selfcheck:
            eta_direct = dataset.x_matrix() @ cp_to_full(coeff).data
            ll_a = log_likelihood(family, y, offset_ag + eta_tensor, 1.0)
            ll_b = log_likelihood(family, y, offset_ag + eta_direct, 1.0)
            assert abs(ll_a - ll_b) <= 1e-9 * (1.0 + abs(ll_a)), (
                f"linear-predictor routes disagree: {ll_a!r} vs {ll_b!r}"
            )
        agfit = irls_fit(zdesign, y, family, offset=eta_tensor, start=ag)
        ag = agfit.coefficients
        offset_ag = zdesign @ ag
        ll, obj = objective(offset_ag + eta_tensor)
        trace.append(obj)
        gain = trace[-1] - trace[-2]
        threshold = (
            config.epsilon
            if config.epsilon is not None
            else 1e-6 * (1.0 + abs(trace[-1]))
        )
        if gain < threshold:
            converged = True
            break
    return {
        "alpha": float(ag[0]),
        "gamma": ag[1:].copy(),
        "coeff": coeff,
        "objective": trace[-1],
        "loglik_unit": ll,
        "trace": trace,
        "converged": converged,
        "iterations": iterations,
    }


def fit(dataset, family, config, init_factors=None):
    """Fit a rank-R tensor GLM by block relaxation.

    Runs ``config.restarts`` independent starts (per-restart RNG streams
    spawned from ``config.seed``) and keeps the run with the best final
    objective.  The returned coefficient is in normalized form.

    ``init_factors`` optionally pins the starting factors of the first
    restart (used e.g. to study sensitivity to initialization).
    """
    family = get_family(family)
    n, dims, R, p0 = dataset.n, dataset.dims, config.rank, dataset.p0
    unpenalized = config.penalty is None or config.penalty.rho == 0.0
    if unpenalized:
        for d, p in enumerate(dims, start=1):
            if n <= p * R + p0 + 1:
                raise DomainError(
                    f"n={n} too small for an unpenalized rank-{R} fit: block {d} "
                    f"needs more than {p * R + p0 + 1} observations"
                )

    # Warm the layout caches before any threads share the dataset.
    dataset.x_matrix()
    for d in range(1, dataset.ndim + 1):
        dataset.mode_stack(d)

    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)

    def one(idx):
        def task():
            rng = np.random.default_rng(seeds[idx])
            init = init_factors if idx == 0 else None
            try:
                return _fit_once(dataset, family, config, rng, init_factors=init)
            except TensorRegError as err:
                return err

        return task

    results = _run_indexed([one(i) for i in range(config.restarts)], max_workers())
    successes = [r for r in results if not isinstance(r, Exception)]
    if not successes:
        longest = max(
            (getattr(r, "last_fit", None) for r in results if r is not None),
            key=lambda f: len(f.trace) if f is not None else -1,
        )
        raise FitConvergenceError(
            f"all {config.restarts} restarts failed: {results[0]}",
            best_trace=list(longest.trace) if longest is not None else [],
        )
    best = max(successes, key=lambda r: r["objective"])

    coeff = normalize_identifiability(best["coeff"])
    p_e = effective_parameters(dims, R, p0)
    eta = np.full(n, best["alpha"])
    if p0:
        eta = eta + dataset.z @ best["gamma"]
    eta = eta + dataset.x_matrix() @ cp_to_full(coeff).data
    if family.dispersion_fixed:
        phi = 1.0
    else:
        mu = family.mean(eta)
        dof = n - p_e if n > p_e else n
        phi = float(np.sum((dataset.y - mu) ** 2 / family.variance(mu)) / dof)
    loglik = log_likelihood(family, dataset.y, eta, phi)
    bic_value = float(-2.0 * loglik + np.log(n) * p_e)
    return TensorGlmModel(
        alpha=best["alpha"],
        gamma=best["gamma"],
        coeff=coeff,
        family=family,
        phi=phi,
        loglik=loglik,
        bic=bic_value,
        trace=best["trace"],
        converged=best["converged"],
        restarts_used=len(successes),
        n=n,
        p0=p0,
        penalty=config.penalty,
    )


def normalize_identifiability(coeff):
    """Rescale and reorder CP factors into the canonical identifiable form.

    Columns of ``B_1, ..., B_{D-1}`` are scaled so their first entries are
    one (the scale moves into ``B_D``); columns are then permuted so the
    first row of ``B_D`` is strictly descending.  The represented tensor
    is unchanged.  Zero first-row entries or ties (a measure-zero set) use
    a documented fallback and emit :class:`DegenerateNormalizationWarning`:
    scaling by the largest-magnitude entry of the column instead, and
    breaking order ties by the later rows of ``B_D``.
    """
    D, R = coeff.ndim, coeff.rank
    factors = [f.copy() for f in coeff.factors]
    degenerate = False
    scale = np.ones(R)
    for d in range(D - 1):
        divisors = factors[d][0, :].copy()
        bad = divisors == 0.0
        if bad.any():
            degenerate = True
            for r in np.nonzero(bad)[0]:
                col = factors[d][:, r]
                top = col[np.argmax(np.abs(col))]
                divisors[r] = top if top != 0.0 else 1.0
        factors[d] /= divisors
        scale *= divisors
    factors[D - 1] = factors[D - 1] * scale

    lead = factors[D - 1][0, :]
    if np.unique(lead).size < R:
        degenerate = True
    if R > 1:
        # np.lexsort orders by the *last* key first: primary key is the
        # first row, later rows only break exact ties.
        keys = tuple(-factors[D - 1][i, :] for i in range(factors[D - 1].shape[0] - 1, -1, -1))
        order = np.lexsort(keys)
        if not np.array_equal(order, np.arange(R)):
            factors = [f[:, order] for f in factors]
    if degenerate:
        warnings.warn(
            "degenerate normalization (zero leading entry or tied ordering row); "
            "fell back to largest-magnitude scaling / later-row tie breaking",
            DegenerateNormalizationWarning,
            stacklevel=2,
        )
    return CpTensor(factors)


def bic(model, dataset):
    """Bayesian information criterion ``-2 loglik + log(n) p_e``."""
    eta = model.linear_predictor(dataset)
    ll = log_likelihood(model.family, dataset.y, eta, model.phi)
    p_e = effective_parameters(model.dims, model.rank, model.p0)
    return float(-2.0 * ll + np.log(dataset.n) * p_e)


def select_rank(dataset, family, max_rank, config):
    """Fit ranks 1..max_rank and return (best-BIC model, selection table).

    Ties break toward the smaller rank.  Ranks whose fit fails are
    recorded in the table and skipped.
    """
    if max_rank < 1:
        raise DomainError("max_rank must be >= 1")

    def run(rank):
        cfg = FitConfig(
            rank=rank,
            epsilon=config.epsilon,
            max_outer_iters=config.max_outer_iters,
            restarts=config.restarts,
            seed=config.seed,
            penalty=config.penalty,
        )

        def task():
            try:
                return fit(dataset, family, cfg)
            except TensorRegError as err:
                return err

        return task

    results = _run_indexed([run(r) for r in range(1, max_rank + 1)], max_workers())
    table = []
    best = None
    for rank, res in zip(range(1, max_rank + 1), results):
        if isinstance(res, Exception):
            table.append(
                {"rank": rank, "bic": None, "loglik": None, "converged": False,
                 "error": str(res)}
            )
            continue
        table.append(
            {"rank": rank, "bic": res.bic, "loglik": res.loglik,
             "converged": res.converged, "error": None}
        )
        if best is None or res.bic < best.bic:
            best = res
    if best is None:
        raise FitConvergenceError("no rank produced a model", best_trace=[])
    return best, table


# ---------------------------------------------------------------------------
# Derivatives of the linear predictor and likelihood-based inference
# ---------------------------------------------------------------------------


def eta_gradient(coeff, x):
    """Gradient of ``eta = <B, x>`` in all CP entries, stacked by mode.

    Block d is ``vec(X_(d) W_d)`` (column-major), the same layout as the
    rows of :func:`build_block_design`.
    """
    if coeff.dims != x.dims:
        raise DomainError(f"dims {coeff.dims} vs {x.dims}")
    blocks = []
    for d in range(1, coeff.ndim + 1):
        xd = mode_d_matricize(x, d)
        chain = factor_chain_omitting(coeff.factors, d)
        blocks.append((xd @ chain).ravel(order="F"))
    return np.concatenate(blocks)


def eta_hessian(coeff, x):
    """Hessian of ``eta = <B, x>`` in all CP entries.

    Diagonal blocks are zero; the (d, d') block is nonzero only where the
    two coordinates share the same rank-1 term, with values read off the
    mode-(d, d') matricization times the chain of the remaining factors.
    """
    if coeff.dims != x.dims:
        raise DomainError(f"dims {coeff.dims} vs {x.dims}")
    D, R = coeff.ndim, coeff.rank
    dims = coeff.dims
    sizes = [p * R for p in dims]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    H = np.zeros((offsets[-1], offsets[-1]))
    for d in range(1, D + 1):
        for d2 in range(d + 1, D + 1):
            m = mode_dd_matricize(x, d, d2) @ factor_chain_omitting(
                coeff.factors, (d, d2)
            )
            pd, pd2 = dims[d - 1], dims[d2 - 1]
            for r in range(R):
                sub = m[:, r].reshape(pd, pd2, order="F")
                r0, c0 = offsets[d - 1] + r * pd, offsets[d2 - 1] + r * pd2
                H[r0 : r0 + pd, c0 : c0 + pd2] = sub
                H[c0 : c0 + pd2, r0 : r0 + pd] = sub.T
    return H


def free_parameter_index(dims, rank):
    """Positions of the free CP entries after the normalization deletes
    the first rows of ``B_1 ... B_{D-1}``.

    Returns ``(index_map, keep)`` where ``index_map[(d, i, r)]`` (1-based
    mode, row, column) gives the flat position in the free vector and
    ``keep`` is the boolean selector into the full stacked layout of
    :func:`eta_gradient`.
    """
    D = len(dims)
    keep = []
    index_map = {}
    pos = 0
    for d in range(1, D + 1):
        p = dims[d - 1]
        for r in range(1, rank + 1):
            for i in range(1, p + 1):
                fixed = d < D and i == 1
                keep.append(not fixed)
                if not fixed:
                    index_map[(d, i, r)] = pos
                    pos += 1
    return index_map, np.asarray(keep, dtype=bool)


@dataclass
class InferenceReport:
    """Score, Fisher information and Wald standard errors.

    The parameter vector is the free CP entries (first rows of
    ``B_1..B_{D-1}`` excluded), followed by the intercept and the
    covariate coefficients; ``free_parameter_index`` maps 1-based
    ``(mode, row, column)`` CP coordinates to positions, and
    ``alpha_position`` / ``gamma_positions`` locate the rest.
    """

    score: np.ndarray
    information: np.ndarray
    std_errors: np.ndarray
    free_parameter_index: dict
    alpha_position: int
    gamma_positions: np.ndarray


def _inference_gradients(model, dataset):
    """Per-sample gradient of eta in (free CP entries, alpha, gamma)."""
    coeff = model.coeff
    blocks = [
        build_block_design(dataset, coeff, d) for d in range(1, dataset.ndim + 1)
    ]
    full = np.hstack(blocks)
    _, keep = free_parameter_index(coeff.dims, coeff.rank)
    return np.hstack([full[:, keep], np.ones((dataset.n, 1)), dataset.z])


def _weights(model, dataset):
    eta = model.linear_predictor(dataset)
    mu = model.family.mean(eta)
    mud = model.family.mean_deriv(eta)
    sigma2 = model.family.a_phi(model.phi) * model.family.variance(mu)
    return eta, mu, mud, sigma2


def score_and_information(model, dataset):
    """Score vector and Fisher information over the free parametrization.

    The information is the per-sample outer-product form summed over the
    sample, so standard errors are square roots of the diagonal of its
    inverse directly.
    """
    G = _inference_gradients(model, dataset)
    _, mu, mud, sigma2 = _weights(model, dataset)
    score = G.T @ ((dataset.y - mu) * mud / sigma2)
    info = (G * (mud**2 / sigma2)[:, None]).T @ G
    dim = info.shape[0]
    rank = np.linalg.matrix_rank(info)
    if rank < dim:
        raise InferenceError(
            f"Fisher information is singular (rank {rank} of {dim}); the "
            "parameter point is not locally identifiable up to permutation"
        )
    cov = np.linalg.inv(info)
    std = np.sqrt(np.maximum(np.diag(cov), 0.0))
    index_map, _ = free_parameter_index(model.dims, model.rank)
    nfree = len(index_map)
    return InferenceReport(
        score=score,
        information=info,
        std_errors=std,
        free_parameter_index=index_map,
        alpha_position=nfree,
        gamma_positions=np.arange(nfree + 1, nfree + 1 + model.p0),
    )


def log_density_hessian(model, dataset):
    """Hessian of the log-likelihood over the free parametrization.

    Sum over samples of ``(d^2 loglik / d eta^2) g g'`` plus the
    score-weighted curvature of eta.  The per-observation eta derivatives
    are ``d loglik/d eta = (y - mu) theta'(eta) / a(phi)`` and
    ``d^2 loglik/d eta^2 = (-V(mu) theta'(eta)^2 + (y - mu) theta''(eta))
    / a(phi)``; with the canonical links used here the theta'' term
    vanishes identically and the leading weight equals ``-mu'(eta)^2 /
    (a(phi) V(mu))``.
    """
    G = _inference_gradients(model, dataset)
    eta, mu, mud, sigma2 = _weights(model, dataset)
    fam = model.family
    a_phi = fam.a_phi(model.phi)
    resid = dataset.y - mu
    tp = fam.theta_prime(eta)
    w_outer = (-fam.variance(mu) * tp**2 + resid * fam.theta_second(eta)) / a_phi
    H = (G * w_outer[:, None]).T @ G
    # The eta-curvature term is linear in x, so the weighted sample sum
    # collapses into one Hessian evaluation at the weighted covariate sum.
    w_curv = resid * tp / a_phi
    xw = DenseTensor(
        model.dims, w_curv @ dataset.x_matrix()
    )
    _, keep = free_parameter_index(model.dims, model.rank)
    curv = eta_hessian(model.coeff, xw)[np.ix_(keep, keep)]
    nfree = int(keep.sum())
    H[:nfree, :nfree] += curv
    return H


# ---------------------------------------------------------------------------
# CP uniqueness diagnostics
# ---------------------------------------------------------------------------


def k_rank(m):
    """Largest k such that every k-subset of columns is linearly independent.

    Exhaustive over column subsets; guarded against combinatorial blowup.
    """
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    cols = m.shape[1]
    if cols < 1:
        raise DomainError("k-rank needs at least one column")
    if cols > 12:
        raise KRankSizeError(
            f"k-rank enumeration over {cols} columns is too large (max 12)"
        )
    max_k = min(cols, int(np.linalg.matrix_rank(m)))
    for k in range(1, max_k + 1):
        for subset in itertools.combinations(range(cols), k):
            if np.linalg.matrix_rank(m[:, subset]) < k:
                return k - 1
    return max_k


@dataclass
class UniquenessReport:
    """Checkable CP-uniqueness conditions for a factor set."""

    sufficient: bool
    necessary: bool
    k_ranks: list
    chain_ranks: list
    threshold: int
    notes: list = field(default_factory=list)


def check_uniqueness(coeff):
    """Evaluate the k-rank sufficient and Khatri-Rao-rank necessary
    conditions for uniqueness of the decomposition up to scaling and
    permutation."""
    D, R = coeff.ndim, coeff.rank
    k_ranks = [k_rank(f) for f in coeff.factors]
    threshold = 2 * R + (D - 1)
    sufficient = sum(k_ranks) >= threshold
    chain_ranks = []
    for d in range(1, D + 1):
        others = [coeff.factors[k] for k in range(D) if k != d - 1]
        chain = khatri_rao_chain(others) if others else np.ones((1, R))
        chain_ranks.append(int(np.linalg.matrix_rank(chain)))
    necessary = min(chain_ranks) == R
    notes = []
    if D == 2:
        notes.append(
            "D=2: any nonsingular transformation between the two factors "
            "also preserves the tensor, so these conditions alone do not "
            "settle uniqueness"
        )
    return UniquenessReport(
        sufficient=sufficient,
        necessary=necessary,
        k_ranks=k_ranks,
        chain_ranks=chain_ranks,
        threshold=threshold,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# Model document (JSON-shaped) serialization
# ---------------------------------------------------------------------------

_DOC_FORMAT = "tensorreg-model"
_DOC_VERSION = 1


def model_to_document(model):
    """Serialize a fitted model to a JSON-compatible dict."""
    return {
        "format": _DOC_FORMAT,
        "version": _DOC_VERSION,
        "family": model.family.name,
        "alpha": float(model.alpha),
        "gamma": [float(v) for v in model.gamma],
        "dims": list(model.dims),
        "rank": int(model.rank),
        "factors": [[list(map(float, row)) for row in f] for f in model.coeff.factors],
        "phi": float(model.phi),
        "loglik": float(model.loglik),
        "bic": float(model.bic),
        "n": int(model.n),
        "p0": int(model.p0),
        "trace": [float(v) for v in model.trace],
        "converged": bool(model.converged),
        "restarts_used": int(model.restarts_used),
        "penalty": model.penalty.to_dict() if model.penalty is not None else None,
    }


def model_from_document(doc):
    """Rebuild a model from :func:`model_to_document` output."""
    if doc.get("format") != _DOC_FORMAT:
        raise DomainError(f"not a {_DOC_FORMAT} document")
    if doc.get("version") != _DOC_VERSION:
        raise DomainError(f"unsupported document version {doc.get('version')!r}")
    factors = [np.asarray(f, dtype=np.float64) for f in doc["factors"]]
    coeff = CpTensor(factors)
    if tuple(doc["dims"]) != coeff.dims or doc["rank"] != coeff.rank:
        raise DomainError("document dims/rank do not match its factors")
    penalty = doc.get("penalty")
    return TensorGlmModel(
        alpha=float(doc["alpha"]),
        gamma=np.asarray(doc["gamma"], dtype=np.float64),
        coeff=coeff,
        family=get_family(doc["family"]),
        phi=float(doc["phi"]),
        loglik=float(doc["loglik"]),
        bic=float(doc["bic"]),
        trace=list(doc["trace"]),
        converged=bool(doc["converged"]),
        restarts_used=int(doc["restarts_used"]),
        n=int(doc["n"]),
        p0=int(doc["p0"]),
        penalty=PenaltySpec.from_dict(penalty) if penalty else None,
    )


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_document(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_document(json.load(fh))
