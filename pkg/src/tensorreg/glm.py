"""Exponential families and the weighted/penalized GLM solvers.

These are the inner kernels of every block update in the alternating
tensor fit: each factor update is an ordinary GLM (or penalized GLM) on a
derived design matrix with the remaining parameters absorbed into an
offset.  Only canonical links are implemented (identity, logit, log), so
the natural parameter always equals the linear predictor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

from .errors import DomainError, GlmDivergenceError, SingularDesignError
from .penalties import penalty_value, threshold_update

__all__ = [
    "GlmFamily",
    "GlmFit",
    "get_family",
    "log_likelihood",
    "irls_fit",
    "penalized_fit",
]

_MIN_WEIGHT = 1e-10


class GlmFamily:
    """An exponential-family response with its canonical link.

    Subclasses provide the cumulant ``b``, its derivatives (the mean and
    variance functions), the canonical link, and the log-density constant
    ``c(y, phi)``.  With a canonical link ``theta(eta) = eta``, so
    ``theta'(eta) = 1`` and ``theta''(eta) = 0`` everywhere.
    """

    name = "?"
    dispersion_fixed = True

    def theta(self, eta):
        return eta

    def theta_prime(self, eta):
        return np.ones_like(np.asarray(eta, dtype=np.float64))

    def theta_second(self, eta):
        return np.zeros_like(np.asarray(eta, dtype=np.float64))

    def a_phi(self, phi):
        """Dispersion scale ``a(phi)``: 1 for fixed-dispersion families."""
        return 1.0

    def b(self, theta):
        raise NotImplementedError

    def mean(self, eta):
        """Mean function ``mu(eta) = b'(theta(eta))``."""
        raise NotImplementedError

    def mean_deriv(self, eta):
        """``mu'(eta) = b''(theta)`` for canonical links."""
        raise NotImplementedError

    def variance(self, mu):
        """Variance function ``V(mu)``."""
        raise NotImplementedError

    def link(self, mu):
        """Canonical link ``g(mu)``."""
        raise NotImplementedError

    def c(self, y, phi):
        """Per-observation log-density constant ``c(y, phi)``."""
        raise NotImplementedError

    def sample(self, eta, rng):
        """Draw responses with linear predictor ``eta`` (unit dispersion)."""
        raise NotImplementedError

    def __repr__(self):
        return f"<GlmFamily {self.name}>"


class NormalFamily(GlmFamily):
    name = "normal"
    dispersion_fixed = False

    def a_phi(self, phi):
        return float(phi)

    def b(self, theta):
        return 0.5 * np.square(theta)

    def mean(self, eta):
        return np.asarray(eta, dtype=np.float64)

    def mean_deriv(self, eta):
        return np.ones_like(np.asarray(eta, dtype=np.float64))

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=np.float64))

    def link(self, mu):
        return np.asarray(mu, dtype=np.float64)

    def c(self, y, phi):
        # Exact constant, so the normal log-likelihood is the true density.
        return -0.5 * np.square(y) / phi - 0.5 * np.log(2.0 * np.pi * phi)

    def sample(self, eta, rng):
        return eta + rng.standard_normal(np.shape(eta))


class BernoulliFamily(GlmFamily):
    name = "bernoulli"

    def b(self, theta):
        return np.logaddexp(0.0, theta)

    def mean(self, eta):
        return expit(eta)

    def mean_deriv(self, eta):
        mu = expit(eta)
        return mu * (1.0 - mu)

    def variance(self, mu):
        return mu * (1.0 - mu)

    def link(self, mu):
        return np.log(mu / (1.0 - mu))

    def c(self, y, phi):
        return np.zeros_like(np.asarray(y, dtype=np.float64))

    def sample(self, eta, rng):
        return (rng.random(np.shape(eta)) < expit(eta)).astype(np.float64)


class PoissonFamily(GlmFamily):
    name = "poisson"

    def b(self, theta):
        return np.exp(theta)

    def mean(self, eta):
        return np.exp(eta)

    def mean_deriv(self, eta):
        return np.exp(eta)

    def variance(self, mu):
        return np.asarray(mu, dtype=np.float64)

    def link(self, mu):
        return np.log(mu)

    def c(self, y, phi):
        # Data-only constant log(y!), included so likelihoods are comparable
        # across models fitted to the same data.
        return -gammaln(np.asarray(y, dtype=np.float64) + 1.0)

    def sample(self, eta, rng):
        return rng.poisson(np.exp(eta)).astype(np.float64)


_FAMILIES = {f.name: f for f in (NormalFamily(), BernoulliFamily(), PoissonFamily())}
_ALIASES = {"gaussian": "normal", "binomial": "bernoulli", "logistic": "bernoulli"}


def get_family(name):
    """Look up a family instance by name (normal, bernoulli, poisson)."""
    if isinstance(name, GlmFamily):
        return name
    key = _ALIASES.get(name.lower(), name.lower())
    try:
        return _FAMILIES[key]
    except KeyError:
        raise DomainError(f"unknown GLM family {name!r}") from None


def log_likelihood(family, y, eta, phi=1.0):
    """Exponential-family log-likelihood at linear predictor ``eta``.

    ``sum_i (y_i * theta_i - b(theta_i)) / a(phi) + sum_i c(y_i, phi)``
    with ``theta = eta`` (canonical link).
    """
    family = get_family(family)
    y = np.asarray(y, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if y.shape != eta.shape:
        raise DomainError(f"y has shape {y.shape}, eta has shape {eta.shape}")
    if not np.all(np.isfinite(eta)):
        raise DomainError("nonfinite linear predictor")
    theta = family.theta(eta)
    with np.errstate(over="ignore"):
        core = (y * theta - family.b(theta)) / family.a_phi(phi)
    return float(np.sum(core) + np.sum(family.c(y, phi)))


@dataclass
class GlmFit:
    """Result of a (penalized) GLM fit.

    ``loglik`` is the working log-likelihood at unit dispersion; ``phi``
    carries the Pearson dispersion estimate for the normal family (1.0
    otherwise).  ``restart_selected`` reports which start won when a
    nonconvex penalty was solved from multiple starts.
    """

    coefficients: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    phi: float = 1.0
    restart_selected: int | None = None
    eta: np.ndarray = field(default=None, repr=False)
    trace: list = field(default_factory=list, repr=False)


def _as_offset(offset, n):
    if offset is None:
        return np.zeros(n)
    offset = np.asarray(offset, dtype=np.float64).reshape(-1)
    if offset.size != n:
        raise DomainError(f"offset length {offset.size} != {n} observations")
    return offset


def _pearson_phi(family, y, eta, ncols):
    if family.dispersion_fixed:
        return 1.0
    mu = family.mean(eta)
    dof = max(len(y) - ncols, 1)
    return float(np.sum((y - mu) ** 2 / family.variance(mu)) / dof)


def irls_fit(design, y, family, offset=None, *, start=None, tol=1e-8, max_iter=100):
    """Maximum-likelihood GLM fit by iteratively reweighted least squares.

    The offset is added to the linear predictor and not estimated.  For
    the normal family this is weighted least squares and converges in one
    step.  Step-halving keeps the log-likelihood nondecreasing across
    iterations for the canonical links used here; with a warm ``start``
    the result is therefore never worse than the starting point.

    Raises
    ------
    SingularDesignError
        If the design is column-rank deficient.
    GlmDivergenceError
        If ``max_iter`` is exhausted (e.g. separation under the bernoulli
        family); the error carries the last iterate.
    """
    family = get_family(family)
    X = np.asarray(design, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, p = X.shape
    if y.size != n:
        raise DomainError(f"{n} design rows vs {y.size} responses")
    offset = _as_offset(offset, n)

    if start is None:
        beta = np.zeros(p)
    else:
        beta = np.asarray(start, dtype=np.float64).reshape(-1).copy()
        if beta.size != p:
            raise DomainError(f"start has {beta.size} entries for {p} columns")
    eta = X @ beta + offset
    ll = log_likelihood(family, y, eta, 1.0)
    trace = [ll]
    rank_checked = False
    for it in range(1, max_iter + 1):
        mu = family.mean(eta)
        w = np.maximum(family.mean_deriv(eta), _MIN_WEIGHT)
        z = (eta - offset) + (y - mu) / w
        sw = np.sqrt(w)
        beta_new, _, rank, _ = np.linalg.lstsq(sw[:, None] * X, sw * z, rcond=None)
        if not rank_checked:
            if rank < p:
                raise SingularDesignError(p, int(rank))
            rank_checked = True
        # Step-halving: guarantee monotone ascent of the log-likelihood.
        for _ in range(40):
            eta_new = X @ beta_new + offset
            ll_new = log_likelihood(family, y, eta_new, 1.0)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * (1.0 + abs(ll)):
                break
            beta_new = 0.5 * (beta_new + beta)
        beta, eta = beta_new, X @ beta_new + offset
        ll_prev, ll = ll, log_likelihood(family, y, eta, 1.0)
        trace.append(ll)
        if abs(ll - ll_prev) <= tol * (1.0 + abs(ll)):
            return GlmFit(
                coefficients=beta,
                loglik=ll,
                iterations=it,
                converged=True,
                phi=_pearson_phi(family, y, eta, p),
                eta=eta,
                trace=trace,
            )
    last = GlmFit(
        coefficients=beta,
        loglik=ll,
        iterations=max_iter,
        converged=False,
        phi=_pearson_phi(family, y, eta, p),
        eta=eta,
        trace=trace,
    )
    raise GlmDivergenceError(
        f"IRLS did not converge in {max_iter} iterations "
        f"(family={family.name}; possible separation or unstable design)",
        last_fit=last,
    )


def _penalized_objective(family, y, X, offset, beta, penalized, spec):
    eta = X @ beta + offset
    ll = log_likelihood(family, y, eta, 1.0)
    return ll - float(np.sum(penalty_value(spec, beta[penalized]))), eta


def _cd_on_quadratic(G, cvec, beta, penalized, spec, tol, max_sweeps):
    """Cyclic coordinate descent on (1/2) b'Gb - c'b + sum P(|b_j|)."""
    beta = beta.copy()
    q = G @ beta
    diag = np.diag(G)
    p = beta.size
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            gjj = diag[j]
            if gjj <= 0.0:
                new = 0.0
            else:
                zj = (cvec[j] - q[j] + gjj * beta[j]) / gjj
                new = threshold_update(spec, zj, gjj) if penalized[j] else zj
            step = new - beta[j]
            if step != 0.0:
                q += G[:, j] * step
                beta[j] = new
                delta = max(delta, abs(step))
        if delta <= tol:
            break
    return beta


def _penalized_path(family, y, X, offset, spec, penalized, beta0, tol, max_iter,
                    max_sweeps):
    """IRLS-majorized coordinate descent from one starting point."""
    beta = beta0.copy()
    obj, eta = _penalized_objective(family, y, X, offset, beta, penalized, spec)
    trace = [obj]
    for it in range(1, max_iter + 1):
        mu = family.mean(eta)
        w = np.maximum(family.mean_deriv(eta), _MIN_WEIGHT)
        z = (eta - offset) + (y - mu) / w
        Xw = X * w[:, None]
        G = X.T @ Xw
        cvec = Xw.T @ z
        beta_new = _cd_on_quadratic(G, cvec, beta, penalized, spec,
                                    tol=1e-12, max_sweeps=max_sweeps)
        # The quadratic is only a local model for non-normal families;
        # halve back toward the previous iterate if the true objective fell.
        obj_new, eta_new = _penalized_objective(
            family, y, X, offset, beta_new, penalized, spec
        )
        for _ in range(40):
            if np.isfinite(obj_new) and obj_new >= obj - 1e-12 * (1.0 + abs(obj)):
                break
            beta_new = 0.5 * (beta_new + beta)
            obj_new, eta_new = _penalized_objective(
                family, y, X, offset, beta_new, penalized, spec
            )
        beta, eta = beta_new, eta_new
        trace.append(obj_new)
        if abs(obj_new - obj) <= tol * (1.0 + abs(obj_new)):
            return beta, eta, obj_new, it, True, trace
        obj = obj_new
    return beta, eta, obj, max_iter, False, trace


def penalized_fit(design, y, family, offset=None, penalty=None,
                  unpenalized_mask=None, *, warm_start=None, tol=1e-9,
                  max_iter=100, max_sweeps=1000, restarts=3):
    """Penalized GLM fit by coordinate descent on the IRLS quadratic.

    Maximizes ``loglik - sum_j P(|beta_j|)`` over the penalized
    coordinates; coordinates flagged in ``unpenalized_mask`` (e.g.
    intercept columns) are updated without shrinkage.  With no penalty or
    ``rho = 0`` this delegates to :func:`irls_fit`.  Nonconvex penalties
    (power with lam < 1, SCAD) are solved from up to ``restarts``
    deterministic starting points and the best objective wins.
    """
    family = get_family(family)
    X = np.asarray(design, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n, p = X.shape
    offset = _as_offset(offset, n)
    if unpenalized_mask is None:
        unpenalized_mask = np.zeros(p, dtype=bool)
    else:
        unpenalized_mask = np.asarray(unpenalized_mask, dtype=bool).reshape(-1)
        if unpenalized_mask.size != p:
            raise DomainError(
                f"mask length {unpenalized_mask.size} != {p} design columns"
            )
    if penalty is None or penalty.rho == 0.0:
        return irls_fit(design, y, family, offset, tol=tol, max_iter=max_iter)
    penalized = ~unpenalized_mask

    if unpenalized_mask.any():
        sub = X[:, unpenalized_mask]
        rank = np.linalg.matrix_rank(sub)
        if rank < sub.shape[1]:
            raise SingularDesignError(int(sub.shape[1]), int(rank))

    starts = []
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=np.float64).reshape(-1).copy())
    starts.append(np.zeros(p))
    if not penalty.is_convex:
        try:
            unpen = irls_fit(X, y, family, offset, tol=tol, max_iter=max_iter)
            starts.append(unpen.coefficients)
        except (SingularDesignError, GlmDivergenceError):
            pass
        if warm_start is not None:
            starts.append(0.5 * starts[0])
        starts = starts[:restarts] if restarts >= 1 else starts[:1]
    else:
        # Convex objective: any start reaches the unique optimum.
        starts = starts[:1]

    best = None
    for k, b0 in enumerate(starts):
        beta, eta, obj, its, conv, trace = _penalized_path(
            family, y, X, offset, penalty, penalized, b0, tol, max_iter, max_sweeps
        )
        if best is None or obj > best[2]:
            best = (beta, eta, obj, its, conv, k, trace)
    beta, eta, obj, its, conv, k, trace = best
    if not conv:
        last = GlmFit(beta, log_likelihood(family, y, eta, 1.0), its, False,
                      phi=_pearson_phi(family, y, eta, p), eta=eta, trace=trace)
        raise GlmDivergenceError(
            f"penalized fit did not converge in {max_iter} outer iterations",
            last_fit=last,
        )
    return GlmFit(
        coefficients=beta,
        loglik=log_likelihood(family, y, eta, 1.0),
        iterations=its,
        converged=True,
        phi=_pearson_phi(family, y, eta, p),
        restart_selected=k if len(starts) > 1 else None,
        eta=eta,
        trace=trace,
    )
