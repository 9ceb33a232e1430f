"""Sparsity penalties and the scalar threshold rules used in coordinate descent.

A penalty is a scalar function ``P(|beta|; rho, lam)`` added (negated) to
the log-likelihood of every penalized coefficient.  Supported families:

* ``power``: ``rho * |beta|**lam`` with ``lam`` in (0, 2]; ``lasso`` and
  ``ridge`` are aliases for lam = 1 and lam = 2, and ``bridge`` for
  lam = 0.5.
* ``elastic_net``: ``rho * ((lam - 1) * beta**2 / 2 + (2 - lam) * |beta|)``
  with ``lam`` in [1, 2].
* ``scad``: the three-piece penalty whose derivative is
  ``rho * (1{t <= rho} + (lam*rho - t)_+ / ((lam - 1) * rho) * 1{t > rho})``
  for t = |beta|, with ``lam`` > 2 (default 3.7).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError

__all__ = ["PenaltySpec", "penalty_value", "threshold_update", "penalized_block_update"]

_DEFAULT_LAMBDA = {"elastic_net": 1.5, "scad": 3.7, "bridge": 0.5}


@dataclass(frozen=True)
class PenaltySpec:
    """A penalty family with tuning constant ``rho`` and family index ``lam``.

    ``lasso``, ``ridge`` and ``bridge`` canonicalize to the power family
    with lam 1, 2 and 0.5.  ``rho = 0`` means no penalty for any family.
    """

    family: str
    rho: float
    lam: float | None = None

    def __post_init__(self):
        family = self.family.lower()
        lam = self.lam
        if family == "lasso":
            family, lam = "power", 1.0
        elif family == "ridge":
            family, lam = "power", 2.0
        elif family == "bridge":
            family, lam = "power", _DEFAULT_LAMBDA["bridge"]
        if family not in ("power", "elastic_net", "scad"):
            raise DomainError(f"unknown penalty family {self.family!r}")
        if lam is None:
            if family == "power":
                raise DomainError("power penalty requires an explicit lam in (0, 2]")
            lam = _DEFAULT_LAMBDA[family]
        lam = float(lam)
        if family == "power" and not 0.0 < lam <= 2.0:
            raise DomainError(f"power penalty needs lam in (0, 2], got {lam}")
        if family == "elastic_net" and not 1.0 <= lam <= 2.0:
            raise DomainError(f"elastic net needs lam in [1, 2], got {lam}")
        if family == "scad" and not lam > 2.0:
            raise DomainError(f"scad needs lam > 2, got {lam}")
        if self.rho < 0:
            raise DomainError(f"rho must be nonnegative, got {self.rho}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "lam", lam)

    @property
    def is_convex(self):
        return self.family == "elastic_net" or (
            self.family == "power" and self.lam >= 1.0
        )

    def to_dict(self):
        return {"family": self.family, "rho": self.rho, "lam": self.lam}

    @classmethod
    def from_dict(cls, d):
        return cls(d["family"], d["rho"], d.get("lam"))


def penalty_value(spec, beta):
    """Evaluate ``P(|beta|; rho, lam)`` elementwise."""
    t = np.abs(np.asarray(beta, dtype=np.float64))
    rho, lam = spec.rho, spec.lam
    if rho == 0.0:
        return np.zeros_like(t) if t.ndim else 0.0
    if spec.family == "power":
        out = rho * t**lam
    elif spec.family == "elastic_net":
        out = rho * ((lam - 1.0) * t**2 / 2.0 + (2.0 - lam) * t)
    else:  # scad: integral of the derivative, in closed three-piece form
        linear = rho * t
        quad = (2.0 * lam * rho * t - t**2 - rho**2) / (2.0 * (lam - 1.0))
        flat = (lam + 1.0) * rho**2 / 2.0
        out = np.where(t <= rho, linear, np.where(t <= lam * rho, quad, flat))
    return float(out) if out.ndim == 0 else out


def _soft(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)


def _scad_threshold(rho, lam, z, w):
    # Candidate stationary points of (w/2)(b-z)^2 + P_scad(b) on b >= 0
    # plus region boundaries; robust when w*(lam-1) <= 1.
    cands = [0.0, min(z, rho), min(z, lam * rho)]
    b1 = z - rho / w
    if 0.0 <= b1 <= rho:
        cands.append(b1)
    denom = w * (lam - 1.0) - 1.0
    if denom > 0.0:
        b2 = (w * z * (lam - 1.0) - lam * rho) / denom
        if rho <= b2 <= lam * rho:
            cands.append(b2)
    if z >= lam * rho:
        cands.append(z)
    spec = PenaltySpec("scad", rho, lam)

    def f(b):
        return 0.5 * w * (b - z) ** 2 + penalty_value(spec, b)

    return min(cands, key=f)


def _power_threshold(rho, lam, z, w):
    spec = PenaltySpec("power", rho, lam)

    def f(b):
        return 0.5 * w * (b - z) ** 2 + penalty_value(spec, b)

    # Interior minimizer lies in (0, z]; compare against the boundary b = 0,
    # which is always a local minimum when lam < 1.
    res = minimize_scalar(f, bounds=(0.0, z), method="bounded", options={"xatol": 1e-14})
    best = res.x if res.fun <= f(0.0) else 0.0
    return best if f(best) <= f(z) else z


def threshold_update(spec, z, quad_weight):
    """Minimize ``(quad_weight/2) * (beta - z)**2 + P(|beta|; rho, lam)``.

    Closed forms for lasso, ridge, elastic net, and SCAD; safeguarded
    one-dimensional minimization for the remaining power exponents.  Odd
    in ``z`` for every family.
    """
    if quad_weight <= 0.0:
        raise DomainError(f"quad_weight must be positive, got {quad_weight}")
    z = float(z)
    w = float(quad_weight)
    rho, lam = spec.rho, spec.lam
    if rho == 0.0 or z == 0.0:
        return z
    if z < 0.0:
        return -threshold_update(spec, -z, w)
    if spec.family == "power":
        if lam == 1.0:
            return _soft(z, rho / w)
        if lam == 2.0:
            return w * z / (w + 2.0 * rho)
        return _power_threshold(rho, lam, z, w)
    if spec.family == "elastic_net":
        return _soft(w * z, rho * (2.0 - lam)) / (w + rho * (lam - 1.0))
    return _scad_threshold(rho, lam, z, w)


def penalized_block_update(dataset, alpha, gamma, coeff, d, spec, family):
    """One penalized factor-block update of the alternating fit.

    Maximizes the penalized log-likelihood over factor ``d`` with the
    intercept, the covariate coefficients and the other factor blocks
    held fixed; the intercept/covariate part enters through the offset
    and is never penalized.  Returns the updated ``p_d x R`` factor.
    """
    from .glm import penalized_fit
    from .model import build_block_design

    design = build_block_design(dataset, coeff, d)
    offset = np.full(dataset.n, alpha)
    if dataset.p0:
        offset = offset + dataset.z @ gamma
    warm = coeff.factors[d - 1].ravel(order="F")
    fit = penalized_fit(
        design, dataset.y, family, offset=offset, penalty=spec, warm_start=warm
    )
    p_d = dataset.dims[d - 1]
    return fit.coefficients.reshape((p_d, coeff.rank), order="F")
