"""Exponential-family distributions, link functions, and deviance losses.

Everything here is a pure function of its inputs: families supply the
variance function, the unit half-deviance and the data domain; links supply
the map g from means to linear predictors, its inverse m = g^{-1}, and the
derivative m'. Arrays and scalars are both accepted; outputs follow numpy
broadcasting.

Conventions baked in:

* 0 * log 0 = 0 in the Poisson, Bernoulli and negative binomial deviances,
  so the losses stay finite on the closed data domain.
* Means coming out of a link are clamped away from the boundary
  (``clamp_mean``) before variance or deviance evaluation, which keeps the
  fitting loop clear of 0/0.
* The negative binomial ``phi`` is the size parameter of the variance
  function mu + mu^2/phi; larger phi means closer to Poisson.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

MEAN_EPS = 1e-10  # boundary clamp for means after link inversion
MEAN_MAX = 1e150  # upper clamp for positive means; keeps mu^2 finite
X_LOG_EPS = 1e-10  # floor for x inside gamma log terms (quasi-fits on data with zeros)
ETA_EXP_MAX = 700.0  # exp() overflow guard
CLOGLOG_ETA_MAX = 30.0


class DomainError(ValueError):
    """Data or mean value outside the family/link domain."""


class NumericOverflowError(ArithmeticError):
    """A deviance or link evaluation produced a non-finite value."""


class DegenerateVarianceError(ValueError):
    """Variance function evaluated to zero at a boundary mean."""


class IncompatibleModelError(ValueError):
    """Family and link cannot be combined (link range misses the mean domain)."""


class UnderdispersedDataWarning(UserWarning):
    """Sample variance at or below the mean; dispersion clipped to the floor."""


# --------------------------------------------------------------------------
# Links
# --------------------------------------------------------------------------


class Link:
    """Base link: g maps means to linear predictors, m = g^{-1} maps back."""

    name: str = ""
    range: str = "real"  # image of m: "real", "positive" or "unit"

    def g(self, mu):
        raise NotImplementedError

    def m(self, eta):
        raise NotImplementedError

    def m_prime(self, eta):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


class IdentityLink(Link):
    name = "identity"
    range = "real"

    def g(self, mu):
        return np.asarray(mu, dtype=float) + 0.0

    def m(self, eta):
        return np.asarray(eta, dtype=float) + 0.0

    def m_prime(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))


class LogLink(Link):
    name = "log"
    range = "positive"

    def g(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any(mu <= 0):
            raise DomainError("log link requires mu > 0")
        return np.log(mu)

    def m(self, eta):
        return np.exp(np.minimum(eta, ETA_EXP_MAX))

    def m_prime(self, eta):
        return np.exp(np.minimum(eta, ETA_EXP_MAX))


class LogitLink(Link):
    name = "logit"
    range = "unit"

    def g(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any((mu <= 0) | (mu >= 1)):
            raise DomainError("logit link requires 0 < mu < 1")
        return np.log(mu / (1.0 - mu))

    def m(self, eta):
        return special.expit(eta)

    def m_prime(self, eta):
        p = special.expit(eta)
        return p * (1.0 - p)


class ProbitLink(Link):
    name = "probit"
    range = "unit"

    def g(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any((mu <= 0) | (mu >= 1)):
            raise DomainError("probit link requires 0 < mu < 1")
        return special.ndtri(mu)

    def m(self, eta):
        return special.ndtr(np.asarray(eta, dtype=float))

    def m_prime(self, eta):
        eta = np.asarray(eta, dtype=float)
        return np.exp(-0.5 * eta * eta) / math.sqrt(2.0 * math.pi)


class CloglogLink(Link):
    """Complementary log-log; eta is clamped to +-30 to keep exp(exp(.)) finite."""

    name = "cloglog"
    range = "unit"

    def g(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any((mu <= 0) | (mu >= 1)):
            raise DomainError("cloglog link requires 0 < mu < 1")
        return np.log(-np.log1p(-mu))

    def m(self, eta):
        eta = np.clip(eta, -CLOGLOG_ETA_MAX, CLOGLOG_ETA_MAX)
        return -np.expm1(-np.exp(eta))

    def m_prime(self, eta):
        eta = np.clip(eta, -CLOGLOG_ETA_MAX, CLOGLOG_ETA_MAX)
        return np.exp(eta - np.exp(eta))


class InverseLink(Link):
    """Reciprocal link g(mu) = 1/mu. Note m'(eta) = -1/eta^2 is negative."""

    name = "inverse"
    range = "positive"

    def g(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any(mu <= 0):
            raise DomainError("inverse link requires mu > 0")
        return 1.0 / mu

    def m(self, eta):
        eta = np.asarray(eta, dtype=float)
        with np.errstate(divide="ignore"):
            return 1.0 / eta

    def m_prime(self, eta):
        eta = np.asarray(eta, dtype=float)
        with np.errstate(divide="ignore"):
            return -1.0 / (eta * eta)


@dataclass(frozen=True)
class NegBinCanonicalLink(Link):
    """Canonical negative binomial link g(mu) = log(mu / (mu + phi)).

    Only defined for eta < 0; the inverse clips eta slightly below zero.
    """

    phi: float = 1.0
    name = "negbin-canonical"
    range = "positive"

    def g(self, mu):
        mu = np.asarray(mu, dtype=float)
        if np.any(mu <= 0):
            raise DomainError("negbin canonical link requires mu > 0")
        return np.log(mu / (mu + self.phi))

    def m(self, eta):
        e = np.exp(np.minimum(eta, -1e-12))
        return self.phi * e / (1.0 - e)

    def m_prime(self, eta):
        e = np.exp(np.minimum(eta, -1e-12))
        return self.phi * e / (1.0 - e) ** 2


_LINKS = {
    "identity": IdentityLink,
    "log": LogLink,
    "logit": LogitLink,
    "probit": ProbitLink,
    "cloglog": CloglogLink,
    "inverse": InverseLink,
}


def get_link(name: str, phi: float | None = None) -> Link:
    """Look a link up by name. ``negbin-canonical`` needs the family's phi."""
    if name == "negbin-canonical":
        return NegBinCanonicalLink(phi=1.0 if phi is None else float(phi))
    try:
        return _LINKS[name]()
    except KeyError:
        raise ValueError(f"unknown link {name!r}; choose from "
                         f"{sorted(_LINKS)} or 'negbin-canonical'") from None


def link_apply(link: Link, mu):
    """eta = g(mu)."""
    return link.g(mu)


def link_invert(link: Link, eta):
    """mu = m(eta) = g^{-1}(eta)."""
    return link.m(eta)


def link_mprime(link: Link, eta):
    """m'(eta), the derivative of the inverse link."""
    return link.m_prime(eta)


# --------------------------------------------------------------------------
# Families
# --------------------------------------------------------------------------


class Family:
    """Base family. Subclasses fix the variance function and unit deviance."""

    name: str = ""
    mean_domain: str = "real"  # "real", "positive" or "unit"
    phi: float = 1.0
    trials: float = 1.0  # prior-weight multiplier (binomial trial count)

    # dispersion multiplier on the variance function: Var(X) = multiplier * V(mu) / w.
    # For the negative binomial, phi already lives inside V(mu), so this stays 1.
    @property
    def dispersion_multiplier(self) -> float:
        return 1.0

    def variance(self, mu):
        raise NotImplementedError

    def unit_deviance(self, x, mu):
        """Vectorized half-deviance with closed-domain conventions; no checks."""
        raise NotImplementedError

    def check_data(self, x) -> None:
        """Raise DomainError unless x lies in the closed data domain."""

    def check_data_strict(self, x) -> None:
        """Raise DomainError unless x lies in the open domain of the deviance."""
        self.check_data(x)

    def clamp_mean(self, mu):
        """Pull means off the boundary so variance/deviance stay finite."""
        if self.mean_domain == "positive":
            return np.clip(mu, MEAN_EPS, MEAN_MAX)
        if self.mean_domain == "unit":
            return np.clip(mu, MEAN_EPS, 1.0 - MEAN_EPS)
        return np.asarray(mu, dtype=float)

    def check_mean(self, mu) -> None:
        mu = np.asarray(mu, dtype=float)
        if self.mean_domain == "positive" and np.any(mu <= 0):
            raise DomainError(f"{self.name} requires mu > 0")
        if self.mean_domain == "unit" and np.any((mu <= 0) | (mu >= 1)):
            raise DomainError(f"{self.name} requires 0 < mu < 1")

    def canonical_link(self) -> Link:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


@dataclass(frozen=True, repr=False)
class Gaussian(Family):
    name = "gaussian"
    mean_domain = "real"

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def unit_deviance(self, x, mu):
        r = np.asarray(x, dtype=float) - mu
        return 0.5 * r * r

    def canonical_link(self):
        return IdentityLink()


@dataclass(frozen=True, repr=False)
class Poisson(Family):
    name = "poisson"
    mean_domain = "positive"

    def variance(self, mu):
        return np.asarray(mu, dtype=float) + 0.0

    def unit_deviance(self, x, mu):
        x = np.asarray(x, dtype=float)
        return special.xlogy(x, x) - special.xlogy(x, mu) - (x - mu)

    def check_data(self, x):
        if np.any(np.asarray(x) < 0):
            raise DomainError("poisson data must be nonnegative")

    def canonical_link(self):
        return LogLink()


@dataclass(frozen=True, repr=False)
class Gamma(Family):
    phi: float = 1.0
    name = "gamma"
    mean_domain = "positive"

    def __post_init__(self):
        if self.phi <= 0:
            raise ValueError("gamma dispersion must be positive")

    @property
    def dispersion_multiplier(self) -> float:
        return self.phi

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu * mu

    def unit_deviance(self, x, mu):
        # x floored inside the log so quasi-fits on data containing zeros
        # keep a finite loss trace; the strict entry point rejects x <= 0.
        x = np.asarray(x, dtype=float)
        return (x - mu) / mu - np.log(np.maximum(x, X_LOG_EPS) / mu)

    def check_data(self, x):
        if np.any(np.asarray(x) < 0):
            raise DomainError("gamma data must be nonnegative")

    def check_data_strict(self, x):
        if np.any(np.asarray(x) <= 0):
            raise DomainError("gamma data must be strictly positive")

    def canonical_link(self):
        return InverseLink()


@dataclass(frozen=True, repr=False)
class Bernoulli(Family):
    """Bernoulli/binomial family on proportions in [0, 1].

    ``trials`` is the binomial trial count; it multiplies the entry weights
    (per-entry dispersion 1/(w * trials)) rather than changing the deviance.
    """

    trials: float = 1.0
    name = "bernoulli"
    mean_domain = "unit"

    def __post_init__(self):
        if self.trials <= 0:
            raise ValueError("trial count must be positive")

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu * (1.0 - mu)

    def unit_deviance(self, x, mu):
        x = np.asarray(x, dtype=float)
        mu = np.asarray(mu, dtype=float)
        return (special.xlogy(x, x) - special.xlogy(x, mu)
                + special.xlogy(1.0 - x, 1.0 - x) - special.xlogy(1.0 - x, 1.0 - mu))

    def check_data(self, x):
        x = np.asarray(x)
        if np.any((x < 0) | (x > 1)):
            raise DomainError("bernoulli data must lie in [0, 1]")

    def canonical_link(self):
        return LogitLink()


@dataclass(frozen=True, repr=False)
class NegativeBinomial(Family):
    phi: float = 1.0
    name = "negbin"
    mean_domain = "positive"

    def __post_init__(self):
        if self.phi <= 0:
            raise ValueError("negative binomial size must be positive")

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu + mu * mu / self.phi

    def unit_deviance(self, x, mu):
        x = np.asarray(x, dtype=float)
        mu = np.asarray(mu, dtype=float)
        xp = x + self.phi
        return (special.xlogy(x, x) - special.xlogy(x, mu)
                - xp * np.log(xp / (mu + self.phi)))

    def check_data(self, x):
        if np.any(np.asarray(x) < 0):
            raise DomainError("negative binomial data must be nonnegative")

    def canonical_link(self):
        return NegBinCanonicalLink(phi=self.phi)


_FAMILIES = {
    "gaussian": Gaussian,
    "poisson": Poisson,
    "gamma": Gamma,
    "bernoulli": Bernoulli,
    "binomial": Bernoulli,
    "negbin": NegativeBinomial,
}


def get_family(name: str, phi: float | None = None, trials: float | None = None) -> Family:
    """Build a family by name; phi applies to gamma/negbin, trials to bernoulli."""
    try:
        cls = _FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; choose from {sorted(_FAMILIES)}") from None
    if cls is Gamma or cls is NegativeBinomial:
        return cls(phi=1.0 if phi is None else float(phi))
    if phi is not None and float(phi) != 1.0:
        raise ValueError(f"{name} has unit dispersion; phi cannot be set")
    if cls is Bernoulli:
        return cls(trials=1.0 if trials is None else float(trials))
    if trials is not None and float(trials) != 1.0:
        raise ValueError(f"{name} does not take a trial count")
    return cls()


def check_family_link(family: Family, link: Link) -> None:
    """Reject combinations whose inverse link cannot produce valid means."""
    if family.mean_domain == "unit" and link.range != "unit":
        raise IncompatibleModelError(
            f"{family.name} needs a link with range (0, 1); {link.name} has range "
            f"{link.range}")


def deviance(family: Family, x, mu):
    """Half-deviance L(x, mu); zero iff x == mu, strict about domains."""
    family.check_data_strict(x)
    family.check_mean(mu)
    out = family.unit_deviance(np.asarray(x, dtype=float), np.asarray(mu, dtype=float))
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("deviance evaluated to a non-finite value")
    return out


def variance_function(family: Family, mu):
    """V(mu), rejecting boundary means where it degenerates to zero."""
    family.check_mean(mu)
    out = family.variance(np.asarray(mu, dtype=float))
    if np.any(out <= 0):
        raise DegenerateVarianceError(f"variance function of {family.name} hit zero")
    return out


def estimate_dispersion_mom(x, weights=None, floor: float = 0.1,
                            use_mean_square: bool = False) -> float:
    """Method-of-moments negative binomial dispersion.

    Matches sample moments to Var = mu + mu^2/phi over positive-weight
    entries: phi = mean^2 / (var - mean), clipped below at ``floor``.
    ``use_mean_square`` switches the numerator to E[X^2] for the alternative
    reading of the estimator.
    """
    x = np.asarray(x, dtype=float)
    if weights is not None:
        x = x[np.asarray(weights) > 0]
    x = x.ravel()
    if x.size < 2 or np.all(x == x.flat[0]):
        raise ValueError("dispersion estimation needs at least two distinct values")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    if var <= mean:
        warnings.warn("sample variance <= mean; data look underdispersed, "
                      f"returning the {floor} floor", UnderdispersedDataWarning)
        return floor
    num = float(np.mean(x * x)) if use_mean_square else mean * mean
    return max(floor, num / (var - mean))
