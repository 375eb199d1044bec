"""Low-rank matrix factorization under exponential-family deviance losses.

Fit with :func:`dmf_fit`, make the factors unique with :func:`canonicalize`
(or :func:`center_fit` to split off a known structure such as a per-column
intercept), check the family/link choice with :func:`ghl_test`, and pick the
rank with :func:`rank_report` on a high-rank fit. :mod:`devmf.simlab` holds
seeded simulation experiments; the ``devmf`` command exposes everything for
batch use.
"""

from ._kernels import backend_name
from .canonicalize import (CanonicalFit, CenteredFit, canonicalize, center,
                           center_fit, identify)
from .engine import (DataMatrix, ModelSpec, RawFit, dmf_fit, initialize,
                     variance_weights, wls_solve, working_response)
from .families import (Bernoulli, Family, Gamma, Gaussian, Link,
                       NegativeBinomial, Poisson, check_family_link, deviance,
                       estimate_dispersion_mom, get_family, get_link,
                       link_apply, link_invert, link_mprime, variance_function)
from .gof import GofReport, ghl_test, group_residuals
from .rank import RankReport, eigen_profile, estimate_rank, rank_report

__version__ = "0.1.0"

__all__ = [
    "Bernoulli", "CanonicalFit", "CenteredFit", "DataMatrix", "Family",
    "Gamma", "Gaussian", "GofReport", "Link", "ModelSpec", "NegativeBinomial",
    "Poisson", "RankReport", "RawFit", "backend_name", "canonicalize",
    "center", "center_fit", "check_family_link", "deviance", "dmf_fit",
    "estimate_dispersion_mom", "eigen_profile", "estimate_rank", "get_family",
    "get_link", "ghl_test", "group_residuals", "identify", "initialize",
    "link_apply", "link_invert", "link_mprime", "rank_report",
    "variance_function", "variance_weights", "wls_solve", "working_response",
    "__version__",
]
