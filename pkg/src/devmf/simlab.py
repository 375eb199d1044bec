"""Seeded simulation experiments: family adequacy, test power, rank recovery.

Designs draw factor matrices from simple laws, form the linear predictor
(optionally around a constant center), push it through the inverse link, and
sample matrix entries independently from the chosen family. Every replicate
owns an RNG stream derived from (seed, replicate), so results are identical
no matter how replicates are scheduled across workers.

Replicate counts default to desk scale; pass larger values to approach
full-size runs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .canonicalize import canonicalize
from .engine import DataMatrix, ModelSpec, dmf_fit
from .families import Family, estimate_dispersion_mom, get_family, get_link
from .gof import ghl_test
from .rank import rank_report

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Factor laws and designs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalLaw:
    mean: float = 0.0
    sd: float = 1.0

    def draw(self, rng, rows, cols):
        return rng.normal(self.mean, self.sd, size=(rows, cols))


@dataclass(frozen=True)
class UniformLaw:
    half_width: float = 1.0

    def draw(self, rng, rows, cols):
        return rng.uniform(-self.half_width, self.half_width, size=(rows, cols))


@dataclass(frozen=True)
class IdentityBlockLaw:
    """Deterministic [I | 0]-style factor: identity block padded with zeros."""

    def draw(self, rng, rows, cols):
        out = np.zeros((rows, cols))
        k = min(rows, cols)
        out[:k, :k] = np.eye(k)
        return out


@dataclass(frozen=True)
class SimDesign:
    """One data-generating configuration."""

    name: str
    family: str
    link: str
    n: int
    p: int
    rank: int
    score_law: object
    loading_law: object
    center: float = 0.0
    phi: float = 1.0
    trials: float = 1.0
    seed: int = 0

    def make_family(self) -> Family:
        return get_family(self.family, phi=self.phi, trials=self.trials)

    def make_link(self):
        return get_link(self.link, phi=self.phi)


def sample_family(family: Family, rng, mu):
    """Draw one matrix of independent entries with the family's mean/variance."""
    mu = np.asarray(mu, dtype=float)
    name = family.name
    if name == "gaussian":
        return rng.normal(mu, 1.0)
    if name == "poisson":
        return rng.poisson(mu).astype(float)
    if name == "gamma":
        # shape 1/phi, scale phi*mu: mean mu, variance phi*mu^2
        return rng.gamma(1.0 / family.phi, family.phi * mu)
    if name == "bernoulli":
        trials = int(round(family.trials))
        return rng.binomial(trials, mu) / float(trials)
    if name == "negbin":
        # gamma-poisson mixture: variance mu + mu^2/phi
        lam = rng.gamma(family.phi, mu / family.phi)
        return rng.poisson(lam).astype(float)
    raise ValueError(f"no sampler for family {name!r}")


def simulate_dmf(design: SimDesign, replicate: int):
    """Draw (data, scores, loadings) for one replicate; deterministic in
    (design.seed, replicate)."""
    rng = np.random.default_rng([design.seed, replicate])
    family = design.make_family()
    link = design.make_link()
    center = design.center
    for attempt in range(5):
        scores = design.score_law.draw(rng, design.n, design.rank)
        loadings = design.loading_law.draw(rng, design.p, design.rank)
        eta = center + scores @ loadings.T
        mu = link.m(eta)
        try:
            family.check_mean(mu)
        except Exception:
            shift = float(np.abs(mu).max()) * 0.1 + 0.1
            logger.warning("design %s replicate %d produced out-of-domain means; "
                           "shifting center by %.3g", design.name, replicate, shift)
            center += shift
            continue
        x = sample_family(family, rng, mu)
        return DataMatrix(x), scores, loadings
    raise RuntimeError(f"design {design.name} kept producing invalid means")


# --------------------------------------------------------------------------
# Result container
# --------------------------------------------------------------------------


@dataclass
class ResultTable:
    """Long-format experiment results: one (design, replicate, metric) per row."""

    records: list  # (design_id, replicate, metric, value)

    def values(self, design_id: str = None, metric: str = None):
        return np.array([v for d, r, m, v in self.records
                         if (design_id is None or d == design_id)
                         and (metric is None or m == metric)])

    def to_delimited(self, sep: str = "\t") -> str:
        lines = [sep.join(("design", "replicate", "metric", "value"))]
        for d, r, m, v in self.records:
            lines.append(sep.join((d, str(r), m, repr(float(v)))))
        return "\n".join(lines) + "\n"


def _map_replicates(fn, args_list, workers: int = 1):
    if workers <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args_list, chunksize=1))


# --------------------------------------------------------------------------
# Family significance study
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SignificanceCase:
    """Generator design plus the misspecified family/link it is tested against."""

    design: SimDesign
    alt_family: str
    alt_link: str
    alt_trials: float = 1.0


def table2_cases(n: int = 1000, p: int = 20, rank: int = 5, seed: int = 20260810):
    """The three family-significance cases (generator vs comparison fit)."""
    sd = np.sqrt(0.5 / rank)
    score_law = NormalLaw(1.0, sd)
    loading_law = NormalLaw(0.0, sd)

    def design(name, family, link, center, phi=1.0, trials=1.0):
        return SimDesign(name=name, family=family, link=link, n=n, p=p, rank=rank,
                         score_law=score_law, loading_law=loading_law,
                         center=center, phi=phi, trials=trials, seed=seed)

    return [
        SignificanceCase(design("case1-gamma-log", "gamma", "log", 0.5, phi=1.0),
                         "gaussian", "identity"),
        SignificanceCase(design("case2-negbin-log", "negbin", "log", 0.5, phi=5.0),
                         "poisson", "log"),
        SignificanceCase(design("case3-binomial-cloglog", "binomial", "cloglog", 0.0,
                                trials=90.0),
                         "binomial", "logit", alt_trials=90.0),
    ]


def _fit_and_test(data: DataMatrix, family: Family, link, rank: int,
                  n_groups: int | None = None, max_iter: int = 200):
    spec = ModelSpec(family=family, link=link, rank=rank, max_iter=max_iter)
    fit = canonicalize(dmf_fit(data, spec))
    report = ghl_test(data, fit, family, link, n_groups=n_groups)
    pearson_mean = float(report.pearson[data.w > 0].mean())
    return {
        "p_value": report.p_value,
        "statistic": report.statistic,
        "df": float(report.df),
        "resid_var": float(np.var(report.group_stats)),
        "pearson_mean": pearson_mean,
        "converged": float(fit.raw.converged),
    }


def _adapted_for_family(data: DataMatrix, family: Family) -> DataMatrix:
    """Rescale/clip the observations into the fitted family's data domain.

    Needed when testing a family against data it could not have generated,
    e.g. a binomial fit of unbounded counts (treated as successes out of the
    trial count) or a positive family fit of data containing zeros.
    """
    x = data.x
    if family.mean_domain == "unit" and x.max() > 1.0:
        x = np.clip(x / family.trials, 0.0, 1.0)
        return DataMatrix(x, data.w)
    return data


def run_significance(cases=None, replicates: int = 20, n_groups: int | None = None,
                     workers: int = 1) -> ResultTable:
    """Fit each case with its generating and comparison family; record the tests."""
    if cases is None:
        cases = table2_cases()
    args = [(case, r) for case in cases for r in range(replicates)]
    rows = _map_replicates(_significance_task, args, workers)
    return ResultTable([rec for chunk in rows for rec in chunk])


def _significance_task(args):
    case, r = args
    design = case.design
    data, _, _ = simulate_dmf(design, r)
    records = []
    null_fam = design.make_family()
    null_res = _fit_and_test(data, null_fam, design.make_link(), design.rank,
                             n_groups=None)
    for k, v in null_res.items():
        records.append((design.name, r, f"null.{k}", v))
    alt_fam = get_family(case.alt_family, trials=case.alt_trials)
    alt_data = _adapted_for_family(data, alt_fam)
    alt_res = _fit_and_test(alt_data, alt_fam, get_link(case.alt_link), design.rank,
                            n_groups=None)
    for k, v in alt_res.items():
        records.append((design.name, r, f"alt.{k}", v))
    return records


# --------------------------------------------------------------------------
# Dispersion sensitivity
# --------------------------------------------------------------------------


def run_dispersion_sensitivity(design: SimDesign | None = None, replicates: int = 50,
                               workers: int = 1) -> ResultTable:
    """Adequacy p-values with the true dispersion, a moment estimate, and a
    unit-dispersion fit, replicate by replicate."""
    if design is None:
        design = table2_cases()[1].design  # negative binomial generator
    args = [(design, r) for r in range(replicates)]
    rows = _map_replicates(_dispersion_task, args, workers)
    return ResultTable([rec for chunk in rows for rec in chunk])


def _dispersion_task(args):
    design, r = args
    data, _, _ = simulate_dmf(design, r)
    records = []
    link = design.make_link()

    true_fam = design.make_family()
    res = _fit_and_test(data, true_fam, link, design.rank)
    records.append((design.name, r, "true_phi.p_value", res["p_value"]))

    phi_hat = estimate_dispersion_mom(data.x, data.w)
    mom_fam = get_family(design.family, phi=phi_hat, trials=design.trials)
    res = _fit_and_test(data, mom_fam, link, design.rank)
    records.append((design.name, r, "mom_phi.p_value", res["p_value"]))
    records.append((design.name, r, "mom_phi.estimate", phi_hat))

    res = _fit_and_test(data, get_family("poisson"), get_link("log"), design.rank)
    records.append((design.name, r, "poisson.p_value", res["p_value"]))
    return records


# --------------------------------------------------------------------------
# Power study
# --------------------------------------------------------------------------

POWER_GENERATORS = ("poisson", "binomial", "gamma", "negbin")


def power_design(family: str, n: int, p: int, sigma: float, rank: int = 5,
                 seed: int = 20260810) -> SimDesign:
    """Zero-centered design with factor entries N(0, sigma^2)."""
    link = {"poisson": "log", "gamma": "log", "negbin": "log",
            "binomial": "logit", "gaussian": "identity"}[family]
    phi = {"gamma": 1.0, "negbin": 5.0}.get(family, 1.0)
    trials = 90.0 if family == "binomial" else 1.0
    return SimDesign(name=f"power-{family}-n{n}-p{p}-s{sigma}", family=family,
                     link=link, n=n, p=p, rank=rank, score_law=NormalLaw(0.0, sigma),
                     loading_law=NormalLaw(0.0, sigma), center=0.0, phi=phi,
                     trials=trials, seed=seed)


def _power_fit_model(fit_family: str, data: DataMatrix, design: SimDesign):
    """Family/link pair used when testing ``fit_family`` against foreign data."""
    if fit_family == "gaussian":
        fam = get_family("gaussian")
        return fam, get_link("identity"), data
    if fit_family == "poisson":
        fam = get_family("poisson")
        return fam, get_link("log"), data
    if fit_family == "gamma":
        fam = get_family("gamma", phi=1.0)
        return fam, get_link("log"), data
    if fit_family == "binomial":
        fam = get_family("binomial", trials=90.0)
        return fam, get_link("logit"), _adapted_for_family(data, fam)
    if fit_family == "negbin":
        phi_hat = (design.phi if design.family == "negbin"
                   else estimate_dispersion_mom(data.x, data.w))
        fam = get_family("negbin", phi=phi_hat)
        return fam, get_link("log"), data
    raise ValueError(f"unknown fit family {fit_family!r}")


def _power_task(args):
    design, fit_families, r = args
    data, _, _ = simulate_dmf(design, r)
    n_groups = max(3, (design.n * design.p) // 50)
    records = []
    for fit_family in fit_families:
        fam, link, fit_data = _power_fit_model(fit_family, data, design)
        try:
            res = _fit_and_test(fit_data, fam, link, design.rank, n_groups=n_groups)
            p_val = res["p_value"]
        except Exception as exc:  # fit divergence recorded, not fatal
            logger.warning("power cell %s/%s replicate %d failed: %s",
                           design.name, fit_family, r, exc)
            p_val = np.nan
        records.append((design.name, r, f"fit-{fit_family}.p_value", p_val))
    return records


def run_power_cells(designs, fit_families, replicates: int = 10,
                    workers: int = 1) -> ResultTable:
    """Adequacy p-values for chosen (generator design, fitted family) cells."""
    args = [(d, tuple(fit_families), r) for d in designs for r in range(replicates)]
    rows = _map_replicates(_power_task, args, workers)
    return ResultTable([rec for chunk in rows for rec in chunk])


def run_power_grid(generators=POWER_GENERATORS, n_values=(200, 600),
                   p_fractions=(0.2, 0.3, 0.4, 0.5, 0.6, 0.7),
                   sigmas=(0.1, 0.2, 0.3, 0.4), replicates: int = 10,
                   rank: int = 5, workers: int = 1, seed: int = 20260810) -> ResultTable:
    """Full grid of generator x fitted-family p-values across sizes and scales."""
    designs = [power_design(g, n, int(round(f * n)), s, rank=rank, seed=seed)
               for g in generators for n in n_values for f in p_fractions
               for s in sigmas]
    return run_power_cells(designs, generators, replicates=replicates, workers=workers)


def power_table(results: ResultTable, alpha: float = 0.05) -> list:
    """Rejection rates per (design, fitted family): share of p-values <= alpha."""
    cells = {}
    for d, r, m, v in results.records:
        if not m.endswith(".p_value"):
            continue
        fit = m.removesuffix(".p_value").removeprefix("fit-")
        cells.setdefault((d, fit), []).append(v)
    out = []
    for (d, fit), ps in sorted(cells.items()):
        ps = np.asarray(ps, dtype=float)
        ok = np.isfinite(ps)
        rate = float(np.mean(ps[ok] <= alpha)) if ok.any() else np.nan
        out.append((d, fit, rate, int(ok.sum())))
    return out


# --------------------------------------------------------------------------
# Rank recovery study
# --------------------------------------------------------------------------


def table3_cases(n: int = 500, p: int = 50, family: str = "gaussian",
                 link: str = "identity", center: float = 5.0, seed: int = 20260810):
    """Six rank-recovery designs: strong/weak signal, random/deterministic factors."""
    ident = IdentityBlockLaw()

    def design(name, rank, score_law, loading_law):
        return SimDesign(name=name, family=family, link=link, n=n, p=p, rank=rank,
                         score_law=score_law, loading_law=loading_law, center=center,
                         seed=seed)

    return [
        design("case1-q6-normal", 6, NormalLaw(0, 1), NormalLaw(0, 1)),
        design("case2-q6-uniform-ident", 6, UniformLaw(n / 50.0), ident),
        design("case3-q15-normal", 15, NormalLaw(0, 1), NormalLaw(0, 1)),
        design("case4-q15-uniform-ident", 15, UniformLaw(n / 50.0), ident),
        design("case5-q6-weak", 6, NormalLaw(0, 0.1), NormalLaw(0, 0.1)),
        design("case6-q6-weak-ident", 6, UniformLaw(0.1), ident),
    ]


def _rank_task(args):
    design, r, q_max, mode = args
    data, _, _ = simulate_dmf(design, r)
    family, link = design.make_family(), design.make_link()
    spec = ModelSpec(family=family, link=link, rank=data.p)  # full-rank fit
    try:
        fit = canonicalize(dmf_fit(data, spec))
        report = rank_report(fit, q_max=q_max, mode=mode)
        q_hat, delta = float(report.q_hat), report.delta
    except Exception as exc:
        logger.warning("rank case %s replicate %d failed: %s", design.name, r, exc)
        q_hat, delta = np.nan, np.nan
    return [(design.name, r, "q_hat", q_hat),
            (design.name, r, "q_true", float(design.rank)),
            (design.name, r, "delta", delta)]


def run_rank_cases(cases=None, replicates: int = 100, q_max: int | None = None,
                   mode: str = "covariance", workers: int = 1) -> ResultTable:
    """Full-rank fit plus eigengap rank estimate for every case and replicate."""
    if cases is None:
        cases = table3_cases()
    args = [(d, r, q_max, mode) for d in cases for r in range(replicates)]
    rows = _map_replicates(_rank_task, args, workers)
    return ResultTable([rec for chunk in rows for rec in chunk])


def recovery_rates(results: ResultTable) -> dict:
    """Fraction of replicates recovering the true rank, per design."""
    by_design: dict[str, list] = {}
    truth: dict[str, float] = {}
    for d, r, m, v in results.records:
        if m == "q_hat":
            by_design.setdefault(d, []).append(v)
        elif m == "q_true":
            truth[d] = v
    return {d: float(np.mean(np.asarray(vals) == truth[d]))
            for d, vals in by_design.items()}
