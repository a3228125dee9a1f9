"""Ordinary least squares and the TSED model suite.

Plain OLS with or without intercept, per-coefficient t-tests, joint
F-tests for nested models, residual diagnostics, and the specific family
of polynomial models relating total strain energy density to macroscopic
strain and texture.  The t- and F-distribution functions are computed
through the regularized incomplete beta function.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

CONDITION_LIMIT = 1e12


class RankDeficient(ValueError):
    """Design matrix is numerically rank deficient."""


class NotNested(ValueError):
    """F-test models are not nested."""


def t_cdf(x, dof):
    """Student-t cumulative distribution via the incomplete beta function."""
    if dof < 1:
        raise ValueError("dof must be >= 1")
    x = float(x)
    ib = special.betainc(dof / 2.0, 0.5, dof / (dof + x * x))
    return 1.0 - 0.5 * ib if x >= 0 else 0.5 * ib


def f_cdf(x, d1, d2):
    """F cumulative distribution via the incomplete beta function."""
    if d1 < 1 or d2 < 1:
        raise ValueError("dof must be >= 1")
    x = float(x)
    if x <= 0:
        return 0.0
    return float(special.betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))


@dataclass(frozen=True)
class Term:
    """Named basis function of (epsilon_m, kappa)."""

    name: str
    func: object

    def __call__(self, eps, kappa):
        return self.func(eps, kappa)


@dataclass(frozen=True)
class DesignSpec:
    """Model design: named terms plus optional intercept."""

    terms: tuple
    intercept: bool = False

    def __post_init__(self):
        names = self.term_names()
        if len(names) != len(set(names)):
            raise ValueError("term names must be unique")
        if len(self.terms) == 0 and not self.intercept:
            raise ValueError("need at least one term")

    def term_names(self):
        names = ["intercept"] if self.intercept else []
        names += [t.name for t in self.terms]
        return names

    def matrix(self, eps, kappa):
        eps = np.asarray(eps, dtype=float)
        kappa = np.asarray(kappa, dtype=float)
        cols = []
        if self.intercept:
            cols.append(np.ones_like(eps))
        cols += [np.asarray(t(eps, kappa), dtype=float) for t in self.terms]
        return np.column_stack(cols)


@dataclass(frozen=True)
class FitResult:
    """OLS output: estimates with inference and residual data."""

    term_names: tuple
    estimates: np.ndarray
    std_errors: np.ndarray
    t_values: np.ndarray
    p_values: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    rss: float
    dof: int
    sigma2: float

    def coefficient(self, name):
        return float(self.estimates[self.term_names.index(name)])

    def table(self):
        """Rows (name, estimate, std_error, t_value, p_value)."""
        return [(n, float(b), float(s), float(t), float(p))
                for n, b, s, t, p in zip(self.term_names, self.estimates,
                                         self.std_errors, self.t_values,
                                         self.p_values)]


def ols_fit(x, y, term_names=None):
    """Least squares fit with classical normal-theory inference.

    Parameters
    ----------
    x : (n, k) design matrix, full column rank, n >= k + 1
    y : (n,) response
    term_names : sequence of str, optional

    Raises
    ------
    RankDeficient
        If cond(X^T X) exceeds 1e12.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, k = x.shape
    if n < k + 1:
        raise ValueError("need more rows than columns")
    xtx = x.T @ x
    if np.linalg.cond(xtx) > CONDITION_LIMIT:
        raise RankDeficient("design matrix condition number exceeds 1e12")
    beta, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    fitted = x @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    dof = n - k
    sigma2 = rss / dof
    cov = sigma2 * np.linalg.inv(xtx)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, 0.0)
    p = np.array([2.0 * (1.0 - t_cdf(abs(tv), dof)) for tv in t])
    if term_names is None:
        term_names = tuple(f"x{i}" for i in range(k))
    return FitResult(tuple(term_names), beta, se, t, p, resid, fitted,
                     rss, dof, sigma2)


def fit_design(spec, eps, kappa, y):
    """Fit a DesignSpec to (eps, kappa, y) data."""
    x = spec.matrix(eps, kappa)
    return ols_fit(x, y, spec.term_names())


def f_test_joint(full, reduced):
    """Joint F-test of the terms present in ``full`` but not ``reduced``.

    Returns (F, p).  Models must be nested by term names.
    """
    fset = set(full.term_names)
    rset = set(reduced.term_names)
    if not rset <= fset:
        raise NotNested("reduced model terms must be a subset of the full model")
    q = len(fset) - len(rset)
    if q == 0:
        return 0.0, 1.0
    f_stat = ((reduced.rss - full.rss) / q) / (full.rss / full.dof)
    f_stat = max(f_stat, 0.0)
    p = 1.0 - f_cdf(f_stat, q, full.dof)
    return float(f_stat), float(p)


def residual_diagnostics(fit):
    """Q-Q and residual-vs-fitted data for a fit.

    Returns
    -------
    (qq, rvf) : ((n, 2) ndarray, (n, 2) ndarray)
        qq pairs standard-normal quantiles at (i - 0.5)/n with sorted
        standardized residuals; rvf pairs fitted values with residuals in
        input order.
    """
    n = len(fit.residuals)
    scale = np.sqrt(fit.sigma2) if fit.sigma2 > 0 else 1.0
    std_resid = np.sort(fit.residuals / scale)
    quantiles = special.ndtri((np.arange(1, n + 1) - 0.5) / n)
    qq = np.column_stack([quantiles, std_resid])
    rvf = np.column_stack([fit.fitted, fit.residuals])
    return qq, rvf


# ---------------------------------------------------------------------------
# the TSED model suite
# ---------------------------------------------------------------------------

_EPS = Term("eps", lambda e, k: e)
_EPS2 = Term("eps^2", lambda e, k: e ** 2)
_EPS3 = Term("eps^3", lambda e, k: e ** 3)
_EPS_K = Term("eps*kappa", lambda e, k: e * k)
_EPS2_K = Term("eps^2*kappa", lambda e, k: e ** 2 * k)

MODEL_SPECS = {
    # total TSED on the strain/texture grid, no intercept
    "m1": DesignSpec((_EPS, _EPS2, _EPS_K, _EPS2_K)),
    # reduced model without the quadratic interaction
    "m1p": DesignSpec((_EPS, _EPS2, _EPS_K)),
    # lamellar phase, with intercept
    "m2": DesignSpec((_EPS, _EPS2, _EPS_K, _EPS2_K), intercept=True),
    # matrix phase, no intercept
    "m3": DesignSpec((_EPS, _EPS2, _EPS_K, _EPS2_K)),
}


@dataclass(frozen=True)
class TsedRecord:
    """One TSED observation of a pipeline variant."""

    epsilon_m: float
    kappa: float
    marking: str            # "im" | "ma"
    w_total: float
    w_lamella: float
    w_matrix: float


def fit_cubic_pair(records):
    """Marking-comparison cubic models with a shared cubic coefficient.

    Uses kappa = 0 rows of both markings; the design stacks
    indicator-split linear and quadratic strain terms with one common
    cubic column: coefficients (eps_im, eps^2_im, eps_ma, eps^2_ma,
    eps^3).
    """
    rows = [r for r in records if r.kappa == 0.0]
    im = [r for r in rows if r.marking == "im"]
    ma = [r for r in rows if r.marking == "ma"]
    if len(im) < 2 or len(ma) < 2:
        raise ValueError("need kappa = 0 data for both markings")
    eps = np.array([r.epsilon_m for r in im + ma])
    is_im = np.array([1.0] * len(im) + [0.0] * len(ma))
    y = np.array([r.w_total for r in im + ma])
    x = np.column_stack([
        eps * is_im, eps ** 2 * is_im,
        eps * (1 - is_im), eps ** 2 * (1 - is_im),
        eps ** 3,
    ])
    names = ("eps_im", "eps^2_im", "eps_ma", "eps^2_ma", "eps^3")
    return ols_fit(x, y, names)


def paper_model_suite(records):
    """Fit the whole TSED model family to pipeline records.

    Independent-marking rows feed the grid models (total, reduced,
    lamellar, matrix); the cubic marking-comparison pair uses kappa = 0
    rows of both markings.  Returns a dict of FitResults keyed
    "m1", "m1p", "m2", "m3", "cubic_pair".
    """
    im = [r for r in records if r.marking == "im"]
    if len({r.epsilon_m for r in im}) < 2 or len({r.kappa for r in im}) < 2:
        raise ValueError("need at least two strain and two texture levels")
    eps = np.array([r.epsilon_m for r in im])
    kap = np.array([r.kappa for r in im])
    out = {
        "m1": fit_design(MODEL_SPECS["m1"], eps, kap,
                         np.array([r.w_total for r in im])),
        "m1p": fit_design(MODEL_SPECS["m1p"], eps, kap,
                          np.array([r.w_total for r in im])),
        "m2": fit_design(MODEL_SPECS["m2"], eps, kap,
                         np.array([r.w_lamella for r in im])),
        "m3": fit_design(MODEL_SPECS["m3"], eps, kap,
                         np.array([r.w_matrix for r in im])),
    }
    try:
        out["cubic_pair"] = fit_cubic_pair(records)
    except ValueError:
        out["cubic_pair"] = None
    return out
