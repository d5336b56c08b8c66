"""Livability regression: OLS with textbook inference, VIF, quadratic vertex.

Fits livability on temperature (with a quadratic term), terrain, fiscal
expenditure, collective income and villager income, reporting coefficients
with classical t-tests, model fit statistics and significance stars, plus
variance-inflation-factor collinearity diagnostics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .corpus import SurveyRow

logger = logging.getLogger(__name__)

REGRESSORS = ("tem2", "tem", "ter", "fin", "cinc", "vinc")
INTERCEPT_NAME = "const"

# survey field backing each regressor (tem2 is derived from tem)
_SOURCE_FIELD = {
    "tem2": "tem",
    "tem": "tem",
    "ter": "ter",
    "fin": "fin",
    "cinc": "cinc",
    "vinc": "vinc",
}


class RegressionError(ValueError):
    """Raised for unusable designs: rank deficiency, no rows, bad specs."""


@dataclass(frozen=True)
class ModelSpec:
    """Which regressors enter the model; a quadratic term requires its base."""

    include: tuple[str, ...]
    intercept: bool = True

    def __post_init__(self) -> None:
        if not self.include:
            raise RegressionError("model must include at least one regressor")
        unknown = [t for t in self.include if t not in REGRESSORS]
        if unknown:
            raise RegressionError(f"unknown regressors {unknown}; choose from {REGRESSORS}")
        if len(set(self.include)) != len(self.include):
            raise RegressionError("duplicate regressors in model spec")
        if "tem2" in self.include and "tem" not in self.include:
            raise RegressionError("tem2 requires tem (hierarchical quadratic)")

    @classmethod
    def parse(cls, terms: str, intercept: bool = True) -> "ModelSpec":
        include = tuple(t.strip().lower() for t in terms.split(",") if t.strip())
        return cls(include=include, intercept=intercept)


@dataclass(frozen=True)
class DesignMatrices:
    """A ready-to-fit design: X (with intercept column first when requested)."""

    X: np.ndarray
    y: np.ndarray
    names: tuple[str, ...]
    n_used: int
    n_dropped: int


def stars_for(p_value: float) -> str:
    """Significance stars: *** p<0.01, ** p<0.05, * p<0.1."""
    if p_value < 0.01:
        return "***"
    if p_value < 0.05:
        return "**"
    if p_value < 0.1:
        return "*"
    return ""


def build_design(rows: Sequence[SurveyRow], spec: ModelSpec) -> DesignMatrices:
    """Assemble the design matrix and response from survey rows.

    Rows missing any needed regressor or the livability response are
    dropped (listwise deletion) and the drop count is reported.
    """
    needed_fields = sorted({_SOURCE_FIELD[t] for t in spec.include})
    kept: list[SurveyRow] = []
    dropped = 0
    for row in rows:
        values = [getattr(row, f) for f in needed_fields] + [row.livability]
        if any(v is None for v in values):
            dropped += 1
            continue
        kept.append(row)
    if not kept:
        raise RegressionError("no usable rows after dropping incomplete ones")
    if dropped:
        logger.info("dropped %d incomplete rows, %d remain", dropped, len(kept))

    def column(term: str) -> list[float]:
        if term == "tem2":
            return [row.tem**2 for row in kept]
        return [getattr(row, _SOURCE_FIELD[term]) for row in kept]

    names: list[str] = []
    columns: list[list[float]] = []
    if spec.intercept:
        names.append(INTERCEPT_NAME)
        columns.append([1.0] * len(kept))
    for term in spec.include:
        names.append(term)
        columns.append(column(term))

    X = np.column_stack(columns)
    y = np.array([row.livability for row in kept], dtype=float)

    for name, col in zip(names, X.T):
        if name != INTERCEPT_NAME and np.ptp(col) == 0.0:
            raise RegressionError(f"regressor {name!r} is constant across rows")

    return DesignMatrices(
        X=X, y=y, names=tuple(names), n_used=len(kept), n_dropped=dropped
    )


@dataclass(frozen=True)
class TermStat:
    name: str
    coef: float
    std_error: float
    t_stat: float
    p_value: float
    stars: str


@dataclass(frozen=True)
class FitReport:
    """OLS fit summary shaped like a regression-table column."""

    terms: tuple[TermStat, ...]
    r2: float
    adj_r2: float
    residual_se: float
    df_resid: int
    f_stat: float | None
    f_pvalue: float | None
    df_model: int
    n_obs: int
    n_dropped: int = 0

    def term(self, name: str) -> TermStat:
        for term in self.terms:
            if term.name == name:
                return term
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "terms": [
                {
                    "name": t.name,
                    "coef": t.coef,
                    "std_error": t.std_error,
                    "t_stat": t.t_stat,
                    "p_value": t.p_value,
                    "stars": t.stars,
                }
                for t in self.terms
            ],
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "residual_se": self.residual_se,
            "df_resid": self.df_resid,
            "f_stat": self.f_stat,
            "f_pvalue": self.f_pvalue,
            "df_model": self.df_model,
            "n_obs": self.n_obs,
            "n_dropped": self.n_dropped,
        }


def fit_ols(
    X: np.ndarray,
    y: np.ndarray,
    names: Sequence[str] | None = None,
    *,
    n_dropped: int = 0,
) -> FitReport:
    """Ordinary least squares via QR, with classical inference statistics.

    An intercept is detected as a column named ``const`` (or an all-ones
    column when names are omitted); it is excluded from the F test's
    restriction set and R-squared is centered only when it is present.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, k = X.shape
    if names is None:
        names = [
            INTERCEPT_NAME if np.ptp(X[:, j]) == 0.0 and X[0, j] == 1.0 else f"x{j}"
            for j in range(k)
        ]
    names = list(names)
    if len(names) != k:
        raise RegressionError(f"got {len(names)} names for {k} columns")
    if y.shape[0] != n:
        raise RegressionError("X and y have different numbers of rows")
    if n <= k:
        raise RegressionError(f"need more observations ({n}) than columns ({k})")

    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    deficient = [names[j] for j in range(k) if diag[j] <= tol]
    if deficient:
        raise RegressionError(f"design is rank deficient in columns {deficient}")

    coefs = np.linalg.solve(R, Q.T @ y)
    residuals = y - X @ coefs
    rss = float(residuals @ residuals)
    df_resid = n - k
    sigma2 = rss / df_resid
    residual_se = math.sqrt(sigma2)

    R_inv = np.linalg.solve(R, np.eye(k))
    xtx_inv = R_inv @ R_inv.T
    std_errors = np.sqrt(np.clip(sigma2 * np.diag(xtx_inv), 0.0, None))

    has_intercept = INTERCEPT_NAME in names
    if has_intercept:
        tss = float(np.sum((y - y.mean()) ** 2))
    else:
        tss = float(y @ y)
    if tss > 0.0:
        r2 = 1.0 - rss / tss
    else:
        r2 = 1.0 if rss <= 1e-12 else 0.0
    denom = n - k
    scale = (n - 1) if has_intercept else n
    adj_r2 = 1.0 - (1.0 - r2) * scale / denom

    terms = []
    for j, name in enumerate(names):
        se = float(std_errors[j])
        if se > 0.0:
            t_stat = float(coefs[j]) / se
            p_value = 2.0 * float(stats.t.sf(abs(t_stat), df_resid))
        else:
            t_stat = math.inf if coefs[j] != 0 else 0.0
            p_value = 0.0 if coefs[j] != 0 else 1.0
        terms.append(
            TermStat(
                name=name,
                coef=float(coefs[j]),
                std_error=se,
                t_stat=t_stat,
                p_value=p_value,
                stars=stars_for(p_value),
            )
        )

    df_model = k - 1 if has_intercept else k
    f_stat = f_pvalue = None
    if df_model > 0 and tss > 0.0:
        explained = tss - rss
        if sigma2 > 0.0:
            f_stat = (explained / df_model) / sigma2
            f_pvalue = float(stats.f.sf(f_stat, df_model, df_resid))
        else:
            f_stat = math.inf
            f_pvalue = 0.0

    return FitReport(
        terms=tuple(terms),
        r2=r2,
        adj_r2=adj_r2,
        residual_se=residual_se,
        df_resid=df_resid,
        f_stat=f_stat,
        f_pvalue=f_pvalue,
        df_model=df_model,
        n_obs=n,
        n_dropped=n_dropped,
    )


def fit_model(rows: Sequence[SurveyRow], spec: ModelSpec) -> FitReport:
    """Build the design from survey rows and fit it in one step."""
    design = build_design(rows, spec)
    return fit_ols(design.X, design.y, design.names, n_dropped=design.n_dropped)


# ---------------------------------------------------------------------------
# Collinearity diagnostics


@dataclass(frozen=True)
class VifEntry:
    name: str
    vif: float

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.vif)


def vif(X: np.ndarray, names: Sequence[str] | None = None) -> list[VifEntry]:
    """Variance inflation factor 1/(1-R2_j) for each non-intercept column.

    Each regressor is regressed on all the others (plus an intercept);
    perfectly collinear columns report an infinite VIF rather than crashing.
    """
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if names is None:
        names = [f"x{j}" for j in range(k)]
    names = list(names)

    keep = [j for j in range(k) if names[j] != INTERCEPT_NAME]
    if len(keep) < 2:
        raise RegressionError("VIF needs at least 2 non-intercept regressors")

    entries = []
    ones = np.ones((n, 1))
    for j in keep:
        others = [c for c in keep if c != j]
        Xo = np.hstack([ones, X[:, others]])
        target = X[:, j]
        coef, _, _, _ = np.linalg.lstsq(Xo, target, rcond=None)
        fitted = Xo @ coef
        resid = target - fitted
        tss = float(np.sum((target - target.mean()) ** 2))
        if tss <= 0.0:
            raise RegressionError(f"regressor {names[j]!r} is constant")
        r2_j = 1.0 - float(resid @ resid) / tss
        if r2_j >= 1.0 - 1e-12:
            value = math.inf
        else:
            value = 1.0 / (1.0 - r2_j)
        entries.append(VifEntry(name=names[j], vif=value))
    return entries


# ---------------------------------------------------------------------------
# Quadratic vertex


@dataclass(frozen=True)
class VertexResult:
    vertex: float
    inverted_u: bool

    @property
    def shape(self) -> str:
        return "inverted U" if self.inverted_u else "upright U"


def quad_vertex(b_quad: float, b_lin: float) -> VertexResult:
    """Turning point -b_lin / (2 b_quad) of a fitted quadratic effect."""
    if b_quad == 0.0:
        raise RegressionError("quadratic coefficient must be non-zero")
    return VertexResult(vertex=-b_lin / (2.0 * b_quad), inverted_u=b_quad < 0.0)


# ---------------------------------------------------------------------------
# Report formatting


STANDARD_MODELS: tuple[ModelSpec, ...] = (
    ModelSpec(include=("tem2", "tem", "ter")),
    ModelSpec(include=("tem2", "tem", "ter", "fin")),
    ModelSpec(include=("tem2", "tem", "ter", "cinc")),
    ModelSpec(include=("tem2", "tem", "ter", "vinc")),
    ModelSpec(include=("tem2", "tem", "ter", "fin", "cinc", "vinc")),
)

_ROW_LABELS = {
    "tem2": "Tem2",
    "tem": "Tem",
    "ter": "Ter",
    "fin": "Fin",
    "cinc": "CInc",
    "vinc": "VInc",
    INTERCEPT_NAME: "Constant",
}


def format_report(reports: Sequence[FitReport], labels: Sequence[str] | None = None) -> str:
    """Render fitted models side by side: terms as rows, models as columns."""
    if not reports:
        raise RegressionError("nothing to report")
    if labels is None:
        labels = [f"({i})" for i in range(1, len(reports) + 1)]

    term_order = [t for t in REGRESSORS if any(_has_term(r, t) for r in reports)]
    if any(_has_term(r, INTERCEPT_NAME) for r in reports):
        term_order.append(INTERCEPT_NAME)

    width = 16
    label_width = max(22, max(len(_ROW_LABELS.get(t, t)) for t in term_order) + 2)

    def cell(text: str) -> str:
        return text.rjust(width)

    lines = ["".ljust(label_width) + "".join(cell(label) for label in labels)]
    for term in term_order:
        row = _ROW_LABELS.get(term, term).ljust(label_width)
        for report in reports:
            if _has_term(report, term):
                stat = report.term(term)
                row += cell(f"{stat.coef:.3f}{stat.stars}")
            else:
                row += cell("")
        lines.append(row)

    def stat_row(label: str, fmt) -> str:
        return label.ljust(label_width) + "".join(cell(fmt(r)) for r in reports)

    lines.append(stat_row("Observations", lambda r: str(r.n_obs)))
    lines.append(stat_row("R2", lambda r: f"{r.r2:.3f}"))
    lines.append(stat_row("Adjusted R2", lambda r: f"{r.adj_r2:.3f}"))
    lines.append(
        stat_row("Residual Std. Error", lambda r: f"{r.residual_se:.3f} (df={r.df_resid})")
    )
    lines.append(
        stat_row(
            "F Statistic",
            lambda r: (
                f"{r.f_stat:.3f}{stars_for(r.f_pvalue)} (df={r.df_model};{r.df_resid})"
                if r.f_stat is not None
                else ""
            ),
        )
    )
    lines.append("Note: *p<0.1; **p<0.05; ***p<0.01")
    return "\n".join(lines)


def _has_term(report: FitReport, name: str) -> bool:
    return any(t.name == name for t in report.terms)
