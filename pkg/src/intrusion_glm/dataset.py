"""Organization records, CSV ingestion, design-matrix encoding and synthesis.

One :class:`OrgRecord` is one monitored organization: eight DNS visit counts
split by TLD and domestic/foreign resolution, the policy-violation count,
host count, scholar-record count (``rosg``), the SEIB category and the
observed number of intrusions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import norm

from intrusion_glm.errors import DomainError, GenerationError, RowParseError, SchemaError

DNS_COLUMNS = (
    "domestic_com",
    "domestic_edu",
    "domestic_gov",
    "domestic_net",
    "domestic_org",
    "foreign_com",
    "foreign_net",
    "foreign_org",
)

CSV_COLUMNS = ("org_id", *DNS_COLUMNS, "violations", "hosts", "rosg", "seib", "intrusions")

SEIB_LEVELS = (1, 3, 10)

# Canonical coefficient order for the full model.
FULL_PREDICTORS = (*DNS_COLUMNS, "hosts", "violations", "seib3", "seib10", "rosg")

CASE_EXCLUSIONS: dict[str, frozenset[str]] = {
    "full": frozenset(),
    "case1": frozenset({"violations"}),
    "case2": frozenset({"seib3", "seib10"}),
    "case3": frozenset({"hosts"}),
    "case4": frozenset({"rosg"}),
    "case5": frozenset({"hosts", "rosg", "seib3", "seib10"}),
}

CASE_DESCRIPTIONS = {
    "full": "all predictors",
    "case1": "no violations",
    "case2": "no SEIB",
    "case3": "no hosts",
    "case4": "no ROSG",
    "case5": "no cyber footprint",
}


@dataclass(frozen=True)
class OrgRecord:
    org_id: str
    domestic_com: int
    domestic_edu: int
    domestic_gov: int
    domestic_net: int
    domestic_org: int
    foreign_com: int
    foreign_net: int
    foreign_org: int
    violations: int
    hosts: int
    rosg: int
    seib: int
    intrusions: int

    def __post_init__(self):
        for name in CSV_COLUMNS[1:]:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise DomainError(f"{name} must be an integer, got {value!r}")
            if value < 0:
                raise DomainError(f"{name} must be nonnegative, got {value}")
        if self.hosts < 1:
            raise DomainError(f"hosts must be >= 1, got {self.hosts}")
        if self.rosg < 1:
            raise DomainError(f"rosg must be >= 1, got {self.rosg}")
        if self.seib not in SEIB_LEVELS:
            raise DomainError(f"seib must be one of {SEIB_LEVELS}, got {self.seib}")

    def as_row(self) -> list:
        return [getattr(self, name) for name in CSV_COLUMNS]


@dataclass(frozen=True)
class PredictorSchema:
    """Ordered predictor columns for one model variant.

    ``seib_numeric`` enters SEIB as a single numeric column instead of the
    two dummies; it is only meant for the linear baselines.
    """

    included_columns: tuple[str, ...]
    case_label: str = "full"
    seib_numeric: bool = False

    def __post_init__(self):
        if self.case_label not in CASE_EXCLUSIONS:
            raise SchemaError(f"unknown case label {self.case_label!r}")
        known = set(FULL_PREDICTORS) | {"seib"}
        for name in self.included_columns:
            if name not in known:
                raise SchemaError(f"unknown predictor column {name!r}")

    @classmethod
    def for_case(cls, case_label: str = "full", seib_numeric: bool = False) -> "PredictorSchema":
        if case_label not in CASE_EXCLUSIONS:
            raise SchemaError(f"unknown case label {case_label!r}")
        excluded = CASE_EXCLUSIONS[case_label]
        cols = [c for c in FULL_PREDICTORS if c not in excluded]
        if seib_numeric:
            if "seib3" in cols:
                at = cols.index("seib3")
                cols = [c for c in cols if c not in ("seib3", "seib10")]
                cols.insert(at, "seib")
        return cls(tuple(cols), case_label, seib_numeric)


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray
    column_names: tuple[str, ...]
    row_ids: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise SchemaError(f"design matrix must be 2-D, got shape {values.shape}")
        names = tuple(self.column_names)
        if len(names) != values.shape[1]:
            raise SchemaError(
                f"{len(names)} column names for a matrix with {values.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")
        row_ids = tuple(self.row_ids) or tuple(str(i) for i in range(values.shape[0]))
        if len(row_ids) != values.shape[0]:
            raise SchemaError(f"{len(row_ids)} row ids for {values.shape[0]} rows")
        if "intercept" in names and not np.all(values[:, names.index("intercept")] == 1.0):
            raise SchemaError("intercept column must be all ones")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "row_ids", row_ids)

    @classmethod
    def from_arrays(cls, values, column_names=None, row_ids=(), add_intercept=False):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if column_names is None:
            column_names = [f"x{j}" for j in range(values.shape[1])]
        column_names = list(column_names)
        if add_intercept:
            values = np.column_stack([np.ones(values.shape[0]), values])
            column_names = ["intercept", *column_names]
        return cls(values, tuple(column_names), tuple(row_ids))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def has_intercept(self) -> bool:
        return bool(self.column_names) and self.column_names[0] == "intercept"

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.column_names.index(name)]
        except ValueError:
            raise SchemaError(f"no column named {name!r}") from None

    def select(self, names: Sequence[str]) -> "DesignMatrix":
        missing = [n for n in names if n not in self.column_names]
        if missing:
            raise SchemaError(f"columns not present: {', '.join(missing)}")
        idx = [self.column_names.index(n) for n in names]
        return DesignMatrix(self.values[:, idx], tuple(names), self.row_ids)

    def drop(self, names) -> "DesignMatrix":
        names = set(names)
        return self.select([n for n in self.column_names if n not in names])

    def take(self, rows) -> "DesignMatrix":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return DesignMatrix(
            self.values[rows], self.column_names, tuple(self.row_ids[i] for i in rows)
        )


def as_design(X) -> DesignMatrix:
    """Wrap a bare array as a design matrix with generated column names."""
    if isinstance(X, DesignMatrix):
        return X
    return DesignMatrix.from_arrays(X)


def _parse_count(text: str, name: str, line: int) -> int:
    text = text.strip()
    try:
        value = int(text)
    except ValueError:
        raise RowParseError(line, f"{name}={text!r} is not an integer") from None
    if value < 0:
        raise RowParseError(line, f"{name}={value} is negative")
    return value


def load_csv(path: str | PathLike) -> list[OrgRecord]:
    """Read organization records from a CSV file in the canonical layout."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected a header row") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"missing column {missing[0]!r}" + (
                f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
        extra = [c for c in header if c not in CSV_COLUMNS]
        if extra:
            raise SchemaError(f"unexpected column {extra[0]!r}")
        if tuple(header) != CSV_COLUMNS:
            raise SchemaError(
                "columns out of order; expected " + ",".join(CSV_COLUMNS)
            )

        records = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(CSV_COLUMNS):
                raise RowParseError(
                    line, f"expected {len(CSV_COLUMNS)} fields, found {len(row)}"
                )
            values = {"org_id": row[0].strip()}
            for name, text in zip(CSV_COLUMNS[1:], row[1:]):
                values[name] = _parse_count(text, name, line)
            if values["seib"] not in SEIB_LEVELS:
                raise DomainError(
                    f"line {line}: seib={values['seib']} not in {SEIB_LEVELS}"
                )
            try:
                records.append(OrgRecord(**values))
            except DomainError as exc:
                raise DomainError(f"line {line}: {exc}") from None
    return records


def write_csv(records: Sequence[OrgRecord], path: str | PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.as_row())


def encode(
    records: Sequence[OrgRecord], schema: PredictorSchema | None = None
) -> tuple[DesignMatrix, np.ndarray]:
    """Build the design matrix and response vector for ``records``.

    The intercept comes first. SEIB level 1 is the reference category;
    levels 3 and 10 get the dummies ``seib3`` and ``seib10``.
    """
    if not records:
        raise SchemaError("cannot encode an empty record set")
    schema = schema or PredictorSchema.for_case("full")

    m = len(records)
    columns = {name: np.array([getattr(r, name) for r in records], dtype=float)
               for name in (*DNS_COLUMNS, "violations", "hosts", "rosg", "seib")}
    seib = columns["seib"]
    columns["seib3"] = (seib == 3).astype(float)
    columns["seib10"] = (seib == 10).astype(float)

    values = np.empty((m, 1 + len(schema.included_columns)))
    values[:, 0] = 1.0
    for j, name in enumerate(schema.included_columns, start=1):
        values[:, j] = columns[name]
    y = np.array([r.intrusions for r in records], dtype=float)
    X = DesignMatrix(values, ("intercept", *schema.included_columns),
                     tuple(r.org_id for r in records))
    return X, y


@dataclass(frozen=True)
class Standardization:
    """Centering and scaling applied to the non-intercept columns."""

    column_names: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray
    zero_variance: np.ndarray

    def _indices(self, X: DesignMatrix) -> list[int]:
        return [X.column_names.index(n) for n in self.column_names]

    def apply(self, X: DesignMatrix) -> DesignMatrix:
        values = np.array(X.values)
        idx = self._indices(X)
        values[:, idx] = (values[:, idx] - self.mean) / self.scale
        return DesignMatrix(values, X.column_names, X.row_ids)

    def inverse(self, X: DesignMatrix) -> DesignMatrix:
        values = np.array(X.values)
        idx = self._indices(X)
        values[:, idx] = values[:, idx] * self.scale + self.mean
        return DesignMatrix(values, X.column_names, X.row_ids)


def standardize(X: DesignMatrix) -> tuple[DesignMatrix, Standardization]:
    """Center every non-intercept column and scale it to unit sample variance.

    Columns with zero variance are centered only and flagged in the returned
    parameters.
    """
    X = as_design(X)
    if X.n_rows < 2:
        raise SchemaError("standardize needs at least two rows")
    names = tuple(n for n in X.column_names if n != "intercept")
    block = X.select(names).values
    mean = block.mean(axis=0)
    sd = block.std(axis=0, ddof=1)
    zero_var = ~(sd > 0)
    scale = np.where(zero_var, 1.0, sd)
    params = Standardization(names, mean, scale, zero_var)
    return params.apply(X), params


# --- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class LogNormalMarginal:
    """Log-normal draw matched to a target mean and standard deviation."""

    mean: float
    sd: float
    minimum: int = 0
    maximum: float = math.inf

    def __post_init__(self):
        if self.mean <= 0 or self.sd < 0:
            raise DomainError("log-normal marginal needs mean > 0 and sd >= 0")
        if self.maximum < max(self.minimum, 1):
            raise DomainError("log-normal marginal needs maximum >= minimum")

    @property
    def log_params(self) -> tuple[float, float]:
        """``(mu, sigma)`` of the underlying normal.

        Without a finite ``maximum`` this is the closed-form moment match;
        otherwise the mean and sd of ``min(X, maximum)`` are matched
        numerically, falling back to the closed form if that fails.
        """
        sigma2 = math.log1p((self.sd / self.mean) ** 2)
        start = (math.log(self.mean) - sigma2 / 2, math.sqrt(sigma2))
        if not math.isfinite(self.maximum) or self.sd == 0:
            return start
        log_c = math.log(self.maximum)

        def residual(params):
            mu, log_sigma = params
            sigma = math.exp(log_sigma)
            tail = norm.sf((log_c - mu) / sigma)
            m1 = math.exp(mu + sigma**2 / 2) * norm.cdf((log_c - mu - sigma**2) / sigma)
            m1 += self.maximum * tail
            m2 = math.exp(2 * mu + 2 * sigma**2) * norm.cdf((log_c - mu - 2 * sigma**2) / sigma)
            m2 += self.maximum**2 * tail
            return [m1 / self.mean - 1, m2 / (self.sd**2 + self.mean**2) - 1]

        sol = optimize.root(residual, [start[0], math.log(start[1])], method="hybr")
        if not sol.success or max(abs(r) for r in residual(sol.x)) > 1e-8:
            return start
        return float(sol.x[0]), math.exp(float(sol.x[1]))

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        mu, sigma = self.log_params
        x = np.clip(np.rint(rng.lognormal(mu, sigma, m)), self.minimum, self.maximum)
        return x.astype(np.int64)


@dataclass(frozen=True)
class PoissonMarginal:
    mean: float

    def __post_init__(self):
        if self.mean < 0:
            raise DomainError("Poisson marginal needs mean >= 0")

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        return rng.poisson(self.mean, m).astype(np.int64)


@dataclass(frozen=True)
class CategoricalMarginal:
    """SEIB level probabilities, ordered as ``SEIB_LEVELS``.

    With ``stratify`` the level counts are fixed at the largest-remainder
    rounding of ``m * p`` and only their order is random.
    """

    probabilities: tuple[float, ...]
    stratify: bool = True

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.shape != (len(SEIB_LEVELS),) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise DomainError("SEIB probabilities must be 3 nonnegative values summing to 1")

    def draw(self, rng: np.random.Generator, m: int) -> np.ndarray:
        levels = np.array(SEIB_LEVELS, dtype=np.int64)
        p = np.asarray(self.probabilities, dtype=float)
        if not self.stratify:
            return rng.choice(levels, size=m, p=p)
        raw = p * m
        counts = np.floor(raw).astype(int)
        short = m - counts.sum()
        for k in np.argsort(-(raw - counts), kind="stable")[:short]:
            counts[k] += 1
        return rng.permutation(np.repeat(levels, counts))


# Marginal targets (mean, sd, min, max) describing a population of
# monitored organizations. Clipping at the observed
# maximum keeps the log-normal tails from producing absurd responses.
DEFAULT_MARGINALS: dict[str, object] = {
    "domestic_com": LogNormalMarginal(3.7e5, 3.6e5, 12, 1.3e6),
    "domestic_edu": LogNormalMarginal(2017.2, 3203.4, 0, 1.2e4),
    "domestic_gov": LogNormalMarginal(1273.7, 1770.6, 0, 6358),
    "domestic_net": LogNormalMarginal(1.6e5, 2.3e5, 0, 1.2e6),
    "domestic_org": LogNormalMarginal(1.1e4, 1.5e4, 0, 5.5e4),
    "foreign_com": LogNormalMarginal(4.5e4, 5.7e4, 0, 2.6e5),
    "foreign_net": LogNormalMarginal(1.7e4, 2.9e4, 0, 1.3e5),
    "foreign_org": LogNormalMarginal(4.2e5, 6.8e5, 0, 3.7e6),
    "violations": PoissonMarginal(5.1),
    "hosts": LogNormalMarginal(2145.9, 5555.0, 15, 3.2e4),
    "rosg": LogNormalMarginal(2753.8, 4873.8, 1, 1.8e4),
    "seib": CategoricalMarginal((0.780, 0.171, 0.049)),
}

# Realistic NB2 coefficients used as the default generating process.
DEFAULT_TRUE_BETA: dict[str, float] = {
    "intercept": -0.256,
    "domestic_com": 3.01e-6,
    "domestic_edu": -0.0003,
    "domestic_gov": 0.0004,
    "domestic_net": -7.45e-6,
    "domestic_org": -5.43e-5,
    "foreign_com": -6.00e-6,
    "foreign_net": 6.97e-5,
    "foreign_org": -4.40e-8,
    "hosts": 2.54e-5,
    "violations": 0.2113,
    "seib3": 1.8653,
    "seib10": 2.6227,
    "rosg": -4.40e-5,
}


@dataclass(frozen=True)
class SynthConfig:
    m: int
    true_beta: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TRUE_BETA))
    gamma: float = 0.0
    predictor_marginals: Mapping[str, object] = field(
        default_factory=lambda: dict(DEFAULT_MARGINALS)
    )
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise DomainError(f"m must be >= 2, got {self.m}")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise DomainError(f"gamma must be a finite value >= 0, got {self.gamma}")
        missing = [c for c in (*DNS_COLUMNS, "violations", "hosts", "rosg", "seib")
                   if c not in self.predictor_marginals]
        if missing:
            raise SchemaError(f"no marginal given for {', '.join(missing)}")
        allowed = {"intercept", *FULL_PREDICTORS}
        unknown = [k for k in self.true_beta if k not in allowed]
        if unknown:
            raise SchemaError(f"unknown coefficient name {unknown[0]!r}")


def simulate(config: SynthConfig) -> list[OrgRecord]:
    """Draw a synthetic dataset.

    Predictors come from their marginals; the response is Poisson with mean
    ``exp(x . beta)`` when ``gamma == 0``, otherwise a gamma-Poisson mixture
    with variance ``mu * (1 + gamma * mu)``.
    """
    rng = np.random.default_rng(config.seed)
    m = config.m
    draws = {}
    for name in (*DNS_COLUMNS, "violations", "hosts", "rosg", "seib"):
        draws[name] = config.predictor_marginals[name].draw(rng, m)
    if np.any(draws["hosts"] < 1) or np.any(draws["rosg"] < 1):
        raise GenerationError("hosts and rosg marginals must produce values >= 1")

    eta = np.full(m, float(config.true_beta.get("intercept", 0.0)))
    for name in FULL_PREDICTORS:
        coef = float(config.true_beta.get(name, 0.0))
        if coef == 0.0:
            continue
        if name == "seib3":
            x = (draws["seib"] == 3).astype(float)
        elif name == "seib10":
            x = (draws["seib"] == 10).astype(float)
        else:
            x = draws[name].astype(float)
        eta += coef * x
    if np.max(eta) > 700:
        raise GenerationError(
            f"linear predictor reaches {np.max(eta):.1f} > 700; use smaller coefficients"
        )
    lam = np.exp(eta)
    if config.gamma > 0:
        shape = 1.0 / config.gamma
        lam = rng.gamma(shape, lam / shape)
    try:
        y = rng.poisson(lam)
    except ValueError as exc:
        raise GenerationError(
            f"mean response too large to sample ({exc}); use smaller coefficients"
        ) from None

    width = len(str(m))
    records = []
    for i in range(m):
        records.append(OrgRecord(
            org_id=f"org{i + 1:0{width}d}",
            **{name: int(draws[name][i]) for name in (*DNS_COLUMNS, "violations", "hosts", "rosg", "seib")},
            intrusions=int(y[i]),
        ))
    return records


def summary_statistics(records: Sequence[OrgRecord]) -> dict[str, dict[str, float]]:
    """Min/max/mean/median/sd for every count column, as in a descriptive table."""
    out = {}
    for name in (*DNS_COLUMNS, "violations", "hosts", "rosg", "intrusions"):
        v = np.array([getattr(r, name) for r in records], dtype=float)
        out[name] = {
            "min": float(v.min()),
            "max": float(v.max()),
            "mean": float(v.mean()),
            "median": float(np.median(v)),
            "sd": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
        }
    seib = np.array([r.seib for r in records])
    out["seib"] = {f"share_{lvl}": float(np.mean(seib == lvl)) for lvl in SEIB_LEVELS}
    return out

