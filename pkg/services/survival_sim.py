"""
Survival data for the proportional hazards model
Simulates Cox-model data with a known sparse truth and reads/writes the CSV format.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.optimize import bisect

from utils.io import write_frame_csv

logger = logging.getLogger(__name__)

# Clipped-gaussian covariates are cut at this fraction of K1
CLIP_FRACTION = 0.99
CENSORING_PILOT_N = 20_000
_STREAM_CENSORING_PILOT = 41


class DatasetError(Exception):
    """Raised when a dataset violates its invariants"""


class DegenerateDatasetError(DatasetError):
    """Raised when a sample carries no observed event"""


class CsvParseError(DatasetError):
    """Raised when a survival CSV cannot be parsed; `line` is 1-based"""

    def __init__(self, message: str, line: Optional[int] = None, lines: Optional[List[int]] = None):
        super().__init__(message)
        self.line = line
        self.lines = lines or ([line] if line is not None else [])


class MissingColumnError(CsvParseError):
    pass


class NonNumericCellError(CsvParseError):
    pass


class InvalidStatusError(CsvParseError):
    pass


class NonPositiveTimeError(CsvParseError):
    pass


# ---------------------------------------------------------------------------
# Baseline hazards and covariate laws
# ---------------------------------------------------------------------------

class ConstantBaseline(BaseModel):
    """alpha0(t) = c"""
    kind: Literal["constant"] = "constant"
    c: float = Field(gt=0)

    def cumulative(self, t):
        return self.c * np.asarray(t, dtype=float)

    def inverse_cumulative(self, v):
        return np.asarray(v, dtype=float) / self.c


class WeibullBaseline(BaseModel):
    """alpha0(t) = (shape/scale) (t/scale)^(shape-1)"""
    kind: Literal["weibull"] = "weibull"
    shape: float
    scale: float = Field(gt=0)

    @field_validator("shape")
    @classmethod
    def _integrable(cls, value: float) -> float:
        if not value > 0:
            raise ValueError(
                "integrable-baseline assumption violated: Weibull shape must be > 0 "
                "for the baseline hazard to be integrable on [0, tau]"
            )
        return value

    def cumulative(self, t):
        return (np.asarray(t, dtype=float) / self.scale) ** self.shape

    def inverse_cumulative(self, v):
        return self.scale * np.asarray(v, dtype=float) ** (1.0 / self.shape)


Baseline = Annotated[Union[ConstantBaseline, WeibullBaseline], Field(discriminator="kind")]


class UniformLaw(BaseModel):
    kind: Literal["uniform"] = "uniform"
    a: float = Field(gt=0)

    def bound(self, K1: float) -> float:
        return self.a

    def sample(self, rng: np.random.Generator, n: int, p: int, K1: float) -> np.ndarray:
        return rng.uniform(-self.a, self.a, size=(n, p))


class RademacherLaw(BaseModel):
    kind: Literal["rademacher"] = "rademacher"

    def bound(self, K1: float) -> float:
        return 1.0

    def sample(self, rng: np.random.Generator, n: int, p: int, K1: float) -> np.ndarray:
        return rng.choice(np.array([-1.0, 1.0]), size=(n, p))


class ClippedGaussianLaw(BaseModel):
    kind: Literal["clipped_gaussian"] = "clipped_gaussian"
    sigma: float = Field(gt=0)
    clip: float = Field(gt=0)

    def bound(self, K1: float) -> float:
        return min(self.clip, CLIP_FRACTION * K1)

    def sample(self, rng: np.random.Generator, n: int, p: int, K1: float) -> np.ndarray:
        limit = self.bound(K1)
        return np.clip(rng.normal(0.0, self.sigma, size=(n, p)), -limit, limit)


class ConstantLaw(BaseModel):
    """Every subject carries the same covariate vector value * 1"""
    kind: Literal["constant"] = "constant"
    value: float = 0.0

    def bound(self, K1: float) -> float:
        return abs(self.value)

    def sample(self, rng: np.random.Generator, n: int, p: int, K1: float) -> np.ndarray:
        return np.full((n, p), self.value)


CovariateLaw = Annotated[
    Union[UniformLaw, RademacherLaw, ClippedGaussianLaw, ConstantLaw], Field(discriminator="kind")
]


class SimConfig(BaseModel):
    """Simulation design; beta0 is supported on the first `s` coordinates"""
    n: int = Field(ge=1)
    p: int = Field(ge=1)
    s: int = Field(ge=1)
    beta0_values: List[float]
    baseline: Baseline = ConstantBaseline(c=1.0)
    censor_rate: float = Field(default=0.0, ge=0.0, lt=1.0)
    covariate_law: CovariateLaw = UniformLaw(a=1.0)
    K1: float = Field(default=1.5, gt=0)
    tau: float = Field(default=10.0, gt=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_assumptions(self) -> "SimConfig":
        if self.s > self.p:
            raise ValueError(f"sparsity assumption violated: S={self.s} exceeds p={self.p}")
        if len(self.beta0_values) != self.s:
            raise ValueError(
                f"beta0_values has {len(self.beta0_values)} entries, expected S={self.s}"
            )
        if not np.all(np.isfinite(self.beta0_values)):
            raise ValueError("beta0_values must be finite")
        if not np.isfinite(self.tau):
            raise ValueError("integrable-baseline assumption violated: tau must be finite")
        if not self.covariate_law.bound(self.K1) < self.K1:
            raise ValueError(
                f"bounded-covariate assumption violated: {self.covariate_law.kind} covariates "
                f"reach {self.covariate_law.bound(self.K1)}, which is not below K1={self.K1}"
            )
        return self

    def beta0(self) -> np.ndarray:
        beta = np.zeros(self.p)
        beta[:self.s] = self.beta0_values
        return beta

    def support(self) -> List[int]:
        return list(range(self.s))

    def with_overrides(self, **updates) -> "SimConfig":
        """Validated copy with some fields replaced"""
        return SimConfig(**{**self.model_dump(), **updates})


def load_sim_config(path) -> SimConfig:
    """Load a SimConfig from a JSON document"""
    return SimConfig.model_validate_json(Path(path).read_text(encoding='utf-8'))


def integrated_baseline(config: SimConfig) -> float:
    """Integral of the baseline hazard over [0, tau]"""
    return float(config.baseline.cumulative(config.tau))


def derive_seed(base: int, stream: int, index: int, *more: int) -> int:
    """Independent child seed for replication `index` of a named stream"""
    return int(np.random.SeedSequence([base, stream, index, *more]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

class Observation(BaseModel):
    """One subject: follow-up time, event indicator, covariates"""
    time: float = Field(gt=0)
    status: Literal[0, 1]
    covariates: List[float]


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Column-oriented survival sample; arrays are treated as immutable"""
    time: np.ndarray
    status: np.ndarray
    covariates: np.ndarray
    tau: float
    censoring_rate: Optional[float] = None
    seed: Optional[int] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("time", "status", "covariates"):
            getattr(self, name).setflags(write=False)
        n = self.time.shape[0]
        if self.covariates.ndim != 2 or self.covariates.shape[0] != n or self.status.shape[0] != n:
            raise DatasetError("time, status and covariates must describe the same subjects")
        if n == 0:
            raise DatasetError("dataset has no subjects")
        if np.any(self.time <= 0):
            raise DatasetError("follow-up times must be positive")
        if not np.all(np.isin(self.status, (0, 1))):
            raise DatasetError("status must be 0 or 1")
        if np.any(self.time > self.tau):
            raise DatasetError("follow-up times exceed the study horizon tau")

    @property
    def n(self) -> int:
        return int(self.time.shape[0])

    @property
    def p(self) -> int:
        return int(self.covariates.shape[1])

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    @property
    def event_fraction(self) -> float:
        return self.n_events / self.n

    @property
    def observations(self) -> List[Observation]:
        return [
            Observation(time=float(t), status=int(d), covariates=z.tolist())
            for t, d, z in zip(self.time, self.status, self.covariates)
        ]

    def equals(self, other: "SurvivalDataset") -> bool:
        """Same subjects, bit for bit"""
        return (
            np.array_equal(self.time, other.time)
            and np.array_equal(self.status, other.status)
            and np.array_equal(self.covariates, other.covariates)
        )


def _make_dataset(time, status, covariates, tau, **extra) -> SurvivalDataset:
    return SurvivalDataset(
        time=np.ascontiguousarray(time, dtype=float),
        status=np.ascontiguousarray(status, dtype=np.int8),
        covariates=np.ascontiguousarray(covariates, dtype=float),
        tau=float(tau),
        **extra,
    )


def _calibrate_censoring(exposure: np.ndarray, censor_rate: float) -> float:
    """Exponential censoring rate whose expected censored fraction is censor_rate"""
    def excess(rate: float) -> float:
        return float(np.mean(-np.expm1(-rate * exposure))) - censor_rate

    upper = 1.0 / float(np.mean(exposure))
    while excess(upper) <= 0:
        upper *= 2.0
    return bisect(excess, 0.0, upper, xtol=1e-12, maxiter=500)


@lru_cache(maxsize=128)
def _design_censoring_rate(design: str) -> float:
    config = SimConfig.model_validate_json(design)
    rng = np.random.default_rng(derive_seed(0, _STREAM_CENSORING_PILOT, config.p))
    covariates = config.covariate_law.sample(rng, CENSORING_PILOT_N, config.p, config.K1)
    unit_exponential = rng.exponential(size=CENSORING_PILOT_N)
    event_time = config.baseline.inverse_cumulative(unit_exponential * np.exp(-(covariates @ config.beta0())))
    return _calibrate_censoring(np.minimum(event_time, config.tau), config.censor_rate)


def censoring_rate(config: SimConfig) -> float:
    """
    Exponential censoring rate for the design, calibrated on a pilot sample
    drawn from its own stream so censoring stays independent of the event times.
    Depends on neither n nor seed.
    """
    if config.censor_rate == 0:
        return 0.0
    return _design_censoring_rate(config.with_overrides(n=1, seed=0).model_dump_json())


def simulate_dataset(config: SimConfig) -> SurvivalDataset:
    """Draw a sample with hazard alpha0(t) exp(Z beta0) by inverting the cumulative hazard"""
    rng = np.random.default_rng(config.seed)
    n, p = config.n, config.p

    covariates = config.covariate_law.sample(rng, n, p, config.K1)
    if not np.all(np.abs(covariates) < config.K1):
        raise DatasetError(f"generated covariates are not bounded by K1={config.K1}")

    log_hazard_ratio = covariates @ config.beta0()
    unit_exponential = rng.exponential(size=n)
    event_time = config.baseline.inverse_cumulative(unit_exponential * np.exp(-log_hazard_ratio))

    censor_draw = rng.exponential(size=n)
    rate = censoring_rate(config)
    censor_time = censor_draw / rate if rate > 0 else np.full(n, np.inf)

    time = np.minimum(np.minimum(event_time, censor_time), config.tau)
    status = (event_time <= censor_time) & (event_time <= config.tau)

    if not status.any():
        raise DegenerateDatasetError("degenerate dataset: no observed events")

    dataset = _make_dataset(
        time, status, covariates, config.tau,
        censoring_rate=rate, seed=config.seed,
    )
    logger.debug(
        f"Simulated n={n}, p={p}, events={dataset.n_events} "
        f"(fraction {dataset.event_fraction:.3f}), censoring rate {rate:.4g}"
    )
    return dataset


# ---------------------------------------------------------------------------
# Event order and counting processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EventOrder:
    """Observed events sorted by time, ties broken by subject index"""
    times: np.ndarray
    subjects: np.ndarray
    has_ties: bool

    @property
    def events(self) -> List[Tuple[float, int]]:
        return [(float(t), int(i)) for t, i in zip(self.times, self.subjects)]

    def __len__(self) -> int:
        return int(self.times.shape[0])


def event_order(dataset: SurvivalDataset) -> EventOrder:
    """Canonical evaluation order for the jump sums"""
    subjects = np.flatnonzero(dataset.status == 1)
    times = dataset.time[subjects]
    order = np.lexsort((subjects, times))
    times, subjects = times[order], subjects[order]
    has_ties = bool(np.any(np.diff(times) == 0))
    if has_ties:
        logger.debug("Tied event times; broken by subject index")
    return EventOrder(times=times, subjects=subjects, has_ties=has_ties)


def counting_paths(dataset: SurvivalDataset, times) -> Tuple[np.ndarray, np.ndarray]:
    """N_i(t) and Y_i(t) on a time grid, each of shape (n, len(times))"""
    grid = np.asarray(times, dtype=float)[None, :]
    x = dataset.time[:, None]
    counting = ((x <= grid) & (dataset.status[:, None] == 1)).astype(np.int8)
    at_risk = (x >= grid).astype(np.int8)
    return counting, at_risk


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _first_bad_lines(mask: np.ndarray) -> List[int]:
    # header is line 1
    return [int(i) + 2 for i in np.flatnonzero(mask)]


def _parse_float(text: str) -> float:
    # correctly rounded decimal to double
    try:
        return float(text)
    except ValueError:
        return float("nan")


def load_csv(path, tau: Optional[float] = None) -> SurvivalDataset:
    """
    Parse `time,status,z1,...,zp` with one row per subject.
    tau defaults to the largest follow-up time when the horizon is not known.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    frame.columns = [str(c).strip() for c in frame.columns]
    columns = list(frame.columns)

    z_columns = [c for c in columns if c not in ("time", "status")]
    expected = [f"z{j}" for j in range(1, len(z_columns) + 1)]
    missing = [c for c in ("time", "status") if c not in columns]
    if missing or not z_columns or z_columns != expected:
        wanted = ", ".join(missing) if missing else "z1..zp"
        raise MissingColumnError(f"{path}: missing or misnamed columns ({wanted})", line=1)
    if frame.empty:
        raise DatasetError(f"{path}: no data rows")

    values = {}
    for column in ["time", "status"] + z_columns:
        parsed = frame[column].str.strip().map(_parse_float).to_numpy(dtype=float)
        bad = _first_bad_lines(~np.isfinite(parsed))
        if bad:
            raise NonNumericCellError(
                f"{path}: non-numeric value in column '{column}' on line(s) {bad}",
                line=bad[0], lines=bad,
            )
        values[column] = parsed

    status = values["status"]
    bad = _first_bad_lines(~np.isin(status, (0.0, 1.0)))
    if bad:
        raise InvalidStatusError(f"{path}: status must be 0 or 1 on line(s) {bad}", line=bad[0], lines=bad)

    time = values["time"]
    bad = _first_bad_lines(time <= 0)
    if bad:
        raise NonPositiveTimeError(f"{path}: nonpositive time on line(s) {bad}", line=bad[0], lines=bad)

    covariates = np.column_stack([values[c] for c in z_columns])
    horizon = float(time.max()) if tau is None else float(tau)
    if horizon < time.max():
        raise ValueError(f"{path}: tau={horizon} is below the largest follow-up time {time.max()}")
    dataset = _make_dataset(time, status, covariates, horizon)
    if event_order(dataset).has_ties:
        logger.warning(f"{path}: tied event times are broken by subject index")
    logger.info(f"Loaded {dataset.n} subjects with p={dataset.p} from {path}")
    return dataset


def write_csv(dataset: SurvivalDataset, path) -> Path:
    """Write the dataset in the format read by load_csv"""
    frame = pd.DataFrame(dataset.covariates, columns=[f"z{j}" for j in range(1, dataset.p + 1)])
    frame.insert(0, "status", dataset.status.astype(int))
    frame.insert(0, "time", dataset.time)
    return write_frame_csv(path, frame)
