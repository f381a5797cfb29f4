import os
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator, model_validator

load_dotenv()

# Largest causet the enumerator will build
SIZE_CAP = int(os.getenv("CAUSET_SIZE_CAP", "9"))

# Tolerance for every numeric invariant
TOLERANCE = float(os.getenv("QSGP_TOLERANCE", "1e-10"))

# |z(x)| below this falls back to the uniform transition amplitude
Z_ZERO_THRESHOLD = 1e-12

# Convergence evidence for mu sequences
CONVERGENCE_WINDOW = 3
CONVERGENCE_EPS = 1e-6

# Growth budgets
GROWTH_MAX_CAUSETS = int(os.getenv("GROWTH_MAX_CAUSETS", "250000"))
GROWTH_MAX_PATHS = int(os.getenv("GROWTH_MAX_PATHS", "2000000"))

# Level cache
USE_DATABASE = os.getenv("USE_DATABASE", "false").lower() == "true"
DATABASE_URL = os.getenv("DATABASE_URL")
LEVEL_CACHE_PATH = os.getenv("LEVEL_CACHE_PATH", os.path.join(os.path.dirname(__file__), "levels.json"))

# Expected values of the worked three-step example
EXAMPLE_PATH = os.path.join(os.path.dirname(__file__), "paper_example.json")

SEMAPHORE_LIMIT = int(os.getenv("SEMAPHORE_LIMIT", "4"))

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")


# Schema for a run of the command line
class RunConfig(BaseModel):
    max_level: int = 4
    ap_choice: str = "action"
    tolerance: float = TOLERANCE
    output_format: Literal["json", "csv", "table"] = "table"
    seed: int = 0
    strict_complement: bool = False
    out: Optional[str] = None
    use_cache: bool = True
    size_cap: int = SIZE_CAP

    @field_validator("tolerance")
    @classmethod
    def tolerance_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("tolerance must be positive")
        return value

    @field_validator("ap_choice")
    @classmethod
    def known_process(cls, value: str) -> str:
        if value in ("action", "uniform") or (value.startswith("file:") and len(value) > 5):
            return value
        raise ValueError(f"ap must be action, uniform or file:<path>, got {value!r}")

    @model_validator(mode="after")
    def level_within_cap(self) -> "RunConfig":
        if not 1 <= self.max_level <= self.size_cap:
            raise ValueError(f"max_level {self.max_level} outside 1..{self.size_cap}")
        return self


# Schemas for machine-readable output
class ComplexValue(BaseModel):
    re: float
    im: float

    @classmethod
    def of(cls, z: complex) -> "ComplexValue":
        z = complex(z)
        return cls(re=z.real, im=z.imag)


class CausetRecord(BaseModel):
    size: int
    covers: List[List[int]]
    canonical: str
    h: int
    w: int
    area: int


class MuRecord(BaseModel):
    n: int
    mu: float


class MuSequence(BaseModel):
    spec: str
    values: List[MuRecord]
    converged: bool = False
    limit_estimate: Optional[float] = None
    window: int = CONVERGENCE_WINDOW
    eps: float = CONVERGENCE_EPS

    @model_validator(mode="after")
    def limit_when_converged(self) -> "MuSequence":
        if self.converged and self.limit_estimate is None:
            raise ValueError("a converged sequence carries a limit estimate")
        return self


class CheckResult(BaseModel):
    name: str
    passed: bool
    residual: Optional[float] = None
    witness: Optional[Any] = None
    detail: Dict[str, Any] = Field(default_factory=dict)


class SuiteReport(BaseModel):
    suite: str
    checks: List[CheckResult] = Field(default_factory=list)
    seed: Optional[int] = None

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def add(self, name: str, passed: bool, residual: Optional[float] = None, witness: Any = None, **detail) -> CheckResult:
        check = CheckResult(name=name, passed=bool(passed), residual=residual, witness=witness, detail=detail)
        self.checks.append(check)
        return check

    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if not check.passed]
