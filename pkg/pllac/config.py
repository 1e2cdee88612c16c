import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from pllac.errors import ConfigError

load_dotenv()

OUTPUT_FOLDER = os.getenv("PLLAC_OUTPUT_FOLDER", "runs")
LOG_LEVEL = os.getenv("PLLAC_LOG_LEVEL", "INFO")
GRAM_CAP = int(os.getenv("PLLAC_GRAM_CAP", "4000"))
SUPPORT_CAP = int(os.getenv("PLLAC_SUPPORT_CAP", "500"))
DTYPE = os.getenv("PLLAC_DTYPE", "float64")

PLL_LOSSES = ("rc", "cc", "proden", "mae", "mse", "exp")
ARCHITECTURES = ("linear", "mlp")
METHODS = ("pllac", "baseline")
# where the negative-risk switch is read: the current mini-batch or the whole training set
PENALTY_SCOPES = ("batch", "full")

# named corrections of the negative-risk penalty, as (lambda, t)
CORRECTIONS = {
    "relu": (1.0, 1),
    "abs": (2.0, 1),
}

SUMMARY_FILE = "summary.json"
EPOCHS_FILE = "epochs.jsonl"
GRID_CSV = "grid.csv"
GRID_XLSX = "grid.xlsx"
CHECKPOINT_FILE = "checkpoint.json"


def _split_list(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    if isinstance(value, int):
        return [value]
    return value


class ExperimentConfig(BaseModel):
    """
    One training configuration. Unknown keys are rejected, so a typo in a
    config file or a `--key value` flag fails loudly instead of being ignored.
    """

    model_config = ConfigDict(extra="forbid", populate_by_name=True, validate_assignment=True)

    dataset: Optional[str] = None
    candidates_path: Optional[str] = None
    unlabeled_pool: Optional[str] = None
    label_column: str = "label"
    ac_classes: list[int] = Field(default_factory=lambda: [-1])
    test_fraction: float = 0.2
    method: str = "pllac"
    pll_loss: str = "rc"
    theta: str = "kme"
    lambda_: float = Field(1.0, alias="lambda")
    t: int = 1
    correction: Optional[str] = None
    penalty_scope: str = "batch"
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    epochs: int = 150
    iterations: int = 1
    arch: str = "linear"
    hidden: int = 500
    seed: int = 0
    trials: int = 5
    unlabeled_count: Optional[int] = None
    alpha: Optional[float] = None
    threshold: float = 0.95
    standardize: bool = True
    dtype: str = DTYPE
    output: str = OUTPUT_FOLDER

    @field_validator("ac_classes", mode="before")
    @classmethod
    def _parse_ac_classes(cls, value):
        return _split_list(value)

    @field_validator("test_fraction")
    @classmethod
    def _check_fraction(cls, value):
        if not 0.0 < value < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        return value

    @field_validator("pll_loss")
    @classmethod
    def _check_loss(cls, value):
        if value not in PLL_LOSSES:
            raise ValueError(f"pll_loss must be one of {PLL_LOSSES}")
        return value

    @field_validator("method")
    @classmethod
    def _check_method(cls, value):
        if value not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        return value

    @field_validator("penalty_scope")
    @classmethod
    def _check_penalty_scope(cls, value):
        if value not in PENALTY_SCOPES:
            raise ValueError(f"penalty_scope must be one of {PENALTY_SCOPES}")
        return value

    @field_validator("arch")
    @classmethod
    def _check_arch(cls, value):
        if value not in ARCHITECTURES:
            raise ValueError(f"arch must be one of {ARCHITECTURES}")
        return value

    @field_validator("theta")
    @classmethod
    def _check_theta(cls, value):
        parse_theta_mode(value)
        return value

    @field_validator("lambda_", "lr", "weight_decay")
    @classmethod
    def _non_negative(cls, value):
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @field_validator("t", "batch_size", "trials", "iterations", "hidden")
    @classmethod
    def _at_least_one(cls, value):
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("epochs")
    @classmethod
    def _check_epochs(cls, value):
        # 0 is the dry-run flag: evaluate the initial model only
        if value < 0:
            raise ValueError("epochs must be >= 0")
        return value

    @field_validator("alpha")
    @classmethod
    def _check_alpha(cls, value):
        if value is not None and not 0.0 <= value < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        return value

    @field_validator("dtype")
    @classmethod
    def _check_dtype(cls, value):
        if value not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        return value

    @field_validator("correction")
    @classmethod
    def _check_correction(cls, value):
        if value is not None and value not in CORRECTIONS:
            raise ValueError(f"correction must be one of {tuple(CORRECTIONS)}")
        return value

    @model_validator(mode="after")
    def _apply_correction(self):
        if self.correction is not None:
            explicit = {"lambda_", "t"} & self.model_fields_set
            if explicit:
                raise ValueError(f"correction {self.correction!r} already sets lambda and t, got {sorted(explicit)} too")
            lam, t = CORRECTIONS[self.correction]
            # bypass validate_assignment to avoid re-entering this validator
            object.__setattr__(self, "lambda_", lam)
            object.__setattr__(self, "t", t)
        return self

    @property
    def theta_mode(self):
        return parse_theta_mode(self.theta)


def parse_theta_mode(value):
    """`kme` -> ("kme", None); `fixed:0.6` -> ("fixed", 0.6)."""
    if value == "kme":
        return "kme", None
    if value.startswith("fixed:"):
        try:
            number = float(value.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"theta value is not a number: {value}") from None
        if not 0.0 <= number <= 1.0:
            raise ValueError("fixed theta must lie in [0, 1]")
        return "fixed", number
    raise ValueError(f"theta must be 'kme' or 'fixed:<value>', got {value!r}")


def read_config_file(path):
    """
    Reads a plain-text key=value file. Blank lines and `#` comments are
    skipped; a repeated key is an error.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")

    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{number}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if key in values:
                raise ConfigError(f"{path}:{number}: duplicate key {key!r}")
            values[key] = value.strip()
    return values


def build_config(file_values=None, overrides=None):
    """Merges file values with flag overrides (flags win) into an ExperimentConfig."""
    merged = dict(file_values or {})
    merged.update(overrides or {})
    for key in ("unlabeled_count", "alpha", "correction", "dataset", "candidates_path", "unlabeled_pool"):
        if merged.get(key) in ("", "none", "None"):
            merged[key] = None
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
