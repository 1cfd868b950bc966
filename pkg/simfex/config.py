__copyright__ = """

    Copyright 2024 The simfex authors

    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.

"""
__license__ = "Apache 2.0"
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import lru_cache

from .exceptions import ConfigError

COMMANDS = ("misclass", "fit", "bootstrap", "simulate", "sweep")
LINKS = ("identity", "logit", "probit")
EXTRAPOLANTS = ("linear", "quadratic")
METHODS = ("naive", "mcsimex", "simfex")
STUDY_METHODS = METHODS + ("simfex_z",)
FORMATS = ("csv", "table")
CI_METHODS = ("normal", "percentile")

# Fields that do not change results and stay out of the config hash
UNHASHED = ("out", "format", "verbosity", "parallelism")

DEFAULTS_PATH = os.path.join(os.path.dirname(os.path.realpath(__file__)), "data", "defaults.json")


@lru_cache(maxsize=None)
def _read_defaults(path):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def load_defaults():
    """Shipped defaults for settings, generation, the truth oracle and studies."""
    return json.loads(json.dumps(_read_defaults(DEFAULTS_PATH)))


def load_config_file(path):
    """Read a JSON run configuration; top-level keys override the shipped generation defaults."""
    try:
        with open(path, encoding="utf-8") as handle:
            values = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"Config file {path} does not exist")
    except json.JSONDecodeError as error:
        raise ConfigError(f"Config file {path} is not valid JSON: {error}")
    if not isinstance(values, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return values


def parse_list(text, cast=float, name="list"):
    """Split a comma separated flag value; None and empty strings give an empty tuple."""
    if text is None:
        return ()
    if isinstance(text, (list, tuple)):
        return tuple(cast(v) for v in text)
    try:
        return tuple(cast(item.strip()) for item in str(text).split(",") if item.strip())
    except ValueError:
        raise ConfigError(f"Could not parse {name} {text!r}")


@dataclass(frozen=True)
class ColumnMapping:
    """Input columns bound to the model's variables."""

    response: str = None
    covariate: str = None
    replicates: tuple = ()
    covariates: tuple = ()
    group: str = None

    @property
    def primary_columns(self):
        names = [self.response, self.covariate, *self.covariates]
        if self.group:
            names.append(self.group)
        return [n for n in names if n]

    @property
    def all_columns(self):
        names = self.primary_columns + [c for c in self.replicates if c not in self.primary_columns]
        return names


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: str = None
    replicate_input: str = None
    columns: ColumnMapping = field(default_factory=ColumnMapping)
    link: str = "identity"
    categories: int = None
    cutpoints: tuple = ()
    eta_grid: tuple = (0.5, 1.0, 1.5, 2.0)
    extrapolant: str = "quadratic"
    methods: tuple = METHODS
    boot: int = 500
    reps: int = 1000
    n_sim: int = 100
    seed: int = 0
    ci_method: str = "normal"
    reestimate_pi: bool = True
    study: dict = field(default_factory=dict)
    nsr_values: tuple = ()
    out: str = None
    format: str = "csv"
    parallelism: int = 1
    verbosity: str = "info"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"Unknown command {self.command!r}")
        checks = (
            ("link", self.link, LINKS),
            ("extrapolant", self.extrapolant, EXTRAPOLANTS),
            ("format", self.format, FORMATS),
            ("ci method", self.ci_method, CI_METHODS),
        )
        for name, value, allowed in checks:
            if value not in allowed:
                raise ConfigError(f"Unknown {name} {value!r}; choose from {', '.join(allowed)}")
        allowed = STUDY_METHODS if self.command in ("simulate", "sweep") else METHODS
        unknown = [m for m in self.methods if m not in allowed]
        if unknown or not self.methods:
            raise ConfigError(f"Unknown methods {unknown}; choose from {', '.join(allowed)}")
        for name in ("boot", "reps", "n_sim", "parallelism"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"--{name.replace('_', '-')} must be non-negative")
        if self.command in ("misclass", "fit", "bootstrap"):
            self._check_data_command()
        elif self.cutpoints:
            raise ConfigError("Simulation studies derive cutpoints from the generating distribution; use --categories")
        if self.command == "sweep" and not self.nsr_values:
            raise ConfigError("sweep needs --nsr-values")

    def _check_data_command(self):
        if not self.input:
            raise ConfigError(f"{self.command} needs --input")
        if (self.categories is None) == (not self.cutpoints):
            raise ConfigError("Supply exactly one of --categories or --cutpoints")
        if self.categories is not None and self.categories < 2:
            raise ConfigError("--categories must be at least 2")
        if not self.columns.covariate:
            raise ConfigError("--covariate is required")
        if self.command != "misclass" and not self.columns.response:
            raise ConfigError(f"{self.command} needs --response")
        naive_only = self.command == "fit" and set(self.methods) == {"naive"}
        if len(self.columns.replicates) < 2 and not naive_only:
            raise ConfigError("At least two --replicates columns are needed to estimate the error model")

    def hash_payload(self):
        payload = dataclasses.asdict(self)
        for name in UNHASHED:
            payload.pop(name, None)
        return payload


def config_hash(config):
    """SHA-256 of the canonical JSON of every result-relevant field."""
    canonical = json.dumps(config.hash_payload(), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _value(args, name, default=None):
    value = getattr(args, name, None)
    return default if value is None else value


def from_args(args):
    """
    Build a RunConfig from a parsed argparse namespace.

    For simulate and sweep, values from --config are layered over the shipped
    generation defaults and explicit flags override both.
    """
    command = args.command
    defaults = load_defaults()
    study_defaults = defaults["study"]
    study = {}
    if command in ("simulate", "sweep"):
        study = dict(defaults["generation"])
        if _value(args, "config"):
            study.update(load_config_file(args.config))
        flags = (
            ("setting", "setting"),
            ("model", "model"),
            ("nsr", "nsr"),
            ("n", "n"),
            ("categories", "n_categories"),
            ("z_covariate", "covariate"),
            ("z_shift", "z_shift"),
        )
        for flag, key in flags:
            if _value(args, flag) is not None:
                study[key] = getattr(args, flag)
    columns = ColumnMapping(
        response=_value(args, "response"),
        covariate=_value(args, "covariate"),
        replicates=parse_list(_value(args, "replicates"), str, "--replicates"),
        covariates=parse_list(_value(args, "covariates"), str, "--covariates"),
        group=_value(args, "group"),
    )
    if getattr(args, "verbose", False):
        verbosity = "debug"
    elif getattr(args, "quiet", False):
        verbosity = "warning"
    else:
        verbosity = "info"
    return RunConfig(
        command=command,
        input=_value(args, "input"),
        replicate_input=_value(args, "replicate_input"),
        columns=columns,
        link=_value(args, "link", "identity"),
        categories=None if command in ("simulate", "sweep") else _value(args, "categories"),
        cutpoints=parse_list(_value(args, "cutpoints"), float, "--cutpoints"),
        eta_grid=parse_list(_value(args, "eta_grid"), float, "--eta-grid") or tuple(study_defaults["eta_grid"]),
        extrapolant=_value(args, "extrapolant", study_defaults["extrapolant"]),
        methods=parse_list(_value(args, "methods"), str, "--methods") or tuple(study_defaults["methods"]),
        boot=int(_value(args, "boot", study_defaults["boot"])),
        reps=int(_value(args, "reps", study_defaults["n_reps"])),
        n_sim=int(_value(args, "n_sim", study_defaults["n_sim"])),
        seed=int(_value(args, "seed", 0)),
        ci_method=_value(args, "ci_method", "normal"),
        reestimate_pi=not getattr(args, "fixed_pi", False),
        study=study,
        nsr_values=parse_list(_value(args, "nsr_values"), float, "--nsr-values"),
        out=_value(args, "out"),
        format=_value(args, "format", "csv"),
        parallelism=int(_value(args, "parallelism", 1)),
        verbosity=verbosity,
    )
