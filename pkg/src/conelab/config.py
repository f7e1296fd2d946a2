import glob
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np
import singer
from dotenv import load_dotenv

from conelab.annulus_dynamics import AnnulusError
from conelab.barriers_distance import BarrierError, YProfile, barrier_eps0
from conelab.cache import utils as cache_utils
from conelab.geometry_core import ConeParams, GeometryError
from conelab.hardt_simon import HardtSimonError
from conelab.jacobi_spectrum import SpectrumError
from conelab.link_smoothing import DELTA_MAX, GlueConfig, LinkSolveError
from conelab.log_perturbation import LogPerturbationError

logger = singer.get_logger()

COMMANDS = (
    "hardt-simon",
    "spectrum",
    "smooth-link",
    "log-cone",
    "barriers",
    "three-annulus",
    "report",
)
FORMATS = ("json", "csv")

CACHE_DIR_VARIABLE = "CONELAB_CACHE_DIR"
DEFAULT_CACHE_DIR = "tmp"

# keys of GlueConfig.from_mapping
GLUE_KEYS = (
    "alpha",
    "r0_anchor",
    "zeta_support",
    "n_nodes",
    "width",
    "tol",
    "max_iter",
)

MODULE_ERRORS = (
    AnnulusError,
    BarrierError,
    GeometryError,
    HardtSimonError,
    LinkSolveError,
    LogPerturbationError,
    SpectrumError,
)


def default_cache_dir() -> str:
    load_dotenv()
    return os.environ.get(CACHE_DIR_VARIABLE, DEFAULT_CACHE_DIR)


def parse_pq(value: Any) -> ConeParams:
    """'3,3' or [3, 3] to the cone over S^p x S^q."""
    parts = value.split(",") if isinstance(value, str) else list(value)
    try:
        p, q = (int(part) for part in parts)
    except (TypeError, ValueError):
        raise ConfigError("pq must look like '3,3', got [{}]".format(value))

    return ConeParams(p, q)


def parse_delta_grid(value: Any) -> List[float]:
    """'1e-4:3e-2:log8', '1e-3:1e-2:lin4' or a comma list of deltas."""
    if not isinstance(value, str):
        return [float(delta) for delta in value]

    if ":" not in value:
        return [float(delta) for delta in value.split(",")]

    try:
        lo, hi, spacing = value.split(":")
        kind, count = spacing[:3], int(spacing[3:])
        lo, hi = float(lo), float(hi)
    except ValueError:
        raise ConfigError("bad delta grid [{}]".format(value))

    if kind == "log":
        if lo * hi <= 0:
            raise ConfigError("log delta grid [{}] crosses zero".format(value))
        return [float(delta) for delta in np.geomspace(lo, hi, count)]
    if kind == "lin":
        return [float(delta) for delta in np.linspace(lo, hi, count)]

    raise ConfigError("bad delta grid spacing [{}]".format(spacing))


@dataclass
class RunConfig:
    command: str
    parameters: Dict[str, Any] = field(default_factory=dict)
    seed: int = 7
    workers: int = 1

    # output
    output: str = "."
    formats: Tuple[str, ...] = FORMATS

    # caching
    local_caching: bool = True
    cache_dir: str = field(default_factory=default_cache_dir)
    cache_file: str = "conelab"

    @classmethod
    def from_mapping(cls, context: Mapping[str, Any]) -> "RunConfig":
        if "command" not in context:
            raise ConfigError("missing command")

        self = cls(command=context["command"])

        if "parameters" in context:
            self.parameters = {
                key: value
                for key, value in context["parameters"].items()
                if value is not None
            }
        if "seed" in context:
            self.seed = int(context["seed"])
        if "workers" in context:
            self.workers = int(context["workers"])

        if "output" in context:
            self.output = context["output"]
        if "formats" in context:
            self.formats = tuple(context["formats"])

        if "local_caching" in context:
            self.local_caching = bool(context["local_caching"])
        if "cache_dir" in context:
            if context["cache_dir"]:
                self.cache_dir = context["cache_dir"]
        if "cache_file" in context:
            self.cache_file = context["cache_file"]

        return self

    @property
    def config_hash(self) -> str:
        return cache_utils.content_hash(
            {"command": self.command, "parameters": self.parameters, "seed": self.seed}
        )

    @property
    def params(self) -> ConeParams:
        if "pq" not in self.parameters:
            return ConeParams()
        return parse_pq(self.parameters["pq"])

    def get(self, key: str, default: Any = None) -> Any:
        return self.parameters.get(key, default)

    def deltas(self) -> List[float]:
        if "delta_grid" in self.parameters:
            return parse_delta_grid(self.parameters["delta_grid"])
        if "delta" in self.parameters:
            return [float(self.parameters["delta"])]

        raise ConfigError("[{}] needs a delta or a delta grid".format(self.command))

    def glue_config(self, delta: float) -> GlueConfig:
        context = {key: self.parameters[key] for key in GLUE_KEYS if key in self}
        cfg = GlueConfig.from_mapping({**context, "delta": delta})
        cfg.params = self.params
        return cfg

    def y_profile(self) -> YProfile:
        if "f" not in self.parameters:
            return YProfile.constant(1.0)
        return YProfile.from_mapping(self.parameters["f"])

    def tables(self) -> List[str]:
        paths: List[str] = []
        for pattern in self.parameters.get("tables", []):
            paths.extend(sorted(glob.glob(pattern)))
        return paths

    def __contains__(self, key: str) -> bool:
        return key in self.parameters

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError("unknown command [{}]".format(self.command))

        unknown = set(self.formats) - set(FORMATS)
        if unknown or not self.formats:
            raise ConfigError("unknown output formats [{}]".format(self.formats))

        if self.workers < 1:
            raise ConfigError("workers must be >= 1, got [{}]".format(self.workers))

        validator = getattr(self, "_validate_" + self.command.replace("-", "_"))
        try:
            self.params
            validator()
        except MODULE_ERRORS as error:
            raise ConfigError(str(error)) from error

        logger.debug("validated [%s] config [%s]", self.command, self.config_hash)

    def _check_positive(self, *keys: str) -> None:
        for key in keys:
            if key in self and not float(self.parameters[key]) > 0:
                raise ConfigError(
                    "{} must be positive, got [{}]".format(key, self.parameters[key])
                )

    def _validate_hardt_simon(self) -> None:
        xi_max = float(self.get("xi_max", 1e6))
        tol = float(self.get("tol", 1e-12))
        if xi_max < 1:
            raise ConfigError("xi_max must be >= 1, got [{}]".format(xi_max))
        if not 1e-14 <= tol <= 1e-6:
            raise ConfigError("tol must lie in [1e-14, 1e-6], got [{}]".format(tol))
        eps = float(self.get("eps", 0.01))
        if not 0 < eps <= 0.1:
            raise ConfigError("eps must lie in (0, 0.1], got [{}]".format(eps))

    def _validate_spectrum(self) -> None:
        if int(self.get("count", 20)) < 1:
            raise ConfigError("count must be >= 1, got [{}]".format(self.get("count")))

    def _validate_smooth_link(self) -> None:
        for delta in self.deltas():
            self.glue_config(delta).validate()
            if self.get("h_prime_check") and abs(delta) * 9 / 8 > DELTA_MAX:
                raise ConfigError(
                    "h_prime_check steps delta [{}] outside solvable range".format(
                        delta
                    )
                )

    def _validate_log_cone(self) -> None:
        for delta in self.deltas():
            self.glue_config(delta).validate()
        self._check_positive("kappa", "lnrho_cap")

    def _validate_barriers(self) -> None:
        which = self.get("which", "X")
        if which not in ("X", "G"):
            raise ConfigError("barrier must be X or G, got [{}]".format(which))

        self._check_positive("eps", "C_f", "beta")
        self.y_profile()
        if which == "X":
            eps = float(self.get("eps", 1e-6))
            C_f = float(self.get("C_f", 10.0))
            eps0 = barrier_eps0(C_f, self.params)
            if eps > eps0:
                raise ConfigError("eps [{}] beyond eps0 [{}]".format(eps, eps0))
        elif float(self.get("delta", 0.0)) == 0:
            raise ConfigError("barrier G needs a nonzero delta")

    def _validate_three_annulus(self) -> None:
        for key in ("trials", "convexity_trials", "linf_trials"):
            if key in self and int(self.parameters[key]) < 1:
                raise ConfigError(
                    "{} must be >= 1, got [{}]".format(key, self.parameters[key])
                )
        rho0 = float(self.get("rho0", 0.25))
        if not 0 < rho0 < 1 or math.isnan(rho0):
            raise ConfigError("rho0 must lie in (0, 1), got [{}]".format(rho0))

    def _validate_report(self) -> None:
        if not self.tables():
            raise ConfigError("report needs at least one result table")


class ConfigError(Exception):
    """Run configuration rejected"""
