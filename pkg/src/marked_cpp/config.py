"""Experiment configuration: parsing, validation, and seed-stream plumbing.

The on-disk format is INI-style nested key/value text (configparser).  A
config parses to a frozen ExperimentConfig; serializing and re-parsing is
the identity, which is what lets every run drop a resolved snapshot next to
its outputs and be rerun bit-exactly later.
"""

from __future__ import annotations

import configparser
import io
import zlib
from dataclasses import dataclass

import numpy as np

from .levy import (
    ConstantMutation,
    LinearCappedMutation,
    RescalingScheme,
    ZeroMutation,
    brownian_model,
    critical_exponential_base,
    rescale,
    stable_model,
    truncated_stable_base,
)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


#: named d_n rules; each maps (n, alpha) -> d_n
D_N_RULES = {
    "n^2/2": lambda n, alpha: n * n / 2.0,
    "n^alpha": lambda n, alpha: float(n) ** alpha,
}

FAMILIES = ("critical-exponential", "truncated-stable", "brownian", "stable")
MUTATION_REGIMES = ("none", "constant", "linear-capped")
FORMATS = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    family: str = "critical-exponential"
    alpha: float = 1.5
    b: float = 1.0
    mutation: str = "none"
    beta: float = 0.0
    kappa: float = 0.0
    # rescaling
    n_list: tuple = (100,)
    d_n_rule: str = "n^2/2"
    # genealogy
    tau: float = 1.0
    eps: float = 0.1
    i_n: int = None
    replicas: int = 1
    # rng
    master_seed: int = 0
    # output
    directory: str = "out"
    formats: tuple = ("csv", "json")

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}")
        if self.mutation not in MUTATION_REGIMES:
            raise ConfigError(f"unknown mutation regime {self.mutation!r}")
        if self.d_n_rule not in D_N_RULES:
            raise ConfigError(f"unknown d_n rule {self.d_n_rule!r}; "
                              f"known: {sorted(D_N_RULES)}")
        if not (0.0 < self.eps < self.tau):
            raise ConfigError("need 0 < eps < tau (a zero depth floor is "
                              "refused: the limit intensity may be infinite)")
        if not self.n_list or any(n < 1 for n in self.n_list):
            raise ConfigError("n_list must hold positive integers")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.i_n is not None and self.i_n < 1:
            raise ConfigError("i_n must be >= 1 when given")
        if not (1.0 < self.alpha < 2.0):
            raise ConfigError("alpha must lie in (1, 2)")
        if self.b <= 0:
            raise ConfigError("b must be positive")
        if self.beta < 0 or self.kappa < 0:
            raise ConfigError("beta and kappa must be nonnegative")
        for f in self.formats:
            if f not in FORMATS:
                raise ConfigError(f"unknown output format {f!r}")
        for n in self.n_list:
            if self.d_n(n) <= n:
                raise ConfigError(f"d_n rule gives d_n <= n at n={n}; the "
                                  "rescaling needs d_n/n > 1")

    # -- derived quantities ------------------------------------------------

    def d_n(self, n):
        return D_N_RULES[self.d_n_rule](n, self.alpha)

    def scheme(self, n):
        return RescalingScheme(n=n, d_n=self.d_n(n))

    @property
    def is_limit_family(self):
        return self.family in ("brownian", "stable")

    @property
    def theta(self):
        """Marked ladder-event rate of the limit process."""
        if self.mutation == "constant":
            return self.beta * self.b ** 2 / 2.0
        return 0.0

    def base_mutation(self, n=None):
        """Pre-rescaling mark-probability function at level n."""
        if self.mutation == "none":
            return ZeroMutation()
        if self.mutation == "linear-capped":
            return LinearCappedMutation(self.kappa)
        if n is None:
            raise ConfigError("constant mutation needs a level n")
        theta_n = self.theta * n / self.d_n(n)
        return ConstantMutation(theta_n)

    def base_model(self, n=None):
        if self.is_limit_family:
            raise ConfigError(f"{self.family!r} has no pre-limit base model")
        mut = self.base_mutation(n)
        if self.family == "critical-exponential":
            return critical_exponential_base(mutation=mut)
        return truncated_stable_base(self.alpha, mutation=mut)

    def rescaled_model(self, n):
        return rescale(self.base_model(n), self.scheme(n))

    def limit_model(self):
        if self.family == "brownian":
            return brownian_model(b=self.b)
        if self.family == "stable":
            return stable_model(self.alpha)
        raise ConfigError(f"{self.family!r} is not a limit family; "
                          "use `brownian` or `stable`")


# ---------------------------------------------------------------------------
# parse / serialize
# ---------------------------------------------------------------------------

_SECTIONS = {
    "model": ("family", "alpha", "b", "mutation", "beta", "kappa"),
    "rescaling": ("n_list", "d_n_rule"),
    "genealogy": ("tau", "eps", "i_n", "replicas"),
    "rng": ("master_seed",),
    "output": ("directory", "formats"),
}

def _coerce(key, raw):
    raw = raw.strip()
    if key == "n_list":
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    if key == "formats":
        return tuple(tok.strip() for tok in raw.split(",") if tok.strip())
    if key == "i_n":
        return None if raw.lower() in ("", "none", "auto") else int(raw)
    if key in ("replicas", "master_seed"):
        return int(raw)
    if key in ("alpha", "b", "beta", "kappa", "tau", "eps"):
        return float(raw)
    return raw


def parse_config(source):
    """Build an ExperimentConfig from INI text, a file object, or a path."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        if hasattr(source, "read"):
            cp.read_file(source)
        elif "\n" in source or "[" in source:
            cp.read_string(source)
        else:
            with open(source) as fh:
                cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}")

    kwargs = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                kwargs[key] = _coerce(key, raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}")
    return ExperimentConfig(**kwargs)


def serialize_config(cfg):
    """Canonical INI text; parse(serialize(cfg)) == cfg."""
    cp = configparser.ConfigParser(interpolation=None)
    values = {
        "family": cfg.family, "alpha": cfg.alpha, "b": cfg.b,
        "mutation": cfg.mutation, "beta": cfg.beta, "kappa": cfg.kappa,
        "n_list": ", ".join(str(n) for n in cfg.n_list),
        "d_n_rule": cfg.d_n_rule,
        "tau": cfg.tau, "eps": cfg.eps,
        "i_n": "auto" if cfg.i_n is None else cfg.i_n,
        "replicas": cfg.replicas,
        "master_seed": cfg.master_seed,
        "directory": cfg.directory,
        "formats": ", ".join(cfg.formats),
    }
    for section, keys in _SECTIONS.items():
        cp[section] = {k: str(values[k]) for k in keys}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# seed streams
# ---------------------------------------------------------------------------

def stream_name(*labels):
    return "/".join(str(x) for x in labels)


def seed_stream(master_seed, *labels):
    """Independent named generator derived from the master seed.

    The stream key hashes each label; distinct label tuples give distinct,
    reproducible streams regardless of creation order.
    """
    key = [zlib.crc32(str(x).encode()) for x in labels]
    return np.random.default_rng(np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=tuple(key)))
