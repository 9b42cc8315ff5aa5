"""Run configuration: bracketed-section ``key = value`` text."""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any

from .errors import ConfigError, RegimeError
from .rng import derive_seeds

EXPERIMENTS = (
    "covariance",
    "ehm",
    "projection",
    "goodsquares",
    "doubling",
    "surjectivity",
    "localtime-x",
    "localtime-fiber",
    "lemma1",
    "visits",
    "davis",
    "gamma",
    "cubecover",
)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _vectors(text: str) -> tuple[tuple[float, ...], ...]:
    return tuple(_floats(part) for part in text.split(";") if part.strip())


def _level_range(text: str) -> tuple[int, ...]:
    # "6-10" or "6 7 8"
    if "-" in text and "," not in text and " " not in text.strip():
        a, b = text.split("-")
        return tuple(range(int(a), int(b) + 1))
    return _ints(text)


# key -> (suggested section, parser); sections only group keys
KEYS: dict[str, tuple[str, Any]] = {
    "experiment": ("run", str),
    "out": ("run", str),
    "threads": ("run", int),
    "N": ("sheet", int),
    "d": ("sheet", int),
    "rank": ("sheet", int),
    "level": ("sheet", int),
    "levels": ("sheet", _level_range),
    "net_level": ("sheet", int),
    "window": ("sheet", _floats),
    "seeds": ("seeds", _ints),
    "seed_count": ("seeds", int),
    "master_seed": ("seeds", int),
    "c": ("thresholds", float),
    "eps": ("thresholds", float),
    "alpha": ("thresholds", float),
    "tol": ("thresholds", float),
    "fit_window": ("fit", _ints),
    "r": ("excursion", float),
    "R": ("excursion", float),
    "a": ("excursion", _floats),
    "replicas": ("excursion", int),
    "dt": ("excursion", float),
    "K_max": ("excursion", int),
    "b": ("gamma", _vectors),
    "targets": ("targets", int),
    "target_range": ("targets", _floats),
    "set": ("doubling", str),
    "pairs": ("covariance", _vectors),
}

# defaults reproduce the reference runs of each experiment
DEFAULTS: dict[str, dict[str, Any]] = {
    "covariance": {"N": 2, "d": 1, "level": 6, "seed_count": 20000, "tol": 5.0,
                   "pairs": ((0.5, 0.5, 1.0, 1.0), (1.0, 2.0, 2.0, 1.0), (0.25, 1.5, 1.5, 0.25),
                             (2.0, 2.0, 2.0, 2.0), (0.75, 1.25, 1.0, 0.5))},
    "ehm": {"N": 2, "d": 1, "level": 11, "seed_count": 10, "tol": 0.15},
    "projection": {"N": 2, "d": 2, "rank": 1, "level": 11, "net_level": 3, "seed_count": 10, "tol": 0.2},
    "goodsquares": {"N": 2, "d": 2, "levels": (6, 7, 8, 9, 10), "seed_count": 10, "window": (1.0, 1.0, 2.0, 2.0)},
    "doubling": {"N": 1, "d": 3, "level": 20, "seed_count": 5, "set": "interval", "tol": 0.2},
    "surjectivity": {"N": 2, "d": 1, "rank": 1, "level": 12, "seed_count": 1, "window": (0.0, 0.0, 4.0, 4.0),
                     "targets": 256, "target_range": (1.0, 2.0), "tol": 0.99},
    "localtime-x": {"N": 2, "d": 1, "rank": 1, "level": 11, "seed_count": 200, "alpha": 0.2,
                    "window": (0.25, 0.25, 2.0, 2.0)},
    "localtime-fiber": {"N": 2, "d": 1, "rank": 1, "level": 11, "seed_count": 200, "alpha": 0.1,
                        "levels": (4, 5, 6, 7, 8), "window": (0.25, 0.25, 2.0, 2.0)},
    "lemma1": {"levels": (6, 8, 10), "R": 2.0, "a": (0.0, 0.0), "replicas": 10000, "seed_count": 1},
    "visits": {"N": 2, "d": 2, "levels": (6, 7, 8, 9, 10), "net_level": 3, "R": 2.0, "c": 1.0, "seed_count": 3,
               "window": (1.0, 1.0, 2.0, 2.0)},
    "davis": {"r": 1.0, "R": 4.0, "a": (2.0,), "replicas": 100000, "dt": 1e-4, "seed_count": 1, "tol": 0.01},
    "gamma": {"b": ((0.0, 0.0), (0.5, 0.5), (0.3, 0.4)), "tol": 1e-6, "seed_count": 1},
    "cubecover": {"N": 2, "d": 2, "rank": 1, "levels": (8, 9, 10, 11, 12), "seed_count": 5, "tol": 0.2,
                  "window": (1.0, 1.0, 2.0, 2.0)},
}


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seeds: tuple[int, ...]
    master_seed: int | None = None
    N: int | None = None
    d: int | None = None
    rank: int | None = None
    level: int | None = None
    levels: tuple[int, ...] | None = None
    net_level: int | None = None
    window: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    c: float | None = None
    eps: float | None = None
    alpha: float | None = None
    tol: float | None = None
    fit_window: tuple[int, int] | None = None
    r: float | None = None
    R: float | None = None
    a: tuple[float, ...] | None = None
    replicas: int | None = None
    dt: float | None = None
    K_max: int | None = None
    b: tuple[tuple[float, ...], ...] | None = None
    targets: int | None = None
    target_range: tuple[float, ...] | None = None
    set: str | None = None
    pairs: tuple[tuple[float, ...], ...] | None = None
    out: str | None = None
    threads: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def corank(self) -> int | None:
        return None if self.N is None or self.rank is None else self.N - self.rank

    def echo(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if v is not None and k != "extra"}
        if len(self.seeds) > 64:
            out["seeds"] = {"count": len(self.seeds), "master_seed": self.master_seed, "first": list(self.seeds[:4])}
        return out

    def with_seeds(self, seeds) -> "RunConfig":
        return replace(self, seeds=tuple(int(s) for s in seeds), master_seed=None)


def _window(vals: tuple[float, ...]):
    if len(vals) % 2:
        raise ConfigError("window needs as many upper as lower coordinates")
    h = len(vals) // 2
    return tuple(vals[:h]), tuple(vals[h:])


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a run configuration.

    Sections only group keys. Unknown or repeated keys and regime violations
    raise before anything is simulated. ``overrides`` (already typed) take
    precedence over the text.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    raw: dict[str, Any] = {}
    for sec in cp.sections():
        for key, val in cp.items(sec):
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            if key in raw:
                raise ConfigError(f"key {key!r} given twice")
            conv = KEYS[key][1]
            try:
                raw[key] = conv(val)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {val!r}") from exc
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    name = raw.pop("experiment", None)
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}; got {name!r}")
    params = {**DEFAULTS[name], **raw}
    seed_count = params.pop("seed_count", None)
    master = params.pop("master_seed", 0)
    if "seeds" in raw:
        seeds = tuple(params.pop("seeds"))
        master = None
    else:
        params.pop("seeds", None)
        seeds = tuple(derive_seeds(master, int(seed_count or 1)))
    if not seeds:
        raise ConfigError("seed list is empty")
    if "window" in params and params["window"] is not None:
        params["window"] = _window(params["window"])
    if "fit_window" in params:
        fw = params["fit_window"]
        if len(fw) != 2 or fw[0] >= fw[1]:
            raise ConfigError("fit_window needs two increasing levels")
    cfg = RunConfig(experiment=name, seeds=seeds, master_seed=master, **params)
    check_regime(cfg)
    return cfg


def check_regime(cfg: RunConfig) -> None:
    """Reject parameter choices outside the regime of the chosen harness."""
    e, N, d, rank = cfg.experiment, cfg.N, cfg.d, cfg.rank
    if N is not None and (N < 1 or (d is not None and d < 1)):
        raise ConfigError("N and d must be positive")
    needs_zeros = e in ("ehm", "projection", "goodsquares", "surjectivity", "visits")
    if needs_zeros and N <= d / 2:
        raise RegimeError(f"N = {N} <= d/2 = {d / 2}: this case is excluded, the zero set is almost surely empty")
    if e == "projection":
        if rank is None or not (N - d / 2 <= rank < N):
            raise RegimeError(f"projection invariance needs N - d/2 <= N' < N (N={N}, d={d}, N'={rank})")
        if N != 2:
            raise ConfigError("the projection harness runs on N = 2")
    if e == "surjectivity":
        if rank is None or not (1 <= rank < N - d / 2):
            raise RegimeError(f"surjectivity needs 1 <= N' < N - d/2 (N={N}, d={d}, N'={rank})")
    if e in ("localtime-x", "localtime-fiber"):
        if rank is None or not (1 <= rank < N) or N - rank <= d / 2:
            raise RegimeError(f"local-time continuity needs N'' = N - N' > d/2 (N={N}, d={d}, N'={rank})")
    if e in ("goodsquares", "visits") and N != 2:
        raise ConfigError(f"{e} runs on N = 2")
    if e == "doubling":
        if N != 1:
            raise ConfigError("the doubling harness runs on N = 1 paths")
        if cfg.set not in ("interval", "cantor"):
            raise ConfigError("set must be 'interval' or 'cantor'")
    if e == "cubecover" and rank is not None and N - rank > d / 2:
        raise RegimeError(f"cube covering needs N'' = N - N' <= d/2 (N={N}, d={d}, N'={rank})")
    if e == "davis":
        a = math.hypot(*cfg.a)
        if not (0 < cfg.r < a < cfg.R):
            raise RegimeError(f"the exit experiment needs 0 < r < |a| < R (r={cfg.r}, |a|={a}, R={cfg.R})")
    if e == "lemma1":
        a = math.hypot(*cfg.a)
        for n in cfg.levels:
            if not a + 2.0 ** (-n / 2) < cfg.R:
                raise RegimeError(f"the tail check needs |a| + 2^(-n/2) < R at n = {n}")
    if e == "gamma":
        for b in cfg.b:
            if any(v >= 1 for v in b):
                raise RegimeError(f"every b_j must be < 1, got {b}")
