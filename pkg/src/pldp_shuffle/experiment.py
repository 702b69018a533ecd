"""Table-1 style populations and the end-to-end bound pipeline.

Personalised epsilons are drawn with numpy's Philox counter-based generator
seeded through ``SeedSequence(seed)``; the stream depends only on the seed and
the numpy version, not on the platform.
"""
from __future__ import annotations

import configparser
import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .accountant import AmplificationInput, PrivacyBound, delta_s_curve, epsilon_s, select_worst_user
from .clone_probability import (
    CloneProbabilities, PMode, baseline_p_rr, clone_probabilities, p_neighbor, worst_case_p,
)
from .errors import ConfigError
from .mechanisms import MechanismKind, MechanismSpec, calibrate

CSV_COLUMNS = ("epsilon_s", "delta_s", "p_mode", "mechanism", "n", "seed")
DEFAULT_GRID_LO = 1e-3
DEFAULT_GRID_POINTS = 64


class LawKind(str, enum.Enum):
    UNIFORM = "uniform"
    GAUSSIAN_CLIPPED = "gaussian_clipped"
    EXPLICIT_LIST = "explicit_list"


@dataclass(frozen=True)
class EpsilonLaw:
    """Distribution of the per-user local epsilons.

    ``params`` is (lo, hi) for uniform, (mean, std) for gaussian_clipped and
    the literal values for explicit_list.  Draws outside ``clip`` are clamped
    to the nearer bound.
    """

    kind: LawKind
    params: tuple[float, ...]
    clip: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LawKind(self.kind))
        params = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", params)
        if self.kind is LawKind.EXPLICIT_LIST:
            if not params or min(params) <= 0 or not all(map(math.isfinite, params)):
                raise ConfigError("eps_law", "explicit_list entries must be positive and finite")
        elif len(params) != 2:
            raise ConfigError("eps_law", f"{self.kind.value} takes two parameters, got {len(params)}")
        elif self.kind is LawKind.UNIFORM and not params[0] <= params[1]:
            raise ConfigError("eps_law", "uniform needs lo <= hi")
        elif self.kind is LawKind.GAUSSIAN_CLIPPED and not params[1] >= 0:
            raise ConfigError("eps_law", "gaussian_clipped needs std >= 0")
        if self.clip is None:
            if self.kind is LawKind.GAUSSIAN_CLIPPED:
                raise ConfigError("clip", "gaussian_clipped needs a clip range")
            if self.kind is LawKind.UNIFORM and params[0] <= 0:
                raise ConfigError("eps_law", "uniform lo must be positive without a clip range")
        else:
            lo, hi = (float(v) for v in self.clip)
            if not 0 < lo <= hi or not math.isfinite(hi):
                raise ConfigError("clip", f"need 0 < lo <= hi, got ({lo}, {hi})")
            object.__setattr__(self, "clip", (lo, hi))

    def describe(self) -> str:
        return format_law(self)


# populations of the paper's experiments, keyed by lowercase name
PRESETS = {
    "uniform1": EpsilonLaw(LawKind.UNIFORM, (0.05, 1.0), (0.05, 1.0)),
    "gauss1": EpsilonLaw(LawKind.GAUSSIAN_CLIPPED, (0.8, 0.5), (0.05, 1.0)),
    "uniform2": EpsilonLaw(LawKind.UNIFORM, (0.5, 2.0), (0.5, 2.0)),
    "gauss2": EpsilonLaw(LawKind.GAUSSIAN_CLIPPED, (1.5, 0.5), (0.5, 2.0)),
}


@dataclass(frozen=True)
class EpsGrid:
    lo: float
    hi: float
    points: int

    def __post_init__(self):
        if not 0 < self.lo < self.hi or not math.isfinite(self.hi):
            raise ConfigError("eps_grid", f"need 0 < lo < hi, got {self.lo}:{self.hi}")
        if self.points < 2:
            raise ConfigError("eps_grid", "need at least two points")

    def values(self) -> np.ndarray:
        return np.geomspace(self.lo, self.hi, self.points)


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    law: EpsilonLaw
    mechanism: MechanismKind = MechanismKind.LAPLACE
    delta_local: float = 0.0
    p_mode: PMode = PMode.HYPOTHESIS_TEST
    seed: int = 0
    eps_grid: EpsGrid | None = None
    delta_target: float | None = None
    workers: int = 1

    def __post_init__(self):
        try:
            object.__setattr__(self, "mechanism", MechanismKind(self.mechanism))
        except ValueError:
            raise ConfigError("mechanism", f"unknown mechanism {self.mechanism!r}") from None
        try:
            object.__setattr__(self, "p_mode", PMode(self.p_mode))
        except ValueError:
            raise ConfigError("p_mode", f"unknown p-mode {self.p_mode!r}") from None
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ConfigError("n", f"must be a positive integer, got {self.n}")
        if self.law.kind is LawKind.EXPLICIT_LIST and len(self.law.params) != self.n:
            raise ConfigError("n", f"explicit_list has {len(self.law.params)} entries but n = {self.n}")
        if not 0.0 <= self.delta_local < 1.0:
            raise ConfigError("delta_local", f"must lie in [0, 1), got {self.delta_local}")
        if self.mechanism is MechanismKind.LAPLACE and self.delta_local != 0.0:
            raise ConfigError("delta_local", "the Laplace mechanism is pure DP; delta_local must be 0")
        if self.mechanism is MechanismKind.GAUSSIAN and self.delta_local == 0.0:
            raise ConfigError("delta_local", "the Gaussian mechanism needs delta_local > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if self.delta_target is not None and not 0.0 < self.delta_target <= 1.0:
            raise ConfigError("delta_target", f"must lie in (0, 1], got {self.delta_target}")
        if self.workers < 1:
            raise ConfigError("workers", "must be at least 1")

    def describe(self) -> dict[str, Any]:
        """Resolved settings as plain strings and numbers, in a fixed order."""
        return {
            "n": self.n,
            "eps_law": format_law(self.law),
            "clip": "" if self.law.clip is None else f"{_num(self.law.clip[0])}:{_num(self.law.clip[1])}",
            "mechanism": self.mechanism.value,
            "delta_local": _num(self.delta_local),
            "p_mode": self.p_mode.value,
            "seed": self.seed,
            "eps_grid": "" if self.eps_grid is None else
            f"{_num(self.eps_grid.lo)}:{_num(self.eps_grid.hi)}:{self.eps_grid.points}",
            "delta_target": "" if self.delta_target is None else _num(self.delta_target),
        }


def _num(x: float) -> str:
    return repr(float(x))


def format_law(law: EpsilonLaw) -> str:
    if law.kind is LawKind.EXPLICIT_LIST:
        return "explicit_list:" + ",".join(_num(v) for v in law.params)
    return f"{law.kind.value}:{_num(law.params[0])}:{_num(law.params[1])}"


def _floats(text: str, field_name: str, sep: str) -> list[float]:
    try:
        return [float(v) for v in text.split(sep)]
    except ValueError:
        raise ConfigError(field_name, f"cannot parse {text!r}") from None


def parse_clip(text: str) -> tuple[float, float]:
    vals = _floats(text, "clip", ":")
    if len(vals) != 2:
        raise ConfigError("clip", f"expected lo:hi, got {text!r}")
    return vals[0], vals[1]


def parse_law(text: str, clip: tuple[float, float] | None = None) -> EpsilonLaw:
    """``uniform:lo:hi``, ``gaussian_clipped:mean:std``, ``explicit_list:a,b,...``
    or a preset name (uniform1, gauss1, uniform2, gauss2).

    An explicit ``clip`` replaces the preset's clip range.
    """
    text = text.strip()
    preset = PRESETS.get(text.lower())
    if preset is not None:
        return preset if clip is None else replace(preset, clip=clip)
    head, _, rest = text.partition(":")
    head = {"list": "explicit_list", "gaussian": "gaussian_clipped"}.get(head, head)
    try:
        kind = LawKind(head)
    except ValueError:
        raise ConfigError("eps_law", f"unknown law {head!r}") from None
    if kind is LawKind.EXPLICIT_LIST:
        return EpsilonLaw(kind, tuple(_floats(rest, "eps_law", ",")), clip)
    return EpsilonLaw(kind, tuple(_floats(rest, "eps_law", ":")), clip)


def parse_grid(text: str) -> EpsGrid:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError("eps_grid", f"expected lo:hi:points, got {text!r}")
    lo, hi = _floats(":".join(parts[:2]), "eps_grid", ":")
    try:
        points = int(parts[2])
    except ValueError:
        raise ConfigError("eps_grid", f"points must be an integer, got {parts[2]!r}") from None
    return EpsGrid(lo, hi, points)


CONFIG_KEYS = ("n", "eps_law", "clip", "mechanism", "delta_local", "p_mode", "seed",
               "eps_grid", "delta_target", "workers")


def read_config_file(path: str | Path) -> dict[str, str]:
    """Raw key/value pairs from the ``[experiment]`` section of an INI file."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    if not parser.has_section("experiment"):
        raise ConfigError("config", f"{path} has no [experiment] section")
    values = dict(parser.items("experiment"))
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    return values


def build_config(values: dict[str, Any]) -> ExperimentConfig:
    """ExperimentConfig from string-valued settings (file keys or CLI flags)."""
    def get(key, conv, default=None):
        raw = values.get(key)
        if raw is None or raw == "":
            return default
        try:
            return conv(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError):
            raise ConfigError(key, f"cannot parse {raw!r}") from None

    if values.get("eps_law") in (None, ""):
        raise ConfigError("eps_law", "an epsilon law is required")
    if values.get("n") in (None, ""):
        raise ConfigError("n", "a population size is required")
    clip = get("clip", parse_clip)
    return ExperimentConfig(
        n=get("n", _int),
        law=parse_law(str(values["eps_law"]), clip),
        mechanism=get("mechanism", str, MechanismKind.LAPLACE.value),
        delta_local=get("delta_local", float, 0.0),
        p_mode=get("p_mode", str, PMode.HYPOTHESIS_TEST.value),
        seed=get("seed", _int, 0),
        eps_grid=get("eps_grid", parse_grid),
        delta_target=get("delta_target", float),
        workers=get("workers", _int, 1),
    )


def _int(raw) -> int:
    value = float(raw) if isinstance(raw, str) and ("e" in raw.lower() or "." in raw) else raw
    out = int(value)
    if out != float(value):
        raise ValueError(raw)
    return out


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def sample_epsilons(config: ExperimentConfig) -> np.ndarray:
    law = config.law
    if law.kind is LawKind.EXPLICIT_LIST:
        eps = np.array(law.params, dtype=float)
    else:
        rng = make_rng(config.seed)
        a, b = law.params
        if law.kind is LawKind.UNIFORM:
            eps = rng.uniform(a, b, config.n)
        else:
            eps = rng.normal(a, b, config.n)
    if law.clip is not None:
        eps = np.clip(eps, *law.clip)
    return eps


@dataclass(frozen=True)
class Population:
    """A sampled population after the worst-case user has been picked."""

    epsilons: np.ndarray
    worst_index: int
    epsilon1: float
    delta1: float
    probs: CloneProbabilities
    inp: AmplificationInput = field(repr=False)


def build_population(config: ExperimentConfig) -> Population:
    eps = sample_epsilons(config)
    specs = [MechanismSpec(config.mechanism, float(e), config.delta_local) for e in eps]
    k, e1, d1 = select_worst_user(specs)
    mechs = [calibrate(s) for s in _unique(specs)]
    lookup = {m.spec: m for m in mechs}
    probs = clone_probabilities([lookup[s] for s in specs], k, config.p_mode,
                                workers=config.workers)
    inp = AmplificationInput.from_clone_probabilities(probs, d1, e1)
    return Population(eps, k, e1, d1, probs, inp)


def _unique(items):
    return list(dict.fromkeys(items))


@dataclass(frozen=True)
class Table:
    rows: list[dict[str, Any]]
    columns: tuple[str, ...] = CSV_COLUMNS
    metadata: dict[str, Any] = field(default_factory=dict)


def _metadata(config: ExperimentConfig, pop: Population) -> dict[str, Any]:
    meta = config.describe()
    meta.update(
        worst_index=pop.worst_index,
        epsilon1=_num(pop.epsilon1),
        delta1=_num(pop.delta1),
        p1=_num(pop.probs.p1),
    )
    return meta


def _row(config: ExperimentConfig, bound: PrivacyBound) -> dict[str, Any]:
    return {
        "epsilon_s": float(bound.epsilon),
        "delta_s": float(bound.delta),
        "p_mode": config.p_mode.value,
        "mechanism": config.mechanism.value,
        "n": config.n,
        "seed": config.seed,
    }


def run_bound_curve(config: ExperimentConfig, population: Population | None = None) -> Table:
    """delta_s over the epsilon grid (default: 64 log-spaced points up to eps1)."""
    pop = population or build_population(config)
    grid = config.eps_grid or EpsGrid(min(DEFAULT_GRID_LO, pop.epsilon1 / 2), pop.epsilon1,
                                      DEFAULT_GRID_POINTS)
    bounds = delta_s_curve(pop.inp, grid.values(), workers=config.workers)
    meta = _metadata(config, pop)
    if config.eps_grid is None:
        meta["eps_grid"] = f"{_num(grid.lo)}:{_num(grid.hi)}:{grid.points}"
    return Table([_row(config, b) for b in bounds], CSV_COLUMNS, meta)


@dataclass(frozen=True)
class InverseResult:
    bound: PrivacyBound
    max_epsilon: float
    table: Table

    @property
    def ratio(self) -> float:
        return self.bound.epsilon / self.max_epsilon


def run_inverse(config: ExperimentConfig, population: Population | None = None) -> InverseResult:
    if config.delta_target is None:
        raise ConfigError("delta_target", "the inverse solve needs a delta target")
    pop = population or build_population(config)
    bound = epsilon_s(pop.inp, config.delta_target, eps_hi=pop.epsilon1)
    max_eps = float(np.max(pop.epsilons))
    meta = _metadata(config, pop)
    meta.update(amplified=str(bound.amplified).lower(),
                amplification_ratio=_num(bound.epsilon / max_eps))
    return InverseResult(bound, max_eps, Table([_row(config, bound)], CSV_COLUMNS, meta))


CLONE_COLUMNS = ("epsilon_i", "p_i", "p_rr", "epsilon1", "mechanism")


def run_clone_profile(
    mechanism: MechanismKind | str, epsilon1: float, eps_values: Sequence[float],
    delta_local: float = 0.0,
) -> Table:
    """Worst-case clone probability of a user with each epsilon_i against a fixed
    worst-case user, next to the randomized-response reduction."""
    mechanism = MechanismKind(mechanism)
    mech1 = calibrate(MechanismSpec(mechanism, epsilon1, delta_local))
    rows = []
    for e in eps_values:
        mech_i = calibrate(MechanismSpec(mechanism, float(e), delta_local))
        rows.append({
            "epsilon_i": float(e),
            "p_i": float(worst_case_p(mech_i, mech1)),
            "p_rr": float(baseline_p_rr(float(e))),
            "epsilon1": float(epsilon1),
            "mechanism": mechanism.value,
        })
    meta = {"mechanism": mechanism.value, "epsilon1": _num(epsilon1),
            "delta_local": _num(delta_local), "p1": _num(p_neighbor(mech1))}
    return Table(rows, CLONE_COLUMNS, meta)


def _format_cell(value: Any) -> str:
    if isinstance(value, float):
        return format(value, ".16e")
    return str(value)


def render(table: Table, fmt: str = "csv") -> str:
    """Serialise a table.  CSV carries the metadata as leading ``#`` lines."""
    if not table.rows:
        raise ValueError("refusing to emit an empty table")
    if fmt == "csv":
        lines = [f"# {k}={v}" for k, v in table.metadata.items()]
        lines.append(",".join(table.columns))
        lines.extend(",".join(_format_cell(r[c]) for c in table.columns) for r in table.rows)
        return "\n".join(lines) + "\n"
    if fmt == "json":
        rows = [{c: r[c] for c in table.columns} for r in table.rows]
        return json.dumps(rows, indent=1, allow_nan=False) + "\n"
    raise ConfigError("format", f"unknown output format {fmt!r}")


def render_metadata(table: Table) -> str:
    return json.dumps(table.metadata, indent=1, sort_keys=False) + "\n"


def emit(table: Table, fmt: str = "csv", path: str | Path | None = None) -> str:
    """Write the table to ``path`` (or return it when ``path`` is None).

    A JSON array has no room for metadata, so with a path it goes to a
    ``<path>.meta.json`` sidecar.
    """
    text = render(table, fmt)
    if path is not None:
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        if fmt == "json" and table.metadata:
            with open(f"{path}.meta.json", "w", encoding="utf-8", newline="\n") as fh:
                fh.write(render_metadata(table))
    return text


def parse_csv(text: str) -> list[dict[str, Any]]:
    """Inverse of the CSV rendering (metadata lines are skipped)."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    out = []
    for ln in lines[1:]:
        row = {}
        for key, cell in zip(header, ln.split(",")):
            if key in ("n", "seed"):
                row[key] = int(cell)
            elif key in ("epsilon_s", "delta_s", "epsilon_i", "p_i", "p_rr", "epsilon1"):
                row[key] = float(cell)
            else:
                row[key] = cell
        out.append(row)
    return out
