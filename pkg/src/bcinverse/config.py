"""Experiment configuration files (INI format).

Example::

    [domain]
    kind = interval
    length = 1
    resolution = 400

    [speed]
    profile = constant
    value = 1

    [time]
    T = 1

    [tau]
    values = 0.3, 0.4

All sections except ``[domain]`` are optional.  Relative file paths are
resolved against the directory of the configuration file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError
from .forward import (ReplayDevice, SimulatedDevice, SolverSettings, SpaceTimeField,
                      bandlimited_source, pulse_source, read_trace_csv)
from .geometry import DomainSpec, SpeedField, load_speed_csv
from .influence import BoundarySubset, as_profile
from .minimize import DEFAULT_SCHEDULE

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _floats(text) -> List[float]:
    parts = [p for p in str(text).replace(";", ",").split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigurationError(f"expected a comma-separated list of numbers, got {text!r}")


@dataclass
class ExperimentConfig:
    """Parsed experiment settings; ``raw`` keeps every section for report echoes."""

    domain: DomainSpec
    speed: Dict[str, str]
    T: float
    cfl: Optional[float]
    dt: Optional[float]
    gamma: Optional[Tuple[int, ...]]
    tau: Dict[str, str]
    source: Dict[str, str]
    schedule: Tuple[float, ...]
    cg_tol: float
    cg_max_iters: int
    noise_level: float
    seed: int
    oracle: str
    reconstruct: Dict[str, str]
    output: Path
    verification: bool
    device: Dict[str, str]
    tolerances: Dict[str, float]
    base_dir: Path
    raw: Dict[str, Dict[str, str]] = field(default_factory=dict)

    # -- construction -------------------------------------------------
    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"configuration file {path} not found")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        return cls.from_parser(parser, path.parent)

    @classmethod
    def from_string(cls, text, base_dir=".") -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(str(exc)) from None
        return cls.from_parser(parser, Path(base_dir))

    @classmethod
    def from_parser(cls, parser, base_dir: Path) -> "ExperimentConfig":
        raw = {s: dict(parser[s]) for s in parser.sections()}
        sec = lambda name: raw.get(name, {})

        def num(section, key, default, kind=float):
            text = sec(section).get(key)
            if text is None:
                return default
            try:
                return kind(text)
            except ValueError:
                raise ConfigurationError(f"[{section}] {key}: cannot parse {text!r}") from None

        if "domain" not in raw:
            raise ConfigurationError("missing [domain] section")
        kind = sec("domain").get("kind", "interval")
        br = sec("domain").get("boundary_resolution")
        domain = DomainSpec(
            kind,
            length=num("domain", "length", 1.0),
            width=num("domain", "width", 1.0),
            height=num("domain", "height", 1.0),
            radius=num("domain", "radius", 1.0),
            resolution=num("domain", "resolution", 100.0),
            boundary_resolution=int(br) if br else None,
        )
        T = num("time", "T", 1.0)
        if not T > 0:
            raise ConfigurationError("[time] T must be positive")
        schedule = tuple(_floats(sec("minimize").get("schedule", ""))) or DEFAULT_SCHEDULE
        if any(a <= 0 for a in schedule) or any(b >= a for a, b in zip(schedule, schedule[1:])):
            raise ConfigurationError("[minimize] schedule must be positive and strictly decreasing")
        gamma_text = sec("boundary").get("gamma", "all").strip()
        gamma = None if gamma_text in ("", "all") else tuple(int(v) for v in _floats(gamma_text))
        oracle = sec("oracle").get("backend", "geometric")
        if oracle not in ("geometric", "pde", "none"):
            raise ConfigurationError("[oracle] backend must be geometric, pde or none")
        verification = sec("verification").get("enabled", "on").strip().lower()
        if verification not in _BOOL:
            raise ConfigurationError("[verification] enabled must be on or off")
        tolerances = {k[:-4]: float(v) for k, v in sec("verification").items() if k.endswith("_tol")}
        cfg = cls(
            domain=domain,
            speed=sec("speed"),
            T=T,
            cfl=num("time", "cfl", None),
            dt=num("time", "dt", None),
            gamma=gamma,
            tau=sec("tau"),
            source=sec("source"),
            schedule=schedule,
            cg_tol=num("minimize", "tol", 1e-8),
            cg_max_iters=num("minimize", "max_iters", 500, int),
            noise_level=num("noise", "level", 0.0),
            seed=num("noise", "seed", 0, int),
            oracle=oracle,
            reconstruct=sec("reconstruct"),
            output=Path(sec("output").get("dir", "out")),
            verification=_BOOL[verification],
            device=sec("device"),
            tolerances=tolerances,
            base_dir=base_dir,
            raw=raw,
        )
        cfg._check_files()
        return cfg

    def _resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def _check_files(self):
        for section, key in (("speed", "file"), ("tau", "file"), ("source", "file"),
                             ("device", "replay_dir")):
            value = getattr(self, section).get(key)
            if value and not self._resolve(value).exists():
                raise ConfigurationError(f"[{section}] {key}: {value} does not exist")

    # -- builders -----------------------------------------------------
    def build_speed(self) -> SpeedField:
        s = self.speed
        profile = s.get("profile", "constant")
        try:
            if profile == "constant":
                return SpeedField.constant(self.domain, float(s.get("value", 1.0)))
            if profile == "linear":
                grad = _floats(s.get("gradient", "1"))
                return SpeedField.linear(self.domain, float(s.get("c0", 1.0)), grad)
            if profile in ("smooth-bump", "smooth_bump"):
                return SpeedField.smooth_bump(self.domain, float(s.get("c0", 1.0)),
                                              float(s.get("amplitude", 0.2)))
            if profile == "sampled":
                if "file" not in s:
                    raise ConfigurationError("[speed] sampled profile needs a file")
                return load_speed_csv(self._resolve(s["file"]), self.domain)
        except ValueError as exc:
            raise ConfigurationError(f"[speed] {exc}") from None
        raise ConfigurationError(f"[speed] unknown profile {profile!r}")

    def build_settings(self, c: SpeedField) -> SolverSettings:
        if self.dt is not None:
            return SolverSettings.from_dt(c, self.T, self.dt)
        return SolverSettings.from_cfl(c, self.T, self.cfl)

    def build_gamma(self, c: SpeedField) -> BoundarySubset:
        return BoundarySubset.of(c, self.gamma)

    def build_tau(self, c: SpeedField) -> np.ndarray:
        t = self.tau
        nb = c.boundary.size
        if "file" in t:
            vals = np.loadtxt(self._resolve(t["file"]), delimiter=",", ndmin=1)
            return as_profile(vals.ravel(), nb)
        if "values" in t:
            vals = _floats(t["values"])
            return as_profile(vals[0] if len(vals) == 1 else vals, nb)
        if "value" in t:
            return as_profile(float(t["value"]), nb)
        return as_profile(self.T, nb)

    def build_device(self, c: SpeedField, settings: SolverSettings, verification=None):
        d = self.device
        verification = self.verification if verification is None else verification
        if d.get("replay_dir"):
            weights = c.boundary.weights * c.boundary_density
            return ReplayDevice(self._resolve(d["replay_dir"]), settings.n_steps,
                                c.boundary.size, settings.dt, weights,
                                self.noise_level, self.seed)
        record = d.get("record_dir")
        return SimulatedDevice(c, settings, self.noise_level, self.seed,
                               method=d.get("method", "timestep"),
                               verification=verification,
                               record_dir=self._resolve(record) if record else None)

    def build_source(self, c: SpeedField, settings: SolverSettings) -> SpaceTimeField:
        s = self.source
        nb = c.boundary.size
        if "file" in s:
            f = read_trace_csv(self._resolve(s["file"]))
        else:
            kind = s.get("kind", "zero")
            if kind == "zero":
                f = settings.zeros(nb)
            elif kind == "pulse":
                f = pulse_source(settings.n_steps, nb, settings.dt,
                                 float(s.get("duration", 0.1)), int(s.get("node", 0)),
                                 float(s.get("amplitude", 1.0)))
            elif kind == "bandlimited":
                rng = np.random.default_rng(self.seed)
                f = bandlimited_source(settings.n_steps, nb, settings.dt, rng,
                                       int(s.get("modes", 8)))
            else:
                raise ConfigurationError(f"[source] unknown kind {kind!r}")
        if f.values.shape != (settings.n_steps + 1, nb):
            raise ConfigurationError(
                f"[source] has shape {f.values.shape}, the solver grid needs "
                f"({settings.n_steps + 1}, {nb})")
        if s.get("boundary_operator", "weighted") == "plain":
            # plain normal derivative data -> weighted boundary operator
            f = f.like(f.values * c.boundary_speed[None, :] ** (c.dim - 1))
        return SpaceTimeField(f.values, settings.dt)

    def seeds(self, c: SpeedField, horizon: float) -> List[np.ndarray]:
        r = self.reconstruct
        nb = c.boundary.size
        if "seeds" in r:
            out = [as_profile(_floats(p)[0] if len(_floats(p)) == 1 else _floats(p), nb)
                   for p in r["seeds"].split("|") if p.strip()]
        else:
            count = int(r.get("count", 9))
            if nb != 2:
                raise ConfigurationError("[reconstruct] give explicit seeds for 2-D domains")
            out = [np.array([a * horizon, 0.0]) for a in np.arange(1, count + 1) / (count + 1)]
        if not out:
            raise ConfigurationError("[reconstruct] seed list is empty")
        return out

    def echo(self) -> Dict[str, Dict[str, str]]:
        """Configuration as given, with seed and verification overrides applied."""
        out = {k: dict(v) for k, v in sorted(self.raw.items())}
        out.setdefault("noise", {})["seed"] = str(self.seed)
        out.setdefault("verification", {})["enabled"] = "on" if self.verification else "off"
        return out
