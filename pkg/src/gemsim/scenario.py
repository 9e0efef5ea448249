"""
Scenario files: YAML documents bundling every module's configuration.

A scenario may start with ``include: <name or path>``; the included document
is loaded first and this one is deep-merged over it.  ``key.sub=value``
overrides (values parsed as YAML) are applied last.  Names are looked up in
``$GEMSIM_SCENARIO_DIR`` and then among the bundled scenarios.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import yaml

from . import events, lock, memory, spectral
from .errors import ConfigurationError, GemsimError

SCENARIO_DIR_ENV = "GEMSIM_SCENARIO_DIR"


def _deep_merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _locate(ref: str, relative_to: Optional[Path] = None) -> Path:
    p = Path(ref)
    candidates = []
    if relative_to is not None and not p.is_absolute():
        candidates.append(relative_to / p)
    candidates.append(p)
    if p.suffix == "" and os.sep not in ref:
        env = os.environ.get(SCENARIO_DIR_ENV)
        if env:
            candidates.append(Path(env) / f"{ref}.yaml")
        candidates.append(Path(str(resources.files("gemsim") / "scenarios" / f"{ref}.yaml")))
    for c in candidates:
        if c.is_file():
            return c
    raise ConfigurationError(f"scenario {ref!r} not found")


def _read(path: Path, seen: tuple = ()) -> dict:
    if path.resolve() in seen:
        raise ConfigurationError(f"include cycle through {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must hold a mapping at the top level")
    inc = data.pop("include", None)
    if inc is None:
        return data
    base = _read(_locate(str(inc), path.parent), seen + (path.resolve(),))
    return _deep_merge(base, data)


def apply_override(data: dict, override: str) -> dict:
    """Apply ``a.b.c=value`` to a nested mapping (value parsed as YAML)."""
    if "=" not in override:
        raise ConfigurationError(f"override {override!r} is not of the form key=value")
    key, raw = override.split("=", 1)
    parts = [k for k in key.strip().split(".") if k]
    if not parts:
        raise ConfigurationError(f"override {override!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse override value {raw!r}") from exc
    out = copy.deepcopy(data)
    node = out
    for k in parts[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigurationError(f"override {override!r}: {k!r} is not a mapping")
        node = nxt
    node[parts[-1]] = value
    return out


def _floats(d: dict, *keys) -> dict:
    return {k: float(d[k]) for k in keys if k in d and d[k] is not None}


@dataclass
class Scenario:
    """Resolved scenario plus builders for each module's objects."""

    data: dict
    source_path: Optional[str] = None

    @property
    def name(self) -> str:
        return str(self.data.get("name", "unnamed"))

    def section(self, key: str) -> dict:
        sec = self.data.get(key)
        if not isinstance(sec, dict):
            raise ConfigurationError(f"scenario {self.name!r} has no {key!r} section")
        return sec

    # -- spectral ------------------------------------------------------------

    def source(self) -> spectral.SpdcCombSpec:
        s = self.section("source")
        try:
            return spectral.SpdcCombSpec(
                float(s["mode_spacing"]),
                float(s["mode_linewidth"]),
                float(s["envelope_fwhm"]),
                float(s.get("center_offset", 0.0)),
                str(s.get("envelope", "sinc2")),
            )
        except KeyError as exc:
            raise ConfigurationError(f"source section lacks {exc}") from exc

    def chain_names(self) -> list:
        return list(self.data.get("chains", {}) or {})

    def chain(self, name: str) -> spectral.FilterChain:
        chains = self.data.get("chains") or {}
        if name not in chains:
            raise ConfigurationError(f"scenario has no filter chain {name!r}")
        d = chains[name] or {}
        chain = spectral.FilterChain.from_dict({"label": d.get("label", name), "elements": d.get("elements", [])})
        if not chain.elements:
            raise ConfigurationError(f"filter chain {name!r} is empty")
        if d.get("solve_flat_to_db") is not None:
            chain = spectral.solve_flat_attenuation(chain, float(d["evaluate_at"]), float(d["solve_flat_to_db"]))
        return chain

    def evaluate_at(self, name: str) -> Optional[float]:
        d = (self.data.get("chains") or {}).get(name) or {}
        return float(d["evaluate_at"]) if d.get("evaluate_at") is not None else None

    # -- memory --------------------------------------------------------------

    def memory_config(self) -> memory.GemConfig:
        m = dict(self.section("memory"))
        kw = _floats(m, "coupling_strength", "gradient_eta", "length", "two_photon_detuning", "decoherence_rate", "dt",
                     "raman_detuning", "hyperfine_splitting")
        if "grid_z" in m:
            kw["grid_z"] = int(m["grid_z"])
        if "decoherence_exponent" in m:
            kw["decoherence_exponent"] = int(m["decoherence_exponent"])
        try:
            return memory.GemConfig(**kw)
        except TypeError as exc:
            raise ConfigurationError(f"memory section: {exc}") from exc

    def pulse(self, kind: str = "single_photon") -> memory.PulseProfile:
        p = self.section("pulse")
        key = "bandwidth_ratio" if kind == "single_photon" else "coherent_bandwidth_ratio"
        ratio = p.get(key)
        ratio = None if ratio is None else float(ratio)
        shape = p.get("shape", "rising_exponential")
        if shape == "rising_exponential":
            return memory.rising_exponential_pulse(
                float(p["duration_fwhm"]),
                float(p["cutoff_time"]),
                ratio,
                span=float(p.get("span", 10.0)),
                fall_time=None if p.get("fall_time") is None else float(p["fall_time"]),
            )
        if shape == "gaussian":
            return memory.gaussian_pulse(float(p["duration_fwhm"]), float(p["center"]), ratio)
        raise ConfigurationError(f"unknown pulse shape {shape!r}")

    def timing(self) -> memory.StorageTiming:
        t = self.section("timing")
        return memory.StorageTiming(**_floats(t, "recall_duration", "switch_duration", "echo_delay"))

    def storage_time(self) -> float:
        return float(self.section("timing").get("storage_time", memory.MIN_STORAGE_TIME))

    def storage_times(self) -> list:
        return [float(x) for x in self.section("timing").get("storage_times", [self.storage_time()])]

    def targets(self) -> list:
        return [(float(a), float(b)) for a, b in self.section("timing").get("targets", [])]

    # -- events --------------------------------------------------------------

    def sequence(self) -> events.SequenceConfig:
        s = self.section("events").get("sequence") or {}
        kw = {}
        if "stages" in s:
            kw["stages"] = tuple((lab, float(d)) for lab, d in s["stages"])
        if "period" in s:
            kw["period"] = float(s["period"])
        return events.SequenceConfig(**kw)

    def events_section(self) -> dict:
        return self.section("events")

    # -- lock ----------------------------------------------------------------

    def landscape(self) -> lock.ResonanceLandscape:
        d = self.section("lock")
        fsr = float(d.get("fsr", lock.PAIR_CAVITY_FSR))
        fin = float(d.get("finesse_red", lock.RED_FINESSE))
        lw = float(d["linewidth"]) if d.get("linewidth") is not None else fsr / fin
        return lock.ResonanceLandscape(
            float(d["peak_rate"]),
            lw,
            drift_offset=float(d.get("drift_offset", 0.0)),
            drift_rate=float(d.get("drift_rate", 0.0)),
            background_rate=float(d.get("background_rate", 0.0)),
            finesse_red=fin,
            finesse_blue=float(d.get("finesse_blue", lock.BLUE_FINESSE)),
        )

    def lock_params(self) -> lock.LockParams:
        d = self.section("lock")
        kw = _floats(d, "gain", "step_min", "step_max", "cycle_time", "initial_step", "capture_range")
        if "n_cycles" in d:
            kw["n_cycles"] = int(d["n_cycles"])
        return lock.LockParams(**kw)

    # -- whole-scenario checks -------------------------------------------------

    def validate(self) -> "Scenario":
        """Build every sub-configuration present so errors surface at load time."""
        builders = {
            "source": self.source,
            "memory": self.memory_config,
            "pulse": self.pulse,
            "timing": self.timing,
            "lock": lambda: (self.landscape(), self.lock_params()),
        }
        for key, build in builders.items():
            if key in self.data:
                try:
                    build()
                except GemsimError as exc:
                    raise ConfigurationError(f"section {key!r}: {exc}") from exc
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigurationError(f"section {key!r}: {exc!r}") from exc
        for name in self.chain_names():
            try:
                self.chain(name)
            except GemsimError as exc:
                raise ConfigurationError(f"chain {name!r}: {exc}") from exc
        if "events" in self.data:
            try:
                self.sequence()
            except GemsimError as exc:
                raise ConfigurationError(f"section 'events': {exc}") from exc
        return self


def load_scenario(ref: str = "paper", overrides: Iterable[str] = (), validate: bool = True) -> Scenario:
    """Load a scenario by bundled name, ``$GEMSIM_SCENARIO_DIR`` name or file path."""
    path = _locate(ref)
    data = _read(path)
    for ov in overrides:
        data = apply_override(data, ov)
    sc = Scenario(data, str(path))
    return sc.validate() if validate else sc
