"""Flat ``key = value`` experiment files (INI sections) to and from ExperimentConfig."""

from __future__ import annotations

import configparser
import dataclasses
import io
from importlib import resources
from pathlib import Path

from .engine import AdaptiveRri, ExperimentConfig, SpsParams
from .grid import GridConfig
from .scenario import ChannelModel, TrafficModel, WinnerB1Los

# section name -> (dataclass, attribute path on ExperimentConfig)
SECTIONS = {
    "grid": (GridConfig, ("grid",)),
    "traffic": (TrafficModel, ("traffic",)),
    "channel": (ChannelModel, ("channel",)),
    "pathloss": (WinnerB1Los, ("channel", "pathloss")),
    "adaptive": (AdaptiveRri, ("adaptive",)),
    "sps": (SpsParams, ("sps",)),
}
TOP = "experiment"
PRESETS = ("mac", "freeway")


def _parse(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, tuple):
        items = [s for s in text.replace(",", " ").split() if s]
        kind = type(default[0]) if default else float
        return tuple(kind(float(s)) if kind is int else kind(s) for s in items)
    if default is None:
        return None if text.lower() in ("", "none") else int(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value)


def _defaults(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def _typed_defaults(cls, hints: dict) -> dict:
    d = _defaults(cls)
    d.update({k: v for k, v in hints.items() if k in d})
    return d


# fields whose default does not reveal the element type
_TYPE_HINTS = {
    AdaptiveRri: {"candidate_rris": (0,)},
    ExperimentConfig: {"seeds": (0,), "probe_thresholds_dbm": (0.0,), "message_pattern": (0,)},
}


def _build(cls, section: configparser.SectionProxy | None, base):
    if section is None:
        return base
    defaults = _typed_defaults(cls, _TYPE_HINTS.get(cls, {}))
    kwargs = {}
    for key, text in section.items():
        if key not in defaults:
            raise ValueError(f"unknown key {key!r} in [{section.name}]")
        kwargs[key] = _parse(text, defaults[key])
    return dataclasses.replace(base, **kwargs)


def loads(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    unknown = set(cp.sections()) - set(SECTIONS) - {TOP}
    if unknown:
        raise ValueError(f"unknown section(s): {', '.join(sorted(unknown))}")

    def sec(name):
        return cp[name] if cp.has_section(name) else None

    pathloss = _build(WinnerB1Los, sec("pathloss"), WinnerB1Los())
    channel = _build(ChannelModel, sec("channel"), ChannelModel(pathloss=pathloss))
    grid = _build(GridConfig, sec("grid"), GridConfig())
    traffic = _build(TrafficModel, sec("traffic"), TrafficModel())
    adaptive = _build(AdaptiveRri, sec("adaptive"), AdaptiveRri())
    sps = _build(SpsParams, sec("sps"), SpsParams())

    top = {}
    if cp.has_section(TOP):
        defaults = _typed_defaults(ExperimentConfig, _TYPE_HINTS[ExperimentConfig])
        for key, text in cp[TOP].items():
            if key not in defaults or key in SECTIONS:
                raise ValueError(f"unknown key {key!r} in [{TOP}]")
            top[key] = _parse(text, defaults[key])
    return ExperimentConfig(grid=grid, traffic=traffic, channel=channel, adaptive=adaptive,
                            sps=sps, **top)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def dumps(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp[TOP] = {f.name: _fmt(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)
               if not dataclasses.is_dataclass(getattr(cfg, f.name))}
    for name, (_, path) in SECTIONS.items():
        obj = cfg
        for attr in path:
            obj = getattr(obj, attr)
        cp[name] = {f.name: _fmt(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                    if not dataclasses.is_dataclass(getattr(obj, f.name))}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def save(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg))


def preset(name: str) -> ExperimentConfig:
    """Bundled configuration: ``mac`` (MAC-only static) or ``freeway`` (six-lane road)."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    return loads(resources.files("capsim.presets").joinpath(f"{name}.ini").read_text())


def resolve(spec: str) -> ExperimentConfig:
    """Load a file path, or a bundled preset by bare name."""
    if spec in PRESETS and not Path(spec).exists():
        return preset(spec)
    return load(spec)
