"""Run configuration files and the ``paper``/``desk`` experiment presets.

A run config is an INI-style text file::

    [system]
    kind = nharm
    n = 2

    [train]
    mode = learn
    epochs = 400
    hidden = 128, 128, 128

Sections are ``system``, ``data``, ``train``, ``analysis`` and ``output``.
Unknown sections or keys are rejected. Values are parsed as Python literals
where possible, so ``1e-3``, ``none`` and ``true`` all do the obvious thing.
"""
from __future__ import annotations

import ast
import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from .dynamics import DataRecipe, SystemSpec, recipe_for
from .exceptions import PreconditionError
from .variational import TrainConfig, default_K

SECTIONS = ("system", "data", "train", "analysis", "output")
SYSTEM_KEYS = ("kind", "n", "d", "masses", "k", "G", "eps", "potential")
DATA_KEYS = ("variant", "seed") + tuple(f.name for f in dataclasses.fields(DataRecipe))
ANALYSIS_KEYS = ("threshold", "min_parallel")
OUTPUT_KEYS = ("dir", "data", "checkpoint", "report", "field")

_LITERALS = {"none": None, "true": True, "false": False}


def parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in _LITERALS:
        return _LITERALS[low]
    try:
        value = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text
    return list(value) if isinstance(value, tuple) else value


def format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class RunConfig:
    """Everything needed to regenerate one experiment."""

    system: SystemSpec = field(default_factory=SystemSpec)
    data: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    analysis: dict = field(default_factory=lambda: {"threshold": 0.05, "min_parallel": 0.99})
    output: dict = field(default_factory=dict)

    def recipe(self, variant=None):
        """Data recipe for ``variant``; ``[data]`` size overrides touch the train split only."""
        variant = variant or self.data.get("variant", "train")
        base = recipe_for(self.system, variant)
        if variant != "train":
            return base
        overrides = {k: v for k, v in self.data.items() if k not in ("variant", "seed")}
        return dataclasses.replace(base, **overrides) if overrides else base

    @property
    def data_seed(self):
        return int(self.data.get("seed", 0))

    def to_dict(self):
        return {
            "system": self.system.to_dict(),
            "data": dict(self.data),
            "train": self.train.to_dict(),
            "analysis": dict(self.analysis),
            "output": dict(self.output),
        }

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise PreconditionError(f"unknown config sections: {sorted(unknown)}")
        sys_doc = dict(doc.get("system") or {})
        _check_keys("system", sys_doc, SYSTEM_KEYS)
        if "masses" in sys_doc and sys_doc["masses"] is not None:
            sys_doc["masses"] = tuple(_as_list(sys_doc["masses"]))
        data = dict(doc.get("data") or {})
        _check_keys("data", data, DATA_KEYS)
        train_doc = dict(doc.get("train") or {})
        if "hidden" in train_doc:
            train_doc["hidden"] = tuple(_as_list(train_doc["hidden"]))
        analysis = {"threshold": 0.05, "min_parallel": 0.99}
        extra = dict(doc.get("analysis") or {})
        _check_keys("analysis", extra, ANALYSIS_KEYS)
        analysis.update(extra)
        output = dict(doc.get("output") or {})
        _check_keys("output", output, OUTPUT_KEYS)
        return cls(SystemSpec(**sys_doc), data, TrainConfig.from_dict(train_doc), analysis, output)

    def to_text(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for name, section in self.to_dict().items():
            cp[name] = {k: format_value(v) for k, v in section.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise PreconditionError(f"malformed config: {exc}") from exc
        doc = {s: {k: parse_value(v) for k, v in cp[s].items()} for s in cp.sections()}
        return cls.from_dict(doc)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _as_list(value):
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _check_keys(section, doc, allowed):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise PreconditionError(f"unknown keys in [{section}]: {sorted(unknown)}")


# Experiment settings. ``paper`` mirrors the published recipes; ``desk``
# shrinks network, orbit samples and epochs to fit a single CPU core.
_PAPER = {
    "sho": dict(hidden=(200, 200), alpha=2.0, S=200, tau_measure="uniform", batch_traj=None,
                sigma2_policy="fixed", sigma2=1e-3, epochs=2000),
    "nharm": dict(hidden=(200, 200, 200), alpha=1.0, S=100, tau_measure="normal",
                  batch_traj=20, sigma2_policy="ewma", epochs=2000),
    "nbody": dict(hidden=(250, 250, 250, 250), alpha=1.0, S=100, tau_measure="normal",
                  batch_traj=20, sigma2_policy="ewma", epochs=2000),
}
_DESK = {
    "sho": dict(hidden=(64, 64), S=50, epochs=600),
    "nharm": dict(hidden=(128, 128, 128), S=20, epochs=700, lr=3e-3, n_weight_samples=1),
    "nbody": dict(hidden=(128, 128, 128), S=20, epochs=700, lr=3e-3, n_weight_samples=1),
}
# desk data sizes (trajectories x points); paper sizes come from recipe_for
_DESK_DATA = {
    "sho": {},
    "nharm": {"n_traj": 30, "points_per_traj": 10},
    "nbody": {"n_traj": 30, "points_per_traj": 10},
}


def preset(kind="sho", scale="paper", mode="learn", n=None, seed=0):
    """Ready-made :class:`RunConfig` for one of the three systems."""
    if kind not in _PAPER:
        raise PreconditionError(f"unknown system {kind!r}")
    if scale not in ("paper", "desk"):
        raise PreconditionError("scale must be 'paper' or 'desk'")
    if kind == "sho":
        system = SystemSpec("sho")
    elif kind == "nharm":
        system = SystemSpec("nharm", n=3 if n is None else n)
    else:
        system = SystemSpec("nbody", n=3 if n is None else n, d=2)
    opts = dict(_PAPER[kind])
    data = {"seed": seed}
    if scale == "desk":
        opts.update(_DESK[kind])
        data.update(_DESK_DATA[kind])
    train = TrainConfig(mode=mode, K=default_K(system), seed=seed, **opts)
    analysis = {"threshold": 0.05, "min_parallel": 0.95 if kind == "nbody" else 0.99}
    return RunConfig(system, data, train, analysis, {})
