"""INI-style run configuration.

Example::

    [model]
    preset = example1      ; optional base, keys below override it
    alpha_m1 = 1.5
    alpha0 = 2
    alpha1 = 1
    alpha2 = 3
    sigma = 1
    r = 5
    rho = 2
    lambda = 1.0           ; default 1.0
    x0 = 1

    [jump]
    scale = 0.5            ; nu(x) = scale * x

    [experiment]
    T = 1
    h_list = 2^-5, 2^-6, 2^-7, 2^-8, 2^-9, 2^-10
    h_exact = 2^-14
    paths = 10000
    reference = bem
    schemes = tem, pem, bem
    seed = 0
    kappa =                ; projection exponent, default 1/(2r-2)
    bootstrap = 200

    [simulate]
    h = 2^-10
    paths = 1
    scheme = tem

    [check]
    corrections = tamed, projected
    h_list = 2^-5, ..., 2^-10  ; defaults to [experiment] h_list
    kappa =
    v = 3
    grid_lo = 1e-3
    grid_hi = 1e3
    grid_points = 200
    grid_pairs = 1000
    grid_seed = 0

Numbers accept plain arithmetic: ``2^-5``, ``3*2**-7``, ``1/8``.
"""

from __future__ import annotations

import ast
import configparser
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corrections import CorrectionKind, SampleGrid
from .errors import ConfigError, DivisibilityError, InvalidParameterError
from .experiment import DEFAULT_H_LIST, ExperimentConfig
from .model import PRESETS, JumpCoefficient, ModelParams
from .schemes import Scheme

__all__ = ["RunConfig", "load_config", "parse_number", "parse_number_list", "MODEL_KEYS"]

MODEL_KEYS = {
    "alpha_m1": "alpha_m1",
    "alpha0": "alpha0",
    "alpha1": "alpha1",
    "alpha2": "alpha2",
    "sigma": "sigma",
    "r": "r",
    "rho": "rho",
    "lambda": "lam",
    "x0": "x0",
}
_OPTIONAL_MODEL = {"lambda"}
DEFAULT_JUMP_SCALE = 0.5

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}


def parse_number(text: str) -> float:
    """Evaluate a small arithmetic expression (numbers, + - * / ^ **, parentheses)."""
    src = text.strip().replace("^", "**")
    if not src:
        raise ValueError("empty value")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError:
        raise ValueError(f"not a number: {text!r}") from None

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ValueError(f"not a number: {text!r}")

    try:
        return float(ev(tree))
    except (ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"bad number {text!r}: {exc}") from None


def parse_number_list(text: str) -> tuple[float, ...]:
    return tuple(parse_number(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _words(text: str) -> list[str]:
    return [t for t in re.split(r"[,\s]+", text.strip()) if t]


@dataclass
class RunConfig:
    params: ModelParams
    jump: JumpCoefficient
    experiment: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    check: dict = field(default_factory=dict)
    preset: str | None = None
    source: str | None = None

    def experiment_config(self, **overrides) -> ExperimentConfig:
        e = dict(self.experiment)
        e.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return self._experiment_config(e)
        except (InvalidParameterError, DivisibilityError) as exc:
            raise ConfigError(str(exc), field="experiment") from None

    def _experiment_config(self, e: dict) -> ExperimentConfig:
        return ExperimentConfig(
            params=self.params,
            jump=self.jump,
            T=e.get("T", 1.0),
            h_list=e.get("h_list", DEFAULT_H_LIST),
            h_exact=e.get("h_exact", 2.0**-14),
            n_paths=e.get("n_paths", 10_000),
            reference_scheme=e.get("reference_scheme", Scheme.BEM),
            schemes_under_test=e.get("schemes_under_test", (Scheme.TEM, Scheme.PEM, Scheme.BEM)),
            seed=e.get("seed", 0),
            kappa=e.get("kappa"),
            n_boot=e.get("n_boot", 200),
        )

    def sample_grid(self) -> SampleGrid:
        c = self.check
        return SampleGrid(
            lo=c.get("grid_lo", 1e-3),
            hi=c.get("grid_hi", 1e3),
            n_points=c.get("grid_points", 200),
            n_pairs=c.get("grid_pairs", 1000),
            seed=c.get("grid_seed", 0),
        )

    def echo(self) -> dict[str, object]:
        """Flat resolved view used in manifests."""
        out: dict[str, object] = {}
        for k, attr in MODEL_KEYS.items():
            out[f"model.{k}"] = getattr(self.params, attr)
        out["jump.scale"] = self.jump.scale
        for sect in ("experiment", "simulate", "check"):
            for k, v in getattr(self, sect).items():
                out[f"{sect}.{k}"] = _fmt(v)
        return out


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, Scheme):
        return v.value
    if isinstance(v, CorrectionKind):
        return v.value
    return repr(v) if isinstance(v, float) else str(v)


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip().lower()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return n
    return None


class _Reader:
    def __init__(self, cp: configparser.ConfigParser, text: str):
        self.cp = cp
        self.text = text

    def has(self, section: str, key: str) -> bool:
        return self.cp.has_option(section, key) and self.cp.get(section, key).strip() != ""

    def raw(self, section: str, key: str) -> str:
        return self.cp.get(section, key)

    def _fail(self, section, key, msg):
        raise ConfigError(msg, field=f"{section}.{key}", line=_line_of(self.text, section, key))

    def number(self, section: str, key: str) -> float:
        try:
            return parse_number(self.raw(section, key))
        except ValueError as exc:
            self._fail(section, key, str(exc))

    def integer(self, section: str, key: str) -> int:
        v = self.number(section, key)
        if not v.is_integer():
            self._fail(section, key, f"expected an integer, got {self.raw(section, key)!r}")
        return int(v)

    def numbers(self, section: str, key: str) -> tuple[float, ...]:
        try:
            vals = parse_number_list(self.raw(section, key))
        except ValueError as exc:
            self._fail(section, key, str(exc))
        if not vals:
            self._fail(section, key, "empty list")
        return vals

    def schemes(self, section: str, key: str) -> tuple[Scheme, ...]:
        try:
            return tuple(Scheme.parse(w) for w in _words(self.raw(section, key)))
        except ValueError as exc:
            self._fail(section, key, str(exc))

    def single_scheme(self, section: str, key: str) -> Scheme:
        try:
            return Scheme.parse(self.raw(section, key))
        except ValueError as exc:
            self._fail(section, key, str(exc))


_KNOWN = {
    "model": set(MODEL_KEYS) | {"preset"},
    "jump": {"scale"},
    "experiment": {"t", "h_list", "h_exact", "paths", "reference", "schemes", "seed", "kappa", "bootstrap"},
    "simulate": {"h", "paths", "scheme", "t"},
    "check": {"corrections", "h_list", "kappa", "v", "grid_lo", "grid_hi", "grid_points", "grid_pairs", "grid_seed"},
}


def load_config(path: str | Path | None = None, preset: str | None = None, text: str | None = None) -> RunConfig:
    """Resolve a configuration from a preset, a file, or both (file wins)."""
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}", field="preset")
    if path is None and text is None:
        if preset is None:
            raise ConfigError("either --config or --preset is required")
        return RunConfig(PRESETS[preset], JumpCoefficient.linear(DEFAULT_JUMP_SCALE), preset=preset)

    if text is None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc.message if hasattr(exc, 'message') else exc}",
                          line=getattr(exc, "lineno", None)) from None
    rd = _Reader(cp, text)

    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]", field=section, line=_line_of_section(text, section))
        for key in cp.options(section):
            if key not in _KNOWN[section]:
                raise ConfigError(f"unknown key", field=f"{section}.{key}", line=_line_of(text, section, key))

    base_name = preset
    if rd.has("model", "preset"):
        base_name = base_name or rd.raw("model", "preset").strip()
        if base_name not in PRESETS:
            raise ConfigError(f"unknown preset {base_name!r}", field="model.preset",
                              line=_line_of(text, "model", "preset"))
    values: dict[str, float] = PRESETS[base_name].as_dict() if base_name else {}
    for key, attr in MODEL_KEYS.items():
        if rd.has("model", key):
            values[attr] = rd.number("model", key)
        elif attr not in values:
            if key in _OPTIONAL_MODEL:
                values[attr] = 1.0
            else:
                raise ConfigError(f"missing required model parameter '{key}'", field=f"model.{key}")
    params = ModelParams(**values)
    bad = params.violations()
    if bad:
        raise ConfigError("invalid model parameters: " + "; ".join(bad), field="model")

    scale = rd.number("jump", "scale") if rd.has("jump", "scale") else DEFAULT_JUMP_SCALE
    try:
        jump = JumpCoefficient.linear(scale)
    except ValueError as exc:
        raise ConfigError(str(exc), field="jump.scale", line=_line_of(text, "jump", "scale")) from None

    exp: dict = {}
    if rd.has("experiment", "t"):
        exp["T"] = rd.number("experiment", "t")
    for key, name in (("h_list", "h_list"),):
        if rd.has("experiment", key):
            exp[name] = rd.numbers("experiment", key)
    if rd.has("experiment", "h_exact"):
        exp["h_exact"] = rd.number("experiment", "h_exact")
    if rd.has("experiment", "paths"):
        exp["n_paths"] = rd.integer("experiment", "paths")
    if rd.has("experiment", "reference"):
        exp["reference_scheme"] = rd.single_scheme("experiment", "reference")
    if rd.has("experiment", "schemes"):
        exp["schemes_under_test"] = rd.schemes("experiment", "schemes")
    if rd.has("experiment", "seed"):
        exp["seed"] = rd.integer("experiment", "seed")
    if rd.has("experiment", "kappa"):
        exp["kappa"] = rd.number("experiment", "kappa")
    if rd.has("experiment", "bootstrap"):
        exp["n_boot"] = rd.integer("experiment", "bootstrap")

    sim: dict = {}
    if rd.has("simulate", "h"):
        sim["h"] = rd.number("simulate", "h")
    if rd.has("simulate", "t"):
        sim["T"] = rd.number("simulate", "t")
    if rd.has("simulate", "paths"):
        sim["paths"] = rd.integer("simulate", "paths")
    if rd.has("simulate", "scheme"):
        sim["schemes"] = rd.schemes("simulate", "scheme")

    chk: dict = {}
    if rd.has("check", "corrections"):
        try:
            chk["corrections"] = tuple(CorrectionKind(w.lower()) for w in _words(rd.raw("check", "corrections")))
        except ValueError:
            raise ConfigError("corrections must be identity, tamed or projected", field="check.corrections",
                              line=_line_of(text, "check", "corrections")) from None
    if rd.has("check", "h_list"):
        chk["h_list"] = rd.numbers("check", "h_list")
    for key in ("kappa", "v", "grid_lo", "grid_hi"):
        if rd.has("check", key):
            chk[key] = rd.number("check", key)
    for key in ("grid_points", "grid_pairs", "grid_seed"):
        if rd.has("check", key):
            chk[key] = rd.integer("check", key)

    return RunConfig(params, jump, exp, sim, chk, preset=base_name, source=str(path) if path else None)


def _line_of_section(text: str, section: str) -> int | None:
    for n, line in enumerate(text.splitlines(), 1):
        if line.strip().lower() == f"[{section}]":
            return n
    return None
