"""Run configuration: a small sectioned ``key = value`` format.

Example::

    [model]
    g = [(1, 0.0, -0.5)]          # sin(2 pi x)
    f = [(0, 1.0, 0.0), (1, 0.5, 0.0)]
    eps = 0.05
    omega = 0.6180339887498949

    [experiment]
    N = 100
    x0 = 0.1

    [output]
    dir = "out"

Values are Python literals (numbers, strings, lists, tuples); ``true`` and
``false`` are accepted as well. A bracketed value may continue over several
lines. ``#`` starts a comment outside strings.
"""

from __future__ import annotations

import ast
import hashlib
import math
import os
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError
from .functions import DEFAULT_F_MIN, MeromorphicPotential, ToeplitzKernel, TrigPolynomial
from .spectral import OperatorSpec
from .torus import GOLDEN, Frequency

SUBCOMMANDS = ("green", "shiftscan", "ldt", "avgdet", "cartan", "sublevel", "pave", "patch",
               "badset", "orbit", "localize", "dioph")


# ---------------------------------------------------------------------------
# value checks


def _number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _real(v, key):
    if not _number(v) or not math.isfinite(v):
        raise ConfigError(f"{key} must be a finite real number", key=key)
    return float(v)


def _int(v, key):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key} must be an integer", key=key)
    return v


def _positive_int(v, key):
    if _int(v, key) < 1:
        raise ConfigError(f"{key} must be >= 1", key=key)
    return v


def _positive(v, key):
    if _real(v, key) <= 0:
        raise ConfigError(f"{key} must be > 0", key=key)
    return float(v)


def _nonneg(v, key):
    if _real(v, key) < 0:
        raise ConfigError(f"{key} must be >= 0", key=key)
    return float(v)


def _bool(v, key):
    if not isinstance(v, bool):
        raise ConfigError(f"{key} must be true or false", key=key)
    return v


def _string(v, key):
    if not isinstance(v, str):
        raise ConfigError(f"{key} must be a string", key=key)
    return v


def _list_of(check):
    def inner(v, key):
        if not isinstance(v, (list, tuple)) or not v:
            raise ConfigError(f"{key} must be a non-empty list", key=key)
        return [check(x, key) for x in v]
    return inner


def _interval(v, key):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{key} must be a pair (lo, hi)", key=key)
    lo, hi = _real(v[0], key), _real(v[1], key)
    if lo >= hi:
        raise ConfigError(f"{key} needs lo < hi", key=key)
    return (lo, hi)


def _triples(v, key):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{key} must be a list of (n, re, im) triples", key=key)
    out = []
    for t in v:
        if not isinstance(t, (list, tuple)) or len(t) != 3:
            raise ConfigError(f"{key} entries must be (n, re, im) triples", key=key)
        n = _int(t[0], key)
        out.append((n, _real(t[1], key), _real(t[2], key)))
    return out


def _pairs(v, key):
    if not isinstance(v, (list, tuple)) or not v:
        raise ConfigError(f"{key} must be a non-empty list of (E, eps) pairs", key=key)
    out = []
    for t in v:
        if not isinstance(t, (list, tuple)) or len(t) != 2:
            raise ConfigError(f"{key} entries must be (E, eps) pairs", key=key)
        out.append((_real(t[0], key), _positive(t[1], key)))
    return out


def _unit_open(v, key):
    x = _real(v, key)
    if not 0.0 < x < 1.0:
        raise ConfigError(f"{key} must lie in (0, 1)", key=key)
    return x


def _eps(v, key):
    x = _real(v, key)
    if x < 0:
        raise ConfigError("eps must be >= 0", key=key)
    if x >= 1:
        raise ConfigError("eps must be < 1", key=key)
    return x


def _choice(*options):
    def inner(v, key):
        if v not in options:
            raise ConfigError(f"{key} must be one of {', '.join(options)}", key=key)
        return v
    return inner


MODEL_KEYS = {
    "potential": (_choice("maryland", "custom"), "maryland"),
    "g": (_triples, None),
    "f": (_triples, None),
    "normalize": (_bool, False),
    "kernel": (_triples, None),
    "kernel_amplitude": (_positive, 0.5),
    "rho": (_positive, 1.0),
    "eps": (_eps, 0.05),
    "omega": (_unit_open, GOLDEN),
    "dc_a": (_positive, 0.1),
    "dc_A": (_real, 2.0),
    "f_min": (_positive, DEFAULT_F_MIN),
}

EXPERIMENT_KEYS = {
    "E": (_real, 0.0),
    "energies": (_list_of(_real), None),
    "x0": (_real, 0.1),
    "xs": (_list_of(_real), None),
    "N": (_positive_int, 32),
    "Ns": (_list_of(_positive_int), [32, 64, 128]),
    "M": (_positive_int, None),
    "Ms": (_list_of(_positive_int), [50, 100, 200]),
    "x_grid": (_positive_int, 2048),
    "quad_grid": (_positive_int, 1024),
    "grid": (_positive_int, 512),
    "threshold": (_positive, 0.05),
    "tolerance": (_positive, 0.05),
    "C_tilde": (_positive, None),
    "frac": (_unit_open, 0.1),
    "c0": (_positive, None),
    "slack": (_nonneg, None),
    "kappa": (_nonneg, 0.1),
    "N1": (_positive_int, None),
    "delta": (_unit_open, 0.1),
    "j_stride": (_positive_int, None),
    "energy_window": (_interval, None),
    "eps_list": (_list_of(_positive), None),
    "measure": (_choice("potential", "linear", "f"), "potential"),
    "depth": (_positive_int, 20),
    "chain": (_pairs, None),
    "seed": (_int, None),
    "trials": (_positive_int, 100),
    "cartan_grid": (_positive_int, 400),
    "R": (_positive, 1.0),
    "R2": (_positive, 0.5),
    "H": (_positive, 0.05),
    "Hp": (_positive, 0.05),
    "pole_delta": (_positive, 0.2),
    "K": (_positive_int, 1000),
    "cf_depth": (_positive_int, 10),
}

OUTPUT_KEYS = {
    "dir": (_string, "out"),
    "workers": (_positive_int, None),
}

SECTIONS = {"model": MODEL_KEYS, "experiment": EXPERIMENT_KEYS, "output": OUTPUT_KEYS}


@dataclass(frozen=True)
class RunConfig:
    model: dict
    experiment: dict
    output: dict
    text: str = field(repr=False, default="")

    @property
    def hash(self) -> str:
        return config_hash(self.text)

    def get(self, key: str):
        """Experiment parameter with its default filled in."""
        if key in self.experiment:
            return self.experiment[key]
        return EXPERIMENT_KEYS[key][1]

    def require(self, key: str):
        v = self.get(key)
        if v is None:
            raise ConfigError(f"experiment needs '{key}'", key=key)
        return v

    def workers(self) -> int:
        return self.output.get("workers") or os.cpu_count() or 1

    def operator(self) -> OperatorSpec:
        return build_operator(self.model)

    def echo(self) -> dict:
        return {"model": self.model, "experiment": self.experiment, "output": self.output}


def config_hash(text: str) -> str:
    """Git blob hash of the config text."""
    data = text.encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ---------------------------------------------------------------------------
# parsing


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def _literal(text: str, line: int, key: str):
    src = text.strip()
    low = src.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError:
        raise ConfigError(f"cannot parse value {src!r}", line, key) from None

    class Bools(ast.NodeTransformer):
        def visit_Name(self, node):
            if node.id in ("true", "false"):
                return ast.copy_location(ast.Constant(node.id == "true"), node)
            return node

    tree = ast.fix_missing_locations(Bools().visit(tree))
    try:
        return ast.literal_eval(tree)
    except (ValueError, TypeError, SyntaxError):
        raise ConfigError(f"cannot parse value {src!r}", line, key) from None


def _raw_entries(text: str):
    """Yield ``(section, key, value_text, line)``."""
    section = None
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i]).strip()
        i += 1
        if not line:
            continue
        if line.startswith("[") and line.endswith("]") and "=" not in line:
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("missing key", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno, key)
        depth = value.count("[") + value.count("(") - value.count("]") - value.count(")")
        while depth > 0:
            if i >= len(lines):
                raise ConfigError("unterminated bracket", lineno, key)
            more = _strip_comment(lines[i]).strip()
            i += 1
            value += " " + more
            depth += more.count("[") + more.count("(") - more.count("]") - more.count(")")
        yield section, key, value, lineno


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config document; raises :class:`ConfigError` with line and key."""
    data: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    where: dict[tuple, int] = {}
    for section, key, value, lineno in _raw_entries(text):
        schema = SECTIONS[section]
        if key not in schema:
            raise ConfigError(f"unknown key in [{section}]", lineno, key)
        if key in data[section]:
            raise ConfigError("duplicate key", lineno, key)
        raw = _literal(value, lineno, key)
        check = schema[key][0]
        try:
            data[section][key] = check(raw, key)
        except ConfigError as e:
            raise ConfigError(e.message, lineno, key) from None
        where[(section, key)] = lineno

    model = data["model"]
    try:
        build_operator(model)
    except ConfigError as e:
        line = where.get(("model", e.key)) if e.key else None
        raise ConfigError(e.message, line, e.key) from None
    return RunConfig(model, data["experiment"], data["output"], text)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return parse_config(text)


def _model_value(model: dict, key: str):
    return model.get(key, MODEL_KEYS[key][1])


def build_operator(model: dict) -> OperatorSpec:
    """Turn a validated ``[model]`` section into an :class:`OperatorSpec`."""
    get = lambda k: _model_value(model, k)  # noqa: E731
    if "g" in model or "f" in model:
        if not ("g" in model and "f" in model):
            raise ConfigError("g and f must be given together", key="f" if "g" in model else "g")
        try:
            g = TrigPolynomial.from_triples(model["g"])
            f = TrigPolynomial.from_triples(model["f"])
            potential = MeromorphicPotential(g, f, get("normalize"))
        except ValueError as e:
            raise ConfigError(str(e), key="f") from None
    else:
        if get("potential") == "custom":
            raise ConfigError("potential = 'custom' needs g and f", key="potential")
        potential = MeromorphicPotential.maryland()
        if get("normalize"):
            potential = MeromorphicPotential(potential.g, potential.f, True)

    rho = get("rho")
    try:
        if "kernel" in model:
            kernel = ToeplitzKernel.from_triples(model["kernel"], rho)
        else:
            kernel = ToeplitzKernel.exponential(rho, get("kernel_amplitude"))
    except ValueError as e:
        raise ConfigError(str(e), key="kernel" if "kernel" in model else "kernel_amplitude") from None

    try:
        freq = Frequency(get("omega"), get("dc_a"), get("dc_A"))
    except ValueError as e:
        raise ConfigError(str(e), key="dc_A") from None
    return OperatorSpec(potential, kernel, get("eps"), freq, get("f_min"))
