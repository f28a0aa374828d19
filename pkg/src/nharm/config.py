"""Run configuration: typed parameters per subcommand, parsed from flags or a key=value file.

A config file has a ``[run]`` section naming the subcommand (plus optional
``out`` and ``threads``) and a section named after the subcommand holding its
parameters, one ``key = value`` per line.  Every value is parsed and checked
before any computation starts; problems raise ConfigError.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

THREADS_ENV = "NHARM_THREADS"


# ----------------------------------------------------------------------
# Value parsers
# ----------------------------------------------------------------------
def _float(s):
    try:
        return float(s)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"expected a number, got {s!r}") from exc


def _int(s):
    try:
        return int(str(s).strip())
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {s!r}") from exc


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    parts = [x for x in str(s).replace(" ", "").split(",") if x]
    if not parts:
        raise ConfigError("expected a comma-separated list of numbers")
    return [_float(x) for x in parts]


def _ints(s):
    """``1..5`` (inclusive range) or a comma-separated list."""
    if isinstance(s, (list, tuple)):
        return [int(x) for x in s]
    text = str(s).replace(" ", "")
    if ".." in text:
        lo, _, hi = text.partition("..")
        lo, hi = _int(lo), _int(hi)
        if hi < lo:
            raise ConfigError(f"empty range {s!r}")
        return list(range(lo, hi + 1))
    return [_int(x) for x in text.split(",") if x]


def _optional_floats(s):
    if s is None or str(s).strip() in ("", "none"):
        return None
    return _floats(s)


@dataclass(frozen=True)
class Param:
    name: str
    parse: object
    default: object
    help: str = ""
    choices: tuple = ()

    def convert(self, raw):
        if raw is None:
            return self.default
        value = self.parse(raw)
        if self.choices and value not in self.choices:
            raise ConfigError(f"{self.name} must be one of {self.choices}, got {value!r}")
        return value


def P(name, parse, default, help="", choices=()):
    return Param(name, parse, default, help, tuple(choices))


DOMAIN = [
    P("domain", str, "ball", "ball or perturbed", ("ball", "perturbed")),
    P("n", _int, 3, "dimension"),
    P("h", _float, 0.15, "target mesh size"),
    P("L0", _float, 0.05, "perturbation amplitude"),
]
FIELD_CHOICES = ("identity", "mobius", "constant", "raised", "critical")

SUBCOMMANDS: dict[str, list[Param]] = {
    "mesh": DOMAIN,
    "mobius-energy": [
        P("n", _int, 3), P("a", _optional_floats, None, "Möbius centre, comma separated"),
        P("h", _float, 0.15), P("p", _float, 0.0, "exponent (0 means n)"), P("refine", _bool, False),
    ],
    "degree": DOMAIN[1:3] + [
        P("field", str, "identity", "", FIELD_CHOICES[:4]), P("a", _optional_floats, None), P("sigma", _float, 0.2),
    ],
    "raise-degree": DOMAIN[1:3] + [
        P("field", str, "identity", "", ("identity", "mobius")), P("a", _optional_floats, None),
        P("sigma", _float, 0.2), P("x0", _optional_floats, None, "boundary point"), P("reverse", _bool, False),
    ],
    "solve": DOMAIN + [
        P("seed", str, "identity", "", ("identity", "mobius", "almost-mobius")), P("a", _optional_floats, None),
        P("r", _float, 0.3), P("alpha", _float, 0.1), P("max_iters", _int, 200),
        P("direction", str, "newton", "", ("newton", "sobolev")),
    ],
    "extension": DOMAIN[1:3] + [
        P("a", _optional_floats, None), P("b", _optional_floats, None), P("p", _float, 0.0),
    ],
    "c1": DOMAIN + [P("r", _float, 0.1), P("alpha", _float, 0.1), P("anchors", _int, 16)],
    "filling-bound": DOMAIN + [
        P("r", _float, 0.1), P("alpha", _float, 0.1), P("interior_anchors", _int, 16), P("anchors", _int, 12),
    ],
    "barycenter": DOMAIN + [P("r", _float, 0.1), P("resolution", _float, 1e-3)],
    "minmax": DOMAIN + [
        P("r", _float, 0.1), P("alphas", _floats, [0.1]), P("anchors", _int, 16), P("interior_anchors", _int, 16),
    ],
    "trace-const": [P("n", _int, 3), P("k", _ints, [1, 2, 3, 4, 5]), P("cells", _int, 2000)],
    "sphere-decompose": DOMAIN[1:3] + [
        P("field", str, "mobius", "", ("identity", "mobius")), P("a", _optional_floats, None), P("k_max", _int, 4),
    ],
    "pohozaev": DOMAIN[1:3] + [
        P("field", str, "identity", "", ("identity", "mobius", "critical")), P("a", _optional_floats, None),
        P("alpha", _float, 0.1), P("p", _float, 0.0), P("radii", _floats, [0.2, 0.3, 0.4, 0.5]),
        P("x0", _optional_floats, None),
    ],
    "neck": DOMAIN + [
        P("r", _floats, [0.2, 0.1, 0.05]), P("x0", _optional_floats, None), P("p", _float, 0.0),
    ],
    "price": [
        P("family", str, "concentrating", "", ("concentrating", "fixed", "perturbation")), P("ell", _int, 1),
        P("k", _ints, None), P("n", _int, 3), P("h", _float, 0.3), P("L0", _float, 0.05), P("seed", _int, 0),
        P("burn_in", _int, 0),
    ],
    "gap-scan": DOMAIN[1:3] + [
        P("seeds", _int, 50), P("alpha", _float, 0.1), P("alphas", _optional_floats, None), P("max_iters", _int, 200),
    ],
    "mobius-fit": DOMAIN[1:3] + [
        P("field", str, "mobius", "", ("identity", "mobius", "critical")), P("a", _optional_floats, None),
        P("alpha", _float, 0.1),
    ],
}


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    out: Path
    threads: int = 1
    source: dict = field(default_factory=dict)

    def echo(self) -> dict:
        return {"subcommand": self.subcommand, "params": self.params, "out": str(self.out), "threads": self.threads}


def resolve_threads(flag: int | None) -> int:
    """The flag wins over the environment variable; the default is one thread."""
    if flag is not None:
        value = flag
    else:
        raw = os.environ.get(THREADS_ENV)
        value = _int(raw) if raw not in (None, "") else 1
    if value < 1:
        raise ConfigError(f"thread count must be positive, got {value}")
    return value


def build_config(subcommand: str, raw: dict, out, threads: int | None = None) -> RunConfig:
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    spec = {p.name: p for p in SUBCOMMANDS[subcommand]}
    unknown = set(raw) - set(spec)
    if unknown:
        raise ConfigError(f"unknown parameters for {subcommand}: {sorted(unknown)}")
    params = {name: p.convert(raw.get(name)) for name, p in spec.items()}
    _check_common(params)
    return RunConfig(subcommand, params, Path(out), resolve_threads(threads), dict(raw))


def _check_common(params: dict) -> None:
    if "n" in params and params["n"] not in (2, 3):
        raise ConfigError(f"dimension must be 2 or 3, got {params['n']}")
    if "h" in params and not 0 < params["h"] <= 0.5:
        raise ConfigError(f"mesh size must lie in (0, 0.5], got {params['h']}")
    for key in ("a", "b", "x0"):
        v = params.get(key)
        if v is not None and "n" in params and len(v) != params["n"]:
            raise ConfigError(f"{key} needs {params['n']} components, got {len(v)}")


def load_config_file(path, out=None, threads: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not cp.has_section("run") or not cp.has_option("run", "subcommand"):
        raise ConfigError("config needs a [run] section with a subcommand")
    run = dict(cp["run"])
    sub = run.pop("subcommand")
    out = out or run.pop("out", "nharm-out")
    run.pop("out", None)
    t = run.pop("threads", None)
    if run:
        raise ConfigError(f"unknown keys in [run]: {sorted(run)}")
    raw = dict(cp[sub]) if cp.has_section(sub) else {}
    for section in cp.sections():
        if section not in ("run", sub):
            raise ConfigError(f"section [{section}] does not match the subcommand {sub!r}")
    if threads is None and t is not None:
        threads = _int(t)
    return build_config(sub, raw, out, threads)
