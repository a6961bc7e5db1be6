"""Strict TOML run configuration.

Example::

    [problem]
    source = "contact"          # or "builtin"
    builtin = "linear"          # builtin only
    [problem.params]            # builtin parameter overrides
    kappa = 0.2

    [mesh]                      # contact only: a file or a generated rectangle
    file = "square.msh"         # relative to the config file
    # width = 1.0, height = 1.0, nx = 6, ny = 6

    [contact]                   # ContactModel fields
    mu = 0.3

    [grid]
    T = 1.0
    N = 50

    [stepper]                   # StepperConfig fields
    tol_outer = 1e-10

    [output]
    dir = "out"
    verbosity = 1

    [run]
    seed = 0
    override_margin = false
    validate_samples = 20

Unknown sections or keys are errors, reported with their line.
"""

import os
import re
import sys
from dataclasses import dataclass, field, fields

from .builtin import BUILTINS, ScalarParams, builtin_problem
from .errors import RejectedInput
from .stepper import StepperConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(RejectedInput):
    """Unreadable or invalid configuration; ``line``/``column`` locate it when known."""

    def __init__(self, message, line=None, column=None, path=None):
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            where = f"{path}: {where}: " if path else f"{where}: "
        elif path:
            where = f"{path}: "
        super().__init__(where + message)
        self.line = line
        self.column = column


_CONTACT_KEYS = None


def _contact_keys():
    global _CONTACT_KEYS
    if _CONTACT_KEYS is None:
        from .contact2d import ContactModel
        _CONTACT_KEYS = {f.name for f in fields(ContactModel)} - {"mesh"}
    return _CONTACT_KEYS


SCHEMA = {
    "problem": {"source", "builtin", "params"},
    "mesh": {"file", "width", "height", "nx", "ny"},
    "contact": None,
    "grid": {"T", "N"},
    "stepper": {f.name for f in fields(StepperConfig)} - {"override_margin", "init_seed"},
    "output": {"dir", "verbosity"},
    "run": {"seed", "override_margin", "validate_samples"},
}


@dataclass
class RunConfig:
    source: str = "builtin"
    builtin: str = "linear"
    params: dict = field(default_factory=dict)
    mesh: dict = field(default_factory=dict)
    contact: dict = field(default_factory=dict)
    T: float = 1.0
    N: int = 16
    stepper: dict = field(default_factory=dict)
    out_dir: str = "out"
    verbosity: int = 1
    seed: int = 0
    override_margin: bool = False
    validate_samples: int = 20
    base_dir: str = "."
    path: str = ""

    def stepper_config(self):
        return StepperConfig(override_margin=self.override_margin, init_seed=self.seed,
                             **self.stepper)

    def build_problem(self, override_margin=None):
        """Construct the configured :class:`DqviProblem`."""
        om = self.override_margin if override_margin is None else override_margin
        if self.source == "builtin":
            return builtin_problem(self.builtin, override_margin=om, **self.params)
        from .contact2d import compile_model
        return compile_model(self.contact_model(), self.T, override_margin=om)

    def contact_model(self):
        from .contact2d import ContactModel, read_mesh, rectangle
        if "file" in self.mesh:
            mesh = read_mesh(os.path.join(self.base_dir, self.mesh["file"]))
        else:
            mesh = rectangle(self.mesh.get("width", 1.0), self.mesh.get("height", 1.0),
                             self.mesh.get("nx", 6), self.mesh.get("ny", 6))
        kw = dict(self.contact)
        for k in ("v_star0", "v_star_rate", "body_force", "body_force_rate", "traction",
                  "traction_rate"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return ContactModel(mesh, **kw)


def _locate(text, section, key=None):
    """Line number of ``[section]`` or of ``key`` inside it."""
    lines = text.splitlines()
    current = None
    header = re.compile(r"^\s*\[+\s*([^\]]+?)\s*\]+")
    for i, raw in enumerate(lines, start=1):
        m = header.match(raw)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return i
            continue
        if key is not None and current == section:
            if re.match(rf"^\s*\"?{re.escape(key)}\"?\s*=", raw):
                return i
    return None


def _check_keys(text, section, given, allowed, path):
    for key in given:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]",
                              line=_locate(text, section, key), path=path)


def parse_config(text, path="", base_dir="."):
    """Parse TOML text into a :class:`RunConfig`; every problem raises :class:`ConfigError`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
        raise ConfigError(f"syntax error: {msg}", line=line, column=col, path=path) from None
    for section in data:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]",
                              line=_locate(text, section) or _locate(text, None, section),
                              path=path)
        if not isinstance(data[section], dict):
            raise ConfigError(f"{section} must be a table", line=_locate(text, None, section),
                              path=path)
    cfg = RunConfig(path=path, base_dir=base_dir)
    prob = data.get("problem", {})
    _check_keys(text, "problem", prob, SCHEMA["problem"], path)
    cfg.source = prob.get("source", cfg.source)
    if cfg.source not in ("builtin", "contact"):
        raise ConfigError(f"problem.source must be 'builtin' or 'contact', got {cfg.source!r}",
                          line=_locate(text, "problem", "source"), path=path)
    cfg.builtin = prob.get("builtin", cfg.builtin)
    if cfg.source == "builtin" and cfg.builtin not in BUILTINS:
        raise ConfigError(f"unknown built-in problem {cfg.builtin!r}",
                          line=_locate(text, "problem", "builtin"), path=path)
    params = prob.get("params", {})
    _check_keys(text, "problem.params", params, set(ScalarParams.field_names()), path)
    cfg.params = dict(params)
    mesh = data.get("mesh", {})
    _check_keys(text, "mesh", mesh, SCHEMA["mesh"], path)
    cfg.mesh = dict(mesh)
    contact = data.get("contact", {})
    _check_keys(text, "contact", contact, _contact_keys(), path)
    cfg.contact = dict(contact)
    if cfg.source == "builtin" and (mesh or contact):
        raise ConfigError("[mesh] and [contact] apply to contact problems only", path=path)
    grid = data.get("grid", {})
    _check_keys(text, "grid", grid, SCHEMA["grid"], path)
    cfg.T = float(grid.get("T", cfg.T))
    cfg.N = grid.get("N", cfg.N)
    if not (cfg.T > 0):
        raise ConfigError("grid.T must be positive", line=_locate(text, "grid", "T"), path=path)
    if not isinstance(cfg.N, int) or cfg.N < 1:
        raise ConfigError("grid.N must be an integer >= 1", line=_locate(text, "grid", "N"),
                          path=path)
    if cfg.source == "builtin" and "T" in cfg.params:
        raise ConfigError("set the horizon in [grid], not in [problem.params]", path=path)
    if cfg.source == "builtin":
        cfg.params["T"] = cfg.T
    st = data.get("stepper", {})
    _check_keys(text, "stepper", st, SCHEMA["stepper"], path)
    cfg.stepper = dict(st)
    out = data.get("output", {})
    _check_keys(text, "output", out, SCHEMA["output"], path)
    cfg.out_dir = os.path.join(base_dir, out.get("dir", cfg.out_dir))
    cfg.verbosity = int(out.get("verbosity", cfg.verbosity))
    rn = data.get("run", {})
    _check_keys(text, "run", rn, SCHEMA["run"], path)
    cfg.seed = int(rn.get("seed", cfg.seed))
    cfg.override_margin = bool(rn.get("override_margin", cfg.override_margin))
    cfg.validate_samples = int(rn.get("validate_samples", cfg.validate_samples))
    try:
        cfg.stepper_config()
    except (TypeError, RejectedInput) as exc:
        raise ConfigError(f"invalid [stepper]: {exc}", line=_locate(text, "stepper"),
                          path=path) from None
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=path) from None
    return parse_config(text, path=path, base_dir=os.path.dirname(os.path.abspath(path)))
