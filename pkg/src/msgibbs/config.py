"""Experiment configuration files.

A config is one YAML document::

    schema_version: 1
    command: build-measure          # optional; must match the subcommand
    seed: 7                         # unsigned 64-bit master seed
    output: out/worked              # optional; --out overrides
    space: [2, 2]                   # level sizes, deepest level first
    hamiltonian: {log_of: [[1, 3], [2, 2]]}
    build-measure: {zetas: [[1.0, 0.5]]}

The Hamiltonian is given by exactly one of ``values`` (array over
``(x_1, ..., x_r)``), ``log_of`` (positive weights), ``constant`` or
``random: {low, high}``, or by ``worked_example: true``.  Unknown keys anywhere
are rejected, and every error names the offending field and its line.

Seed derivation from the master seed ``s``: random Hamiltonians use stream
``(s, 0)``, random observables of ``solve`` use stream ``(s, 1)``, sample runs of
``simulate`` use child seed ``(s, 2, i)``, CRP ensembles of ``cascade`` use child
seed ``(s, 3)`` and its maximizer experiment for the
``i``-th zeta child seed ``(s, 4, i)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ConfigError
from .rng import SEED_MASK, stream
from .space import CostTensor, ProductSpace, random_hamiltonian, worked_example

SCHEMA_VERSION = 1
COMMANDS = ("build-measure", "solve", "simulate", "cascade")

SECTIONS: dict[str, dict[str, bool]] = {
    # key -> required
    "build-measure": {"zetas": True, "beta": False},
    "solve": {"multipliers": False, "targets": False, "round_trip": False, "linear_response": False},
    "simulate": {"base": False, "target": True, "gammas": True, "n": True, "runs": False},
    "cascade": {"zetas": True, "crp_n": True, "replicates": True, "observables": False,
                "prior1": False, "prior2": False, "maximizer_n": False},
}
TOP = {"schema_version", "command", "seed", "output", "space", "hamiltonian", "reference", *COMMANDS}
HAMILTONIAN_KINDS = ("values", "log_of", "constant", "random", "worked_example")


def _line_map(node, path=(), out=None) -> dict[tuple, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            _line_map(v, path + (k.value,), out)
            out[path + (k.value,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


def _dotted(path) -> str:
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else str(p))
    return s


@dataclass
class _Doc:
    data: dict
    lines: dict

    def error(self, path, message) -> ConfigError:
        path = tuple(path)
        probe = path
        while probe and probe not in self.lines:
            probe = probe[:-1]
        return ConfigError(message, line=self.lines.get(probe), field=_dotted(path) or None)

    def get(self, path, default=None):
        node = self.data
        for p in path:
            try:
                node = node[p]
            except (KeyError, IndexError, TypeError):
                return default
        return node

    def require(self, path):
        missing = object()
        v = self.get(path, missing)
        if v is missing:
            raise self.error(path, "required field is missing")
        return v

    def number(self, path, *, low=-math.inf, high=math.inf, integer=False, strict_low=False, default=None):
        v = self.get(path, default) if default is not None else self.require(path)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(path, f"expected a number, got {v!r}")
        if integer and not (isinstance(v, int) or float(v).is_integer()):
            raise self.error(path, f"expected an integer, got {v!r}")
        if not math.isfinite(v) or v < low or v > high or (strict_low and v == low):
            bound = "(" if strict_low else "["
            raise self.error(path, f"value {v!r} outside {bound}{low}, {high}]")
        return int(v) if integer else float(v)

    def numbers(self, path, **kw) -> list:
        v = self.require(path)
        if not isinstance(v, list) or not v:
            raise self.error(path, "expected a non-empty list")
        return [self.number(tuple(path) + (i,), **kw) for i in range(len(v))]

    def array(self, path) -> np.ndarray:
        v = self.require(path)
        try:
            arr = np.array(v, dtype=float)
        except (TypeError, ValueError):
            raise self.error(path, "expected a rectangular numeric array") from None
        if arr.dtype == object or not np.all(np.isfinite(arr)):
            raise self.error(path, "expected a rectangular array of finite numbers")
        return arr

    def keys(self, path, allowed):
        v = self.get(path)
        if not isinstance(v, dict):
            raise self.error(path, "expected a mapping")
        for k in v:
            if k not in allowed:
                raise self.error(tuple(path) + (k,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return v


@dataclass
class ExperimentConfig:
    command: str
    space: ProductSpace
    hamiltonian: CostTensor
    seed: int
    params: dict
    reference: np.ndarray | None = None
    output: str | None = None
    config_hash: str = ""
    source: str | None = None
    lines: dict = field(default_factory=dict, repr=False)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Config with an overriding master seed (random Hamiltonians are redrawn)."""
        from dataclasses import replace

        if not 0 <= int(seed) <= SEED_MASK:
            raise ConfigError(f"seed {seed} is not an unsigned 64-bit integer", field="--seed")
        H = self.hamiltonian
        if self.params.get("_hamiltonian_kind") == "random":
            low, high = self.params["_hamiltonian_range"]
            H = random_hamiltonian(self.space, stream(int(seed), 0), low, high)
        return replace(self, seed=int(seed), hamiltonian=H)


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def _space(doc: _Doc) -> ProductSpace:
    sizes = doc.numbers(("space",), low=1, integer=True)
    return ProductSpace(tuple(sizes))


def _hamiltonian(doc: _Doc, space: ProductSpace, seed: int, params: dict) -> CostTensor:
    fields = doc.keys(("hamiltonian",), set(HAMILTONIAN_KINDS))
    kinds = [k for k in fields if k in HAMILTONIAN_KINDS]
    if len(kinds) != 1:
        raise doc.error(("hamiltonian",), f"give exactly one of {', '.join(HAMILTONIAN_KINDS)}")
    kind = kinds[0]
    params["_hamiltonian_kind"] = kind
    path = ("hamiltonian", kind)
    if kind == "worked_example":
        if fields[kind] is not True:
            raise doc.error(path, "worked_example must be true")
        H = worked_example()
        if H.space != space:
            raise doc.error(("space",), "the worked example lives on space [2, 2]")
        return H
    if kind == "constant":
        return CostTensor(space, np.full(space.shape, doc.number(path)))
    if kind == "random":
        doc.keys(path, {"low", "high"})
        low = doc.number(path + ("low",), default=-3.0)
        high = doc.number(path + ("high",), default=3.0)
        if not low < high:
            raise doc.error(path, "random range needs low < high")
        params["_hamiltonian_range"] = (low, high)
        return random_hamiltonian(space, stream(seed, 0), low, high)
    arr = doc.array(path)
    if arr.shape != space.shape:
        raise doc.error(path, f"array shape {arr.shape} does not match space shape {space.shape}")
    if kind == "log_of":
        if np.any(arr <= 0):
            raise doc.error(path, "log_of needs positive weights")
        arr = np.log(arr)
    return CostTensor(space, arr)


def _distribution(doc: _Doc, path, space: ProductSpace) -> np.ndarray | None:
    v = doc.get(path)
    if v is None or v == "uniform":
        return None
    arr = doc.array(path)
    if arr.shape != space.shape or np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-12:
        raise doc.error(path, f"expected 'uniform' or a probability array of shape {space.shape}")
    return arr


def _section(doc: _Doc, command: str, space: ProductSpace) -> dict:
    name = command
    if doc.get((name,)) is None:
        raise doc.error((name,), f"missing section '{name}'")
    fields = doc.keys((name,), set(SECTIONS[name]))
    for key, required in SECTIONS[name].items():
        if required and key not in fields:
            raise doc.error((name, key), "required field is missing")
    p: dict[str, Any] = {}
    if command == "build-measure":
        zs = doc.require((name, "zetas"))
        if not isinstance(zs, list) or not zs:
            raise doc.error((name, "zetas"), "expected a non-empty list of scale tuples")
        p["zetas"] = []
        for i, _ in enumerate(zs):
            tup = doc.numbers((name, "zetas", i), low=0.0, strict_low=True)
            if len(tup) != space.depth:
                raise doc.error((name, "zetas", i), f"expected {space.depth} scale parameters")
            p["zetas"].append(tuple(tup))
        p["beta"] = doc.number((name, "beta"), low=0.0, strict_low=True, default=1.0) if "beta" in fields else 1.0
    elif command == "solve":
        if not any(fields.get(k) for k in ("multipliers", "targets", "round_trip")):
            raise doc.error((name,), "give at least one of multipliers, targets, round_trip")
        p["multipliers"] = []
        for i, _ in enumerate(fields.get("multipliers") or []):
            path = (name, "multipliers", i)
            doc.keys(path, {"mu", "gammas"})
            gammas = doc.numbers(path + ("gammas",), low=-1.0, strict_low=True) if space.depth > 1 else []
            if len(gammas) != space.depth - 1:
                raise doc.error(path + ("gammas",), f"expected {space.depth - 1} values (gamma_r, ..., gamma_2)")
            p["multipliers"].append((doc.number(path + ("mu",), low=0.0, strict_low=True), tuple(gammas)))
        for key, names in (("targets", ("E", "S2")), ("round_trip", ("mu", "gamma"))):
            p[key] = []
            for i, _ in enumerate(fields.get(key) or []):
                path = (name, key, i)
                doc.keys(path, set(names))
                if space.depth != 2:
                    raise doc.error(path, "constrained solves need a two-level space")
                p[key].append(tuple(doc.number(path + (f,)) for f in names))
        lr = fields.get("linear_response")
        if lr is not None:
            path = (name, "linear_response")
            doc.keys(path, {"count", "step"})
            p["linear_response"] = dict(
                count=doc.number(path + ("count",), low=1, integer=True, default=3),
                step=doc.number(path + ("step",), low=0.0, strict_low=True, default=1e-5),
            )
    elif command == "simulate":
        p["base"] = _distribution(doc, (name, "base"), space)
        p["target"] = _distribution(doc, (name, "target"), space)
        if p["target"] is None:
            raise doc.error((name, "target"), "target must be an explicit probability array")
        gs = doc.require((name, "gammas"))
        if not isinstance(gs, list) or not gs:
            raise doc.error((name, "gammas"), "expected a non-empty list of reinforcement tuples")
        p["gammas"] = []
        for i, _ in enumerate(gs):
            tup = doc.numbers((name, "gammas", i), low=-1.0, strict_low=True)
            if len(tup) != space.depth:
                raise doc.error((name, "gammas", i), f"expected {space.depth} values (gamma_r, ..., gamma_1)")
            p["gammas"].append(tuple(tup))
        p["n"] = doc.numbers((name, "n"), low=1, integer=True)
        runs = fields.get("runs")
        if runs is not None:
            path = (name, "runs")
            doc.keys(path, {"n", "count"})
            p["runs"] = dict(n=doc.number(path + ("n",), low=0, integer=True),
                             count=doc.number(path + ("count",), low=1, integer=True, default=1))
    elif command == "cascade":
        if space.depth != 2:
            raise doc.error(("space",), "cascade needs a two-level space")
        p["zetas"] = doc.numbers((name, "zetas"), low=0.0, high=1.0, strict_low=True)
        for i, z in enumerate(p["zetas"]):
            if z >= 1.0:
                raise doc.error((name, "zetas", i), "zeta must lie in (0, 1)")
        p["crp_n"] = doc.numbers((name, "crp_n"), low=1, integer=True)
        p["replicates"] = doc.number((name, "replicates"), low=1, integer=True)
        obs = fields.get("observables", ["hamiltonian"])
        if not isinstance(obs, list) or not obs:
            raise doc.error((name, "observables"), "expected a non-empty list")
        for i, o in enumerate(obs):
            if o not in ("hamiltonian", "level1_indicator"):
                raise doc.error((name, "observables", i), "observables are 'hamiltonian' or 'level1_indicator'")
        p["observables"] = list(obs)
        for key, size in (("prior1", space.size(1)), ("prior2", space.size(2))):
            v = fields.get(key)
            if v is None or v == "uniform":
                p[key] = None
                continue
            arr = doc.array((name, key))
            if arr.shape != (size,) or np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-12:
                raise doc.error((name, key), f"expected 'uniform' or a probability vector of length {size}")
            p[key] = arr
        p["maximizer_n"] = (doc.number((name, "maximizer_n"), low=1, integer=True)
                            if "maximizer_n" in fields else None)
    return p


def parse_config(text: str | bytes, command: str | None = None, source: str | None = None) -> ExperimentConfig:
    raw = text.encode() if isinstance(text, str) else text
    try:
        node = yaml.compose(raw.decode("utf-8"))
        data = yaml.safe_load(raw.decode("utf-8"))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8 text: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a YAML mapping", line=1)
    doc = _Doc(data, _line_map(node))
    doc.keys((), TOP)

    version = doc.require(("schema_version",))
    if version != SCHEMA_VERSION:
        raise doc.error(("schema_version",), f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    declared = data.get("command")
    if declared is not None and declared not in COMMANDS:
        raise doc.error(("command",), f"unknown command {declared!r}")
    if command is None:
        command = declared
    elif declared is not None and declared != command:
        raise doc.error(("command",), f"config is for '{declared}', not '{command}'")
    if command is None:
        raise doc.error(("command",), "no command given")
    for other in COMMANDS:
        if other != command and other in data:
            raise doc.error((other,), f"section '{other}' does not belong to a '{command}' config")

    seed = doc.number(("seed",), low=0, high=SEED_MASK, integer=True)
    output = data.get("output")
    if output is not None and not isinstance(output, str):
        raise doc.error(("output",), "output must be a path string")
    space = _space(doc)
    params: dict[str, Any] = {}
    H = _hamiltonian(doc, space, seed, params)
    reference = _distribution(doc, ("reference",), space)
    params.update(_section(doc, command, space))
    return ExperimentConfig(command=command, space=space, hamiltonian=H, seed=seed, params=params,
                            reference=reference, output=output, config_hash=config_hash(raw),
                            source=source, lines=doc.lines)


def load_config(path: str | Path, command: str | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(raw, command, str(path))
