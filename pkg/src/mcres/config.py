"""Run configuration: YAML text with complex numbers written as [re, im]."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError
from .model import ChannelMatrix, preset
from .perturbation import PotentialSpec, SeparableTerm, SiteTerm

K_DROP = 1e-12


def parse_complex(x: Any) -> complex:
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise ConfigError(f"complex numbers are [re, im] pairs, got {x!r}")
        return complex(float(x[0]), float(x[1]))
    if isinstance(x, (int, float)):
        return complex(x)
    raise ConfigError(f"cannot read {x!r} as a number")


def parse_matrix(x: Any, dim: Optional[int] = None) -> np.ndarray:
    """Nested lists of numbers or [re, im] pairs; also 'identity', {diag: [...]}, {unit: [i, j]}."""
    if isinstance(x, str):
        if x == "identity" and dim:
            return np.eye(dim, dtype=complex)
        raise ConfigError(f"unknown matrix shorthand {x!r}")
    if isinstance(x, dict):
        if dim is None:
            raise ConfigError("matrix shorthands need a known dimension")
        if "diag" in x:
            d = np.array([parse_complex(v) for v in x["diag"]])
            if len(d) != dim:
                raise ConfigError(f"diag has {len(d)} entries, expected {dim}")
            return np.diag(d)
        if "unit" in x:
            i, j = (int(v) for v in x["unit"])
            out = np.zeros((dim, dim), dtype=complex)
            out[i, j] = 1.0
            return out
        if "diag_power" in x:
            p = float(x["diag_power"])
            return np.diag(np.arange(1, dim + 1, dtype=float) ** (-p)).astype(complex)
        raise ConfigError(f"unknown matrix form {sorted(x)}")
    try:
        rows = [[parse_complex(v) for v in row] for row in x]
    except TypeError as exc:
        raise ConfigError(f"matrix must be a list of rows: {exc}") from None
    a = np.array(rows, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"matrix must be square, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise ConfigError(f"matrix has size {a.shape[0]}, expected {dim}")
    return a


def _real_if_close(a: np.ndarray) -> np.ndarray:
    return a.real.copy() if not np.any(a.imag) else a


def parse_omegas(spec: Any) -> list:
    """A list of {modulus, argument} items, or {sweep: {start, stop, count, argument}}."""
    if spec is None:
        return []
    if isinstance(spec, dict) and "sweep" in spec:
        s = spec["sweep"]
        try:
            start, stop, count = float(s["start"]), float(s["stop"]), int(s["count"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad omega sweep: {exc}") from None
        if start <= 0 or stop <= 0 or count < 1:
            raise ConfigError("omega sweep needs positive moduli and count >= 1")
        arg = float(s.get("argument", 0.0))
        mods = np.geomspace(start, stop, count)
        return [float(m) * complex(math.cos(arg), math.sin(arg)) for m in mods]
    if not isinstance(spec, list):
        spec = [spec]
    out = []
    for item in spec:
        if isinstance(item, dict):
            mod = float(item.get("modulus", 0.0))
            arg = float(item.get("argument", 0.0))
            if mod < 0:
                raise ConfigError("omega modulus must be nonnegative")
            out.append(0j if mod == 0 else mod * complex(math.cos(arg), math.sin(arg)))
        else:
            out.append(parse_complex(item))
    return out


@dataclass
class RunConfig:
    raw: dict
    matrix: ChannelMatrix
    potential: PotentialSpec
    case: str
    rho: float
    box: Optional[int]
    threshold: complex
    side: str
    omegas: list
    eps0: Optional[float]
    region: str
    puncture: float
    search_tol: float
    seed: int
    cluster_constant: float
    accumulate: dict
    crosscheck: dict
    output: dict
    notes: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.matrix.dim


def _get(d: dict, key: str, default=None):
    v = d.get(key, default)
    return default if v is None else v


def _build_model(raw: dict, case: str) -> ChannelMatrix:
    m = raw.get("model")
    if not isinstance(m, dict):
        raise ConfigError("model section missing")
    if "preset" in m:
        params = dict(m.get("params") or {})
        if case == "B" and m["preset"] == "semistrip" and "truncation" in raw:
            params.setdefault("J", int(raw["truncation"]))
        return preset(str(m["preset"]), params)
    if "matrix" in m:
        a = _real_if_close(parse_matrix(m["matrix"]))
        return ChannelMatrix(a, rank_hint=m.get("rank_hint"))
    raise ConfigError("model needs 'preset' or 'matrix'")


def _build_K(spec: Any, dim: int, notes: list) -> np.ndarray:
    K = parse_matrix(spec, dim)
    dropped = np.where(np.abs(K) < K_DROP, 0.0, K)
    err = float(np.linalg.norm(K - dropped, 2))
    if isinstance(spec, dict) and "diag_power" in spec:
        # the next omitted entry of an infinite diag(j^-p) sequence
        err = max(err, (dim + 1) ** (-float(spec["diag_power"])))
    notes.append(f"K truncation error bound {err:.3e}")
    return _real_if_close(dropped)


def _build_potential(raw: dict, dim: int, case: str, rho: float, notes: list) -> PotentialSpec:
    p = raw.get("potential")
    if not isinstance(p, dict):
        raise ConfigError("potential section missing")
    terms = []
    for t in p.get("terms") or []:
        kind = t.get("type", "site")
        block = _real_if_close(parse_matrix(t.get("block", "identity"), dim))
        scale = parse_complex(t.get("scale", 1.0))
        block = block * scale if scale != 1 else block
        if kind == "site":
            terms.append(SiteTerm(int(t.get("n", 0)), int(t.get("m", 0)), block))
        elif kind == "separable":
            terms.append(SeparableTerm(float(t.get("left_rate", rho)), float(t.get("right_rate", rho)), block,
                                       int(t.get("left_sign", 1)), int(t.get("right_sign", 1))))
        else:
            raise ConfigError(f"unknown potential term type {kind!r}")
    kind = str(p.get("kind", case))
    K = _build_K(p["K"], dim, notes) if kind == "B" and "K" in p else None
    return PotentialSpec(kind, tuple(terms), float(p.get("rho", rho)), dim,
                         p.get("decay_constant"), K, int(p.get("sign", 1)))


def set_dotted(raw: dict, key: str, value: Any) -> None:
    cur = raw
    parts = key.split(".")
    for p in parts[:-1]:
        nxt = cur.get(p)
        if not isinstance(nxt, dict):
            nxt = {}
            cur[p] = nxt
        cur = nxt
    cur[parts[-1]] = value


def from_dict(raw: dict) -> RunConfig:
    raw = copy.deepcopy(raw)
    notes: list = []
    case = str(_get(raw, "case", "A")).upper()
    if case not in ("A", "B"):
        raise ConfigError("case must be 'A' or 'B'")
    rho = float(_get(raw, "rho", 1.0))
    if rho <= 0:
        raise ConfigError("rho must be positive")
    M = _build_model(raw, case)
    P = _build_potential(raw, M.dim, case, rho, notes)
    th = raw.get("threshold") or {}
    tol = raw.get("tolerances") or {}
    search_tol = float(_get(tol, "search", 1e-9))
    puncture = float(_get(tol, "puncture", 1e-4))
    if search_tol <= 0 or puncture <= 0:
        raise ConfigError("tolerances must be positive")
    box = raw.get("box")
    eps0 = raw.get("eps0")
    cfg = RunConfig(
        raw=raw, matrix=M, potential=P, case=case, rho=rho,
        box=None if box is None else int(box),
        threshold=parse_complex(_get(th, "value", 0.0)),
        side=str(_get(th, "side", "left")),
        omegas=parse_omegas(raw.get("omega")),
        eps0=None if eps0 is None else float(eps0),
        region=str(_get(raw, "region", "omega")),
        puncture=puncture, search_tol=search_tol,
        seed=int(_get(raw, "seed", 0)),
        cluster_constant=float(_get(raw, "cluster_constant", 1.0)),
        accumulate=dict(raw.get("accumulate") or {}),
        crosscheck=dict(raw.get("crosscheck") or {}),
        output=dict(raw.get("output") or {}),
        notes=notes,
    )
    if cfg.side not in ("left", "right"):
        raise ConfigError("threshold side must be 'left' or 'right'")
    return cfg


def load(path: str | Path, overrides: Optional[list] = None) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    for key, value in overrides or []:
        set_dotted(raw, key, value)
    return from_dict(raw)
