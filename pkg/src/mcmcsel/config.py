"""Run configuration: YAML parsing, defaults, validation and the resolved echo.

A configuration is resolved in two stages.  :func:`resolve_dict` fills every
default into a plain dictionary (the form echoed back to disk), and
:func:`build` turns that dictionary into a :class:`RunConfig`.  Resolving an
already-resolved dictionary is the identity, so the echo reproduces the run.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .divergence import DivergenceKind, bias_constant_B, bias_constant_Q
from .errors import GammaPole, MCMCSelError, ParseError, ValidationError
from .knn import default_k
from .samplers import AMParams, InitialLaw, MWGParams, StrategyConfig
from .targets import (
    UNNORMALIZED_DENSITIES,
    ConjugatePosteriorSpec,
    GaussianSpec,
    MixtureSpec,
    TargetModel,
    UnnormalizedSpec,
    synthetic_data,
)

DEFAULT_CHECKPOINTS = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 30, 50, 75, 100]
CRITERIA = ("final-value", "area-under-curve", "first-crossing")

DEFAULT_ESTIMATION = {
    "N": 1000,
    "M": 2000,
    "k": "auto",
    "mode": "auto",
    "burn_in": 1000,
    "n0": 50,
    "confidence": 0.95,
    "jitter": False,
    "reference": {"generator": "direct"},
}


@dataclass(frozen=True, eq=False)
class RunConfig:
    target: TargetModel
    strategies: list
    kind: DivergenceKind
    init: InitialLaw
    N: int
    M: int
    k: int
    mode: str
    burn_in: int
    n0: int
    level: float
    jitter: bool
    reference_generator: Optional[StrategyConfig]
    reference_x0: Optional[np.ndarray]
    checkpoints: list
    criterion: str
    threshold: Optional[float]
    master_seed: int
    output_dir: str
    resolved: dict
    figure: Optional[int] = None

    @property
    def known_f(self) -> bool:
        return self.mode == "known-f"

    def echo(self) -> str:
        return yaml.safe_dump(self.resolved, sort_keys=False, default_flow_style=None)


def _fail(field: str, msg: str):
    raise ValidationError(f"{field}: {msg}")


def _vector(value, field: str) -> list:
    try:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
    except (TypeError, ValueError):
        _fail(field, f"expected a number or list of numbers, got {value!r}")
    if arr.ndim != 1:
        _fail(field, "expected a vector")
    return [float(v) for v in arr]


def _matrix(value, d: int, field: str) -> list:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        _fail(field, f"expected a number, list or matrix, got {value!r}")
    if arr.ndim == 0:
        arr = float(arr) * np.eye(d)
    elif arr.ndim == 1:
        if arr.size != d:
            _fail(field, f"diagonal of length {arr.size} for dimension {d}")
        arr = np.diag(arr)
    if arr.shape != (d, d):
        _fail(field, f"matrix of shape {arr.shape} for dimension {d}")
    return [[float(v) for v in row] for row in arr]


def _gaussian_dict(block, field: str) -> dict:
    if not isinstance(block, dict) or "mean" not in block or "variance" not in block:
        _fail(field, "needs 'mean' and 'variance'")
    mean = _vector(block["mean"], field + ".mean")
    return {"mean": mean, "variance": _matrix(block["variance"], len(mean), field + ".variance")}


def _gaussian(block, field: str) -> GaussianSpec:
    try:
        return GaussianSpec(np.array(block["mean"]), np.array(block["variance"]))
    except MCMCSelError as exc:
        _fail(field, str(exc))


def _resolve_target(t) -> dict:
    if not isinstance(t, dict) or "kind" not in t:
        _fail("target", "needs a 'kind'")
    kind = t["kind"]
    if kind == "gaussian":
        return {"kind": kind, **_gaussian_dict(t, "target")}
    if kind == "mixture":
        comps = t.get("components")
        if not comps:
            _fail("target.components", "at least one component is required")
        out = []
        for i, c in enumerate(comps):
            if not isinstance(c, dict) or "weight" not in c:
                _fail(f"target.components[{i}]", "needs 'weight', 'mean', 'variance'")
            out.append({"weight": float(c["weight"]), **_gaussian_dict(c, f"target.components[{i}]")})
        return {"kind": kind, "components": out}
    if kind == "unnormalized":
        name = t.get("density")
        if name not in UNNORMALIZED_DENSITIES:
            _fail("target.density", f"unknown density {name!r}; known: {sorted(UNNORMALIZED_DENSITIES)}")
        support = t.get("support", [list(b) for b in UNNORMALIZED_DENSITIES[name][1]])
        return {"kind": kind, "density": name, "support": [[float(a), float(b)] for a, b in support]}
    if kind == "posterior":
        out = {"kind": kind}
        if "data" in t:
            out["data"] = _vector(t["data"], "target.data")
        elif "synthetic" in t:
            s = t["synthetic"]
            out["synthetic"] = {
                "n": int(s.get("n", 20)),
                "mean": float(s.get("mean", 1.0)),
                "variance": float(s.get("variance", 2.0)),
                "seed": int(s.get("seed", 7)),
            }
        else:
            _fail("target", "posterior needs 'data' or 'synthetic'")
        for key, default in (("m0", 0.0), ("s0sq", 10.0), ("shape", 2.0), ("rate", 2.0)):
            out[key] = float(t.get(key, default))
        return out
    _fail("target.kind", f"unknown kind {kind!r}")


def _build_target(t: dict) -> TargetModel:
    try:
        kind = t["kind"]
        if kind == "gaussian":
            spec = _gaussian(t, "target")
        elif kind == "mixture":
            spec = MixtureSpec(tuple((c["weight"], _gaussian(c, "target.components")) for c in t["components"]))
        elif kind == "unnormalized":
            fn, _ = UNNORMALIZED_DENSITIES[t["density"]]
            spec = UnnormalizedSpec(fn, tuple(map(tuple, t["support"])), name=t["density"])
        else:
            if "data" in t:
                data = np.array(t["data"])
            else:
                s = t["synthetic"]
                data = synthetic_data(s["n"], s["mean"], s["variance"], s["seed"])
            spec = ConjugatePosteriorSpec(data, t["m0"], t["s0sq"], t["shape"], t["rate"])
    except ValidationError as exc:
        if str(exc).startswith("target"):
            raise
        _fail("target", str(exc))
    return TargetModel(spec, name=kind)


def _resolve_strategy(s, i: int, field: str = "strategies") -> dict:
    f = f"{field}[{i}]"
    if not isinstance(s, dict) or "kind" not in s:
        _fail(f, "needs a 'kind'")
    kind = s["kind"]
    out = {"id": str(s.get("id", kind)), "kind": kind}
    if kind != "Gibbs":
        if "proposal" not in s:
            _fail(f, f"{kind} needs a 'proposal'")
        out["proposal"] = _gaussian_dict(s["proposal"], f + ".proposal")
    if kind == "AM":
        am = s.get("am", {}) or {}
        out["am"] = {
            "t0": int(am.get("t0", 15)),
            "scale": None if am.get("scale") is None else float(am["scale"]),
            "eps": float(am.get("eps", 1e-6)),
        }
    if kind == "MWG":
        mwg = s.get("mwg", {}) or {}
        d = len(out["proposal"]["mean"])
        out["mwg"] = {
            "selection": _vector(mwg.get("selection", [1.0 / d] * d), f + ".mwg.selection"),
            "scan": str(mwg.get("scan", "random")),
        }
    if s.get("seed_label") is not None:
        out["seed_label"] = str(s["seed_label"])
    return out


def _build_strategy(s: dict, field: str) -> StrategyConfig:
    try:
        return StrategyConfig(
            kind=s["kind"],
            proposal=GaussianSpec(np.array(s["proposal"]["mean"]), np.array(s["proposal"]["variance"])) if "proposal" in s else None,
            id=s["id"],
            am=AMParams(**s["am"]) if "am" in s else None,
            mwg=MWGParams(tuple(s["mwg"]["selection"]), s["mwg"]["scan"]) if "mwg" in s else None,
            seed_label=s.get("seed_label"),
        )
    except MCMCSelError as exc:
        _fail(field, str(exc))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_dict(raw: dict) -> dict:
    """Fill every default; the result is a valid input that resolves to itself."""
    if not isinstance(raw, dict):
        raise ParseError("configuration must be a mapping at top level")
    raw = dict(raw)
    fig = raw.pop("reproduce_figure", None)
    if fig is None:
        fig = raw.pop("figure", None)
    else:
        raw.pop("figure", None)
    if fig is not None:
        from .experiment import recipe_dict

        raw = _merge(recipe_dict(int(fig)), raw)
    out: dict = {}
    if fig is not None:
        out["figure"] = int(fig)
    seed = raw.get("master_seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        _fail("master_seed", "must be an integer in [0, 2^64)")
    out["master_seed"] = seed
    out["output_dir"] = str(raw.get("output_dir", "out"))
    if "target" not in raw:
        _fail("target", "missing")
    out["target"] = _resolve_target(raw["target"])
    strategies = raw.get("strategies")
    if not isinstance(strategies, list) or not strategies:
        _fail("strategies", "a nonempty list is required")
    out["strategies"] = [_resolve_strategy(s, i) for i, s in enumerate(strategies)]
    ids = [s["id"] for s in out["strategies"]]
    if len(set(ids)) != len(ids):
        _fail("strategies", f"strategy ids must be unique, got {ids}")
    init = raw.get("initial", {"kind": "point", "x0": [0.0]})
    if init.get("kind", "point") == "point":
        out["initial"] = {"kind": "point", "x0": _vector(init.get("x0", 0.0), "initial.x0")}
    elif init["kind"] in ("gaussian", "mixture"):
        out["initial"] = _resolve_target(init)
    else:
        _fail("initial.kind", f"unknown initial law {init['kind']!r}")
    div = raw.get("divergence", {}) or {}
    if "family" not in div or "alpha" not in div:
        _fail("divergence", "needs 'family' and 'alpha'")
    out["divergence"] = {"family": str(div["family"]).lower(), "alpha": float(div["alpha"])}
    est = _merge(DEFAULT_ESTIMATION, raw.get("estimation", {}) or {})
    unknown = set(est) - set(DEFAULT_ESTIMATION)
    if unknown:
        _fail("estimation", f"unknown keys {sorted(unknown)}")
    N, M = int(est["N"]), int(est["M"])
    k = default_k(N) if est["k"] == "auto" else est["k"]
    if not isinstance(k, int) or isinstance(k, bool):
        _fail("estimation.k", f"must be an integer or 'auto', got {k!r}")
    ref = est["reference"]
    gen = ref.get("generator", "direct")
    if gen != "direct":
        gen = _resolve_strategy(gen, 0, "estimation.reference.generator")
    ref_out = {"generator": gen}
    if ref.get("x0") is not None:
        ref_out["x0"] = _vector(ref["x0"], "estimation.reference.x0")
    out["estimation"] = {
        "N": N,
        "M": M,
        "k": int(k),
        "mode": str(est["mode"]),
        "burn_in": int(est["burn_in"]),
        "n0": int(est["n0"]),
        "confidence": float(est["confidence"]),
        "jitter": bool(est["jitter"]),
        "reference": ref_out,
    }
    cps = raw.get("checkpoints", DEFAULT_CHECKPOINTS)
    out["checkpoints"] = [int(c) for c in cps]
    out["criterion"] = str(raw.get("criterion", "final-value"))
    thr = raw.get("threshold")
    out["threshold"] = None if thr is None else float(thr)
    return out


def build(resolved: dict) -> RunConfig:
    """Validate a resolved dictionary and construct the run objects."""
    target = _build_target(resolved["target"])
    d = target.dimension
    strategies = [_build_strategy(s, f"strategies[{i}]") for i, s in enumerate(resolved["strategies"])]
    from .samplers import check_compatible

    for i, s in enumerate(strategies):
        try:
            check_compatible(s, target)
        except MCMCSelError as exc:
            _fail(f"strategies[{i}]", str(exc))
    try:
        kind = DivergenceKind(resolved["divergence"]["family"], resolved["divergence"]["alpha"])
    except ValueError as exc:
        _fail("divergence", str(exc))
    init_block = resolved["initial"]
    if init_block["kind"] == "point":
        init = InitialLaw.point_mass(init_block["x0"])
    else:
        init = InitialLaw(law=_build_target(init_block).spec)
    if init.dim != d:
        _fail("initial", f"dimension {init.dim} differs from target dimension {d}")
    if init.point is not None and not np.isfinite(target.logpdf(init.point[None, :])[0]):
        _fail("initial.x0", "starting point lies outside the target support")

    est = resolved["estimation"]
    N, M, k = est["N"], est["M"], est["k"]
    if N < 30:
        _fail("estimation.N", f"N={N}; at least 30 chains are needed for the confidence interval")
    if k < 1 or k > N - 1:
        _fail("estimation.k", f"k={k} violates 1 <= k <= N-1 = {N - 1}")
    mode = est["mode"]
    if mode == "auto":
        mode = "known-f" if target.exact else "unknown-f"
    if mode not in ("known-f", "unknown-f"):
        _fail("estimation.mode", f"unknown mode {mode!r}")
    if mode == "known-f" and not target.exact:
        _fail("estimation.mode", "known-f needs an exactly normalized target")
    if mode == "unknown-f" and (M < 2 or k > M):
        _fail("estimation.M", f"M={M} must be at least max(2, k={k})")
    try:
        (bias_constant_Q if mode == "known-f" else bias_constant_B)(k, kind.alpha)
    except GammaPole as exc:
        _fail("divergence.alpha", str(exc))
    if not 0 < est["confidence"] < 1:
        _fail("estimation.confidence", "must lie in (0, 1)")
    if est["burn_in"] < 0 or est["n0"] < 1:
        _fail("estimation", "burn_in must be >= 0 and n0 >= 1")
    gen = est["reference"]["generator"]
    ref_gen = None
    if mode == "unknown-f":
        if gen == "direct":
            if not target.directly_samplable:
                _fail("estimation.reference.generator", "target cannot be sampled directly; name an MCMC generator")
        else:
            ref_gen = _build_strategy(gen, "estimation.reference.generator")
            try:
                check_compatible(ref_gen, target)
            except MCMCSelError as exc:
                _fail("estimation.reference.generator", str(exc))
    ref_x0 = est["reference"].get("x0")
    ref_x0 = None if ref_x0 is None else np.array(ref_x0)
    if ref_x0 is not None and (ref_x0.size != d or not np.isfinite(target.logpdf(ref_x0[None, :])[0])):
        _fail("estimation.reference.x0", "must be a point in the target support")

    cps = resolved["checkpoints"]
    if not cps or cps[0] < 0 or any(b <= a for a, b in zip(cps, cps[1:])):
        _fail("checkpoints", "must be a nonempty strictly increasing list of iterations >= 0")
    crit = resolved["criterion"]
    if crit not in CRITERIA:
        _fail("criterion", f"must be one of {CRITERIA}")
    if crit == "first-crossing" and resolved["threshold"] is None:
        _fail("threshold", "required by the first-crossing criterion")

    resolved = copy.deepcopy(resolved)
    resolved["estimation"]["mode"] = mode
    return RunConfig(
        target=target,
        strategies=strategies,
        kind=kind,
        init=init,
        N=N,
        M=M,
        k=k,
        mode=mode,
        burn_in=est["burn_in"],
        n0=est["n0"],
        level=est["confidence"],
        jitter=est["jitter"],
        reference_generator=ref_gen,
        reference_x0=ref_x0,
        checkpoints=cps,
        criterion=crit,
        threshold=resolved["threshold"],
        master_seed=resolved["master_seed"],
        output_dir=resolved["output_dir"],
        resolved=resolved,
        figure=resolved.get("figure"),
    )


def from_dict(raw: dict) -> RunConfig:
    return build(resolve_dict(raw))


def parse_config(path) -> RunConfig:
    """Read, resolve and validate a YAML run configuration."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ParseError(f"{path}: {where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if raw is None:
        raise ParseError(f"{path}: empty configuration")
    try:
        return from_dict(raw)
    except (KeyError, TypeError, AttributeError) as exc:
        raise ParseError(f"{path}: malformed configuration ({exc!r})") from None
