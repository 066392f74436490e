"""JSON scenario files: parsing with field-path errors, and canonical serialization.

Two document kinds are supported.  A generic scenario lists the agents'
models (or one model with ``replicate_model: N``) and the timed events.  A
``"kind": "cartpole"`` scenario stores the recipe handed to
:func:`netsched.cartpole.build_cartpole_scenario`.  Serialization always
writes the generic, fully explicit form (sampling recipes are kept, realized
matrices are not).
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import NoiseModel
from .scheduling import SlotBudget
from .simulator import ASampling, AgentSpec, ScenarioConfig, ScenarioEvent
from .types import Policy

__all__ = [
    "SCHEMA_VERSION",
    "ScenarioError",
    "bundled_path",
    "bundled_scenario",
    "dump_scenario",
    "load_scenario",
    "parse_scenario",
    "scenario_to_dict",
]

SCHEMA_VERSION = 1
_DATA = Path(__file__).parent / "data"


class ScenarioError(ValueError):
    """Invalid scenario document; ``path`` is the dotted location of the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _get(doc: dict, key: str, path: str, kind=None, default: Any = ...):
    where = f"{path}.{key}" if path else key
    if key not in doc:
        if default is ...:
            raise ScenarioError(where, "required field is missing")
        return default
    val = doc[key]
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ScenarioError(where, f"expected an integer, got {val!r}")
    elif kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ScenarioError(where, f"expected a number, got {val!r}")
        val = float(val)
    elif kind is not None and not isinstance(val, kind):
        raise ScenarioError(where, f"expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}")
    return val


def _matrix(val, path: str, dim: int | None = None) -> np.ndarray:
    try:
        m = np.array(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(path, "expected a row-major nested array of numbers") from exc
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ScenarioError(path, f"expected a square matrix, got shape {m.shape}")
    if dim is not None and m.shape[0] != dim:
        raise ScenarioError(path, f"expected a {dim}x{dim} matrix, got {m.shape[0]}x{m.shape[1]}")
    return m


def _vector(val, path: str, dim: int) -> np.ndarray:
    try:
        v = np.array(val, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(path, "expected an array of numbers") from exc
    if v.shape != (dim,):
        raise ScenarioError(path, f"expected length {dim}, got shape {v.shape}")
    return v


def _noise(doc, path: str, dim: int) -> NoiseModel:
    if not isinstance(doc, dict):
        raise ScenarioError(path, "expected an object")
    forms = [k for k in ("cov", "scale", "diag") if k in doc]
    if len(forms) != 1:
        raise ScenarioError(path, "give exactly one of cov, scale, diag")
    if "cov" in doc:
        cov = _matrix(doc["cov"], f"{path}.cov", dim)
    elif "scale" in doc:
        cov = _get(doc, "scale", path, float) * np.eye(dim)
    else:
        cov = np.diag(_vector(doc["diag"], f"{path}.diag", dim))
    kwargs = {}
    for key in ("mean", "sine_amplitude"):
        if key in doc:
            kwargs[key] = _vector(doc[key], f"{path}.{key}", dim)
    for key in ("sine_freq", "sine_phase"):
        if key in doc:
            kwargs[key] = _get(doc, key, path, float)
    try:
        return NoiseModel(cov, **kwargs)
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from exc


def _model_dim(doc: dict, path: str) -> int:
    if "dim" in doc:
        dim = _get(doc, "dim", path, int)
        if dim < 1:
            raise ScenarioError(f"{path}.dim", "must be positive")
        return dim
    if "a_matrix" in doc:
        return _matrix(doc["a_matrix"], f"{path}.a_matrix").shape[0]
    noise = doc.get("noise", {})
    if isinstance(noise, dict) and "cov" in noise:
        return _matrix(noise["cov"], f"{path}.noise.cov").shape[0]
    raise ScenarioError(path, "cannot infer dimension; give dim or a_matrix")


def _sampling(doc, path: str) -> ASampling:
    if not isinstance(doc, dict):
        raise ScenarioError(path, "expected an object")
    known = {"dist", "low", "high", "normalize", "shared", "max_resample"}
    extra = set(doc) - known
    if extra:
        raise ScenarioError(path, f"unknown fields {sorted(extra)}")
    try:
        return ASampling(**doc)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(path, str(exc)) from exc


def _agent(doc, path: str) -> AgentSpec:
    if not isinstance(doc, dict):
        raise ScenarioError(path, "expected an object")
    dim = _model_dim(doc, path)
    noise = _noise(_get(doc, "noise", path, dict), f"{path}.noise", dim)
    if ("a_matrix" in doc) == ("a_sampling" in doc):
        raise ScenarioError(path, "give exactly one of a_matrix and a_sampling")
    if "a_matrix" in doc:
        return AgentSpec(noise, a_matrix=_matrix(doc["a_matrix"], f"{path}.a_matrix", dim))
    return AgentSpec(noise, a_sampling=_sampling(doc["a_sampling"], f"{path}.a_sampling"))


def _budget(doc, path: str, n_agents: int) -> SlotBudget:
    k_total = _get(doc, "k_total", path, int)
    k_per = _get(doc, "k_per", path, int, default=k_total)
    k_pred = _get(doc, "k_pred", path, int)
    if k_pred >= k_per:
        raise ScenarioError(
            f"{path}.k_pred", f"budget.k_pred ({k_pred}) must be less than budget.k_per ({k_per})"
        )
    if k_per != k_total:
        raise ScenarioError(f"{path}.k_per", f"budget.k_per ({k_per}) must equal budget.k_total ({k_total})")
    if not 1 <= k_pred or k_total >= n_agents:
        raise ScenarioError(path, f"need 1 <= k_pred < k_per <= k_total < n_agents ({n_agents})")
    return SlotBudget(k_total, k_per, k_pred)


def _events(items, path: str, dim: int) -> list[ScenarioEvent]:
    if not isinstance(items, list):
        raise ScenarioError(path, "expected a list")
    events = []
    for j, doc in enumerate(items):
        where = f"{path}[{j}]"
        if not isinstance(doc, dict):
            raise ScenarioError(where, "expected an object")
        step = _get(doc, "step", where, int)
        agents = _get(doc, "agents", where, list)
        if not agents or not all(isinstance(a, int) and not isinstance(a, bool) for a in agents):
            raise ScenarioError(f"{where}.agents", "expected a non-empty list of integer agent ids")
        noise = _noise(doc["noise"], f"{where}.noise", dim) if "noise" in doc else None
        a = _matrix(doc["a_matrix"], f"{where}.a_matrix", dim) if "a_matrix" in doc else None
        a_est = _matrix(doc["a_estimate"], f"{where}.a_estimate", dim) if "a_estimate" in doc else None
        if noise is None and a is None:
            raise ScenarioError(where, "event changes nothing; give noise and/or a_matrix")
        try:
            events.append(ScenarioEvent(step, tuple(agents), noise, a, a_est))
        except ValueError as exc:
            raise ScenarioError(where, str(exc)) from exc
    return events


def _cartpole(doc: dict, common: dict) -> ScenarioConfig:
    from .cartpole import CartPoleParams, build_cartpole_scenario

    spec = _get(doc, "cartpole", "", dict)
    kwargs = dict(spec)
    if "params" in kwargs:
        try:
            kwargs["params"] = CartPoleParams(**kwargs["params"])
        except (TypeError, ValueError) as exc:
            raise ScenarioError("cartpole.params", str(exc)) from exc
    budget = common.pop("budget")
    kwargs.update(common, k_per=budget.k_per, k_pred=budget.k_pred)
    kwargs["name"] = _get(doc, "name", "", str, default="cartpole")
    name = kwargs.pop("name", "cartpole")
    try:
        return replace(build_cartpole_scenario(**kwargs), name=name)
    except TypeError as exc:
        raise ScenarioError("cartpole", str(exc)) from exc


def parse_scenario(data: bytes | str | dict) -> ScenarioConfig:
    """Validate a scenario document and build its :class:`ScenarioConfig`."""
    if isinstance(data, dict):
        doc = data
    else:
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"line {exc.lineno} column {exc.colno}", exc.msg) from exc
    if not isinstance(doc, dict):
        raise ScenarioError("", "scenario must be a JSON object")
    version = _get(doc, "version", "", int)
    if version != SCHEMA_VERSION:
        raise ScenarioError("version", f"unsupported version {version}, expected {SCHEMA_VERSION}")

    n_agents = _get(doc, "n_agents", "", int)
    if n_agents < 2:
        raise ScenarioError("n_agents", "need at least two agents")
    common: dict[str, Any] = {
        "n_agents": n_agents,
        "horizon": _get(doc, "horizon", "", int),
        "delta": _get(doc, "delta", "", float),
        "budget": _budget(_get(doc, "budget", "", dict), "budget", n_agents),
        "seed": _get(doc, "seed", "", int, default=0),
        "replicates": _get(doc, "replicates", "", int, default=1),
    }
    policy = _get(doc, "policy", "", str, default="adaptive")
    try:
        common["policy"] = Policy(policy)
    except ValueError as exc:
        raise ScenarioError("policy", f"unknown policy {policy!r}") from exc
    if common["horizon"] < 1:
        raise ScenarioError("horizon", "must be positive")
    if not common["delta"] > 0:
        raise ScenarioError("delta", "must be positive")
    if not 0 <= common["seed"] < 2**64:
        raise ScenarioError("seed", "must be a 64-bit unsigned integer")
    if common["replicates"] < 1:
        raise ScenarioError("replicates", "must be positive")

    kind = _get(doc, "kind", "", str, default="generic")
    if kind == "cartpole":
        try:
            return _cartpole(doc, common)
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError("cartpole", str(exc)) from exc
    if kind != "generic":
        raise ScenarioError("kind", f"unknown scenario kind {kind!r}")

    if ("models" in doc) == ("model" in doc):
        raise ScenarioError("", "give exactly one of models and model")
    if "model" in doc:
        count = _get(doc, "replicate_model", "", int, default=n_agents)
        if count != n_agents:
            raise ScenarioError("replicate_model", f"must equal n_agents ({n_agents})")
        agents = [_agent(doc["model"], "model")] * n_agents
    else:
        items = _get(doc, "models", "", list)
        if len(items) != n_agents:
            raise ScenarioError("models", f"expected {n_agents} models, got {len(items)}")
        agents = [_agent(m, f"models[{i}]") for i, m in enumerate(items)]
    dim = agents[0].dim
    events = _events(doc.get("events", []), "events", dim)

    extra: dict[str, Any] = {}
    if "agent_deltas" in doc:
        extra["agent_deltas"] = tuple(_vector(doc["agent_deltas"], "agent_deltas", n_agents))
    extra["reid_lag"] = _get(doc, "reid_lag", "", int, default=0)
    extra["inclusive_bound"] = _get(doc, "inclusive_bound", "", bool, default=False)
    if doc.get("initial_state") is not None:
        extra["initial_state"] = tuple(_vector(doc["initial_state"], "initial_state", dim))
    if doc.get("initial_error") is not None:
        rows = _get(doc, "initial_error", "", list)
        if len(rows) != n_agents:
            raise ScenarioError("initial_error", f"expected {n_agents} vectors")
        extra["initial_error"] = tuple(
            tuple(_vector(r, f"initial_error[{i}]", dim)) for i, r in enumerate(rows)
        )
    try:
        return ScenarioConfig(
            agents=tuple(agents),
            events=tuple(events),
            name=_get(doc, "name", "", str, default=""),
            **common,
            **extra,
        )
    except ValueError as exc:
        raise ScenarioError("", str(exc)) from exc


def load_scenario(path: str | Path) -> ScenarioConfig:
    return parse_scenario(Path(path).read_bytes())


def bundled_path(name: str) -> Path:
    """Path of a shipped scenario file (``synthetic20`` or ``cartpole20``)."""
    path = _DATA / f"{name.removesuffix('.json')}.json"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return path


def bundled_scenario(name: str) -> ScenarioConfig:
    return load_scenario(bundled_path(name))


def _noise_dict(nm: NoiseModel) -> dict:
    out: dict[str, Any] = {"cov": nm.cov.tolist()}
    if np.any(nm.mean):
        out["mean"] = nm.mean.tolist()
    if nm.has_sine:
        out.update(
            sine_amplitude=nm.sine_amplitude.tolist(), sine_freq=nm.sine_freq, sine_phase=nm.sine_phase
        )
    return out


def scenario_to_dict(config: ScenarioConfig) -> dict:
    """Canonical, explicit JSON-ready form of a scenario."""
    models = []
    for spec in config.agents:
        m: dict[str, Any] = {"dim": spec.dim, "noise": _noise_dict(spec.noise)}
        if spec.a_matrix is not None:
            m["a_matrix"] = spec.a_matrix.tolist()
        else:
            s = spec.a_sampling
            m["a_sampling"] = {
                "dist": s.dist,
                "low": s.low,
                "high": s.high,
                "normalize": s.normalize,
                "shared": s.shared,
                "max_resample": s.max_resample,
            }
        models.append(m)
    events = []
    for ev in config.events:
        e: dict[str, Any] = {"step": ev.step, "agents": list(ev.agents)}
        if ev.noise is not None:
            e["noise"] = _noise_dict(ev.noise)
        if ev.a_matrix is not None:
            e["a_matrix"] = ev.a_matrix.tolist()
        if ev.a_estimate is not None:
            e["a_estimate"] = ev.a_estimate.tolist()
        events.append(e)
    doc: dict[str, Any] = {
        "version": SCHEMA_VERSION,
        "name": config.name,
        "n_agents": config.n_agents,
        "horizon": config.horizon,
        "delta": config.delta,
        "budget": {
            "k_total": config.budget.k_total,
            "k_per": config.budget.k_per,
            "k_pred": config.budget.k_pred,
        },
        "policy": config.policy.value,
        "seed": config.seed,
        "replicates": config.replicates,
        "models": models,
        "events": events,
        "reid_lag": config.reid_lag,
        "inclusive_bound": config.inclusive_bound,
    }
    if config.agent_deltas is not None:
        doc["agent_deltas"] = list(config.agent_deltas)
    if config.initial_state is not None:
        doc["initial_state"] = list(config.initial_state)
    if config.initial_error is not None:
        doc["initial_error"] = [list(e) for e in config.initial_error]
    return doc


def dump_scenario(config: ScenarioConfig) -> str:
    return json.dumps(scenario_to_dict(config), indent=2) + "\n"
