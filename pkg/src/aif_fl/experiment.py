"""Experiment definitions: JSON config files to validated :class:`ExperimentSpec`."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .agent import DEFAULT_EPSILON, ConfigPoint, SloSpec
from .fedsim import DeviceProfile, Policy
from .stream import QuantitySchedule


class SpecError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass(frozen=True)
class StreamConfig:
    n_features: int = 10
    n_classes: int = 5
    n_centroids: int = 50
    drift_speed: float = 0.0


@dataclass(frozen=True)
class ExperimentSpec:
    n_clients: int = 5
    n_rounds: int = 60
    repetitions: int = 1
    base_seed: int = 0
    slo: SloSpec = SloSpec(2.0, 0.97)
    schedule: QuantitySchedule = QuantitySchedule(((1, 1000),))
    stream: StreamConfig = StreamConfig()
    hidden_dims: tuple[int, int] = (64, 32)
    devices: tuple[DeviceProfile, ...] = ()
    policies: tuple[Policy, ...] = ()
    time_pref: tuple[float, float] = (0.001, 0.999)
    perf_pref: tuple[float, float] = (0.001, 0.999)
    warmup_cap: int = 10
    epsilon: float = DEFAULT_EPSILON
    epochs: int = 3
    alpha: float = 1.0
    max_parents: int = 3
    timing: str = "synthetic"
    tie_break: str = "random"

    def __post_init__(self):
        if self.n_clients < 1:
            raise SpecError("n_clients: must be >= 1")
        if self.repetitions < 1:
            raise SpecError("repetitions: must be >= 1")
        if self.n_rounds < 1:
            raise SpecError("n_rounds: must be >= 1")
        if not self.devices:
            object.__setattr__(self, "devices", (DeviceProfile(),) * self.n_clients)
        if not self.policies:
            object.__setattr__(self, "policies", (Policy("aif"),) * self.n_clients)
        if len(self.devices) != self.n_clients:
            raise SpecError(f"devices: expected 1 or {self.n_clients} entries, got {len(self.devices)}")
        if len(self.policies) != self.n_clients:
            raise SpecError(f"policies: expected 1 or {self.n_clients} entries, got {len(self.policies)}")
        if self.timing not in ("synthetic", "measured"):
            raise SpecError("timing: must be 'synthetic' or 'measured'")
        if self.tie_break not in ("grid", "random"):
            raise SpecError("tie_break: must be 'grid' or 'random'")

    @property
    def run_seeds(self) -> list[int]:
        return [self.base_seed + k for k in range(self.repetitions)]

    def replace(self, **changes) -> "ExperimentSpec":
        from dataclasses import replace

        return replace(self, **changes)


_TOP_KEYS = {
    "n_clients", "n_rounds", "repetitions", "base_seed", "slo", "quantity_schedule", "stream",
    "mlp", "devices", "policies", "preferences", "warmup_cap", "epsilon", "epochs", "alpha",
    "max_parents", "timing", "tie_break",
}


def _expect_keys(obj: Any, allowed: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise SpecError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise SpecError(f"{where}: unknown key(s) {unknown}")
    return obj


def _num(obj: dict, key: str, where: str, kind=float, default=None):
    if key not in obj:
        if default is None:
            raise SpecError(f"{where}.{key}: required")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecError(f"{where}.{key}: expected a number, got {value!r}")
    if kind is int and value != int(value):
        raise SpecError(f"{where}.{key}: expected an integer, got {value!r}")
    return kind(value)


def _config_point(value: Any, where: str) -> ConfigPoint:
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise SpecError(f"{where}: expected [batch_size, learning_rate]")
    try:
        return ConfigPoint(int(value[0]), float(value[1]))
    except ValueError as exc:
        raise SpecError(f"{where}: {exc}") from None


def _policy(value: Any, where: str) -> Policy:
    if value in ("aif", "random"):
        return Policy(value)
    if isinstance(value, dict) and set(value) == {"fixed"}:
        return Policy("fixed", _config_point(value["fixed"], f"{where}.fixed"))
    raise SpecError(f"{where}: expected 'aif', 'random' or {{\"fixed\": [bs, lr]}}, got {value!r}")


def _device(value: Any, where: str) -> DeviceProfile:
    obj = _expect_keys(value, {"name", "c0", "c1"}, where)
    try:
        return DeviceProfile(str(obj.get("name", "default")), _num(obj, "c0", where, default=0.1), _num(obj, "c1", where, default=1e-4))
    except ValueError as exc:
        raise SpecError(f"{where}: {exc}") from None


def _broadcast(values: list, n: int, where: str) -> tuple:
    if len(values) == 1:
        return tuple(values) * n
    if len(values) != n:
        raise SpecError(f"{where}: expected 1 or {n} entries, got {len(values)}")
    return tuple(values)


def spec_from_dict(raw: dict) -> ExperimentSpec:
    obj = _expect_keys(raw, _TOP_KEYS, "config")
    base = ExperimentSpec()
    n_clients = _num(obj, "n_clients", "config", int, base.n_clients)

    slo = base.slo
    if "slo" in obj:
        s = _expect_keys(obj["slo"], {"time_limit", "accuracy_target"}, "slo")
        try:
            slo = SloSpec(_num(s, "time_limit", "slo", default=slo.time_limit), _num(s, "accuracy_target", "slo", default=slo.accuracy_target))
        except ValueError as exc:
            raise SpecError(f"slo: {exc}") from None

    schedule = base.schedule
    if "quantity_schedule" in obj:
        try:
            schedule = QuantitySchedule(tuple(tuple(bp) for bp in obj["quantity_schedule"]))
        except (TypeError, ValueError) as exc:
            raise SpecError(f"quantity_schedule: {exc}") from None

    stream = base.stream
    if "stream" in obj:
        s = _expect_keys(obj["stream"], {"n_features", "n_classes", "n_centroids", "drift_speed"}, "stream")
        stream = StreamConfig(
            _num(s, "n_features", "stream", int, stream.n_features),
            _num(s, "n_classes", "stream", int, stream.n_classes),
            _num(s, "n_centroids", "stream", int, stream.n_centroids),
            _num(s, "drift_speed", "stream", float, stream.drift_speed),
        )
        if stream.n_classes < 2 or stream.n_centroids < stream.n_classes or stream.drift_speed < 0 or stream.n_features < 1:
            raise SpecError("stream: need n_features >= 1, n_classes >= 2, n_centroids >= n_classes, drift_speed >= 0")

    hidden = base.hidden_dims
    if "mlp" in obj:
        m = _expect_keys(obj["mlp"], {"hidden_dims"}, "mlp")
        hd = m.get("hidden_dims", list(hidden))
        if not (isinstance(hd, list) and len(hd) == 2 and all(isinstance(h, int) and h >= 1 for h in hd)):
            raise SpecError("mlp.hidden_dims: expected two positive integers")
        hidden = tuple(hd)

    devices: tuple = ()
    if "devices" in obj:
        if not isinstance(obj["devices"], list) or not obj["devices"]:
            raise SpecError("devices: expected a nonempty list")
        devices = _broadcast([_device(d, f"devices[{i}]") for i, d in enumerate(obj["devices"])], n_clients, "devices")

    policies: tuple = ()
    if "policies" in obj:
        raw_p = obj["policies"]
        if not isinstance(raw_p, list):
            raw_p = [raw_p]
        policies = _broadcast([_policy(p, f"policies[{i}]") for i, p in enumerate(raw_p)], n_clients, "policies")

    time_pref, perf_pref = base.time_pref, base.perf_pref
    if "preferences" in obj:
        p = _expect_keys(obj["preferences"], {"time", "perf"}, "preferences")
        for key in ("time", "perf"):
            if key in p:
                v = p[key]
                if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and x > 0 for x in v)):
                    raise SpecError(f"preferences.{key}: expected two positive weights")
        time_pref = tuple(float(x) for x in p.get("time", time_pref))
        perf_pref = tuple(float(x) for x in p.get("perf", perf_pref))

    timing = obj.get("timing", base.timing)
    return ExperimentSpec(
        n_clients=n_clients,
        n_rounds=_num(obj, "n_rounds", "config", int, base.n_rounds),
        repetitions=_num(obj, "repetitions", "config", int, base.repetitions),
        base_seed=_num(obj, "base_seed", "config", int, base.base_seed),
        slo=slo,
        schedule=schedule,
        stream=stream,
        hidden_dims=hidden,
        devices=devices,
        policies=policies,
        time_pref=time_pref,
        perf_pref=perf_pref,
        warmup_cap=_num(obj, "warmup_cap", "config", int, base.warmup_cap),
        epsilon=_num(obj, "epsilon", "config", float, base.epsilon),
        epochs=_num(obj, "epochs", "config", int, base.epochs),
        alpha=_num(obj, "alpha", "config", float, base.alpha),
        max_parents=_num(obj, "max_parents", "config", int, base.max_parents),
        timing=timing,
        tie_break=obj.get("tie_break", base.tie_break),
    )


def parse_spec(path) -> ExperimentSpec:
    path = Path(path)
    if not path.exists():
        raise SpecError(f"{path}: no such file")
    text = path.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return spec_from_dict(raw)
    except SpecError as exc:
        raise SpecError(f"{path}: {exc}") from None


def _policy_to_json(p: Policy):
    if p.kind == "fixed":
        return {"fixed": [p.config.batch_size, p.config.learning_rate]}
    return p.kind


def spec_to_dict(spec: ExperimentSpec) -> dict:
    """Fully resolved config (every default filled in); round-trips through spec_from_dict."""
    return {
        "n_clients": spec.n_clients,
        "n_rounds": spec.n_rounds,
        "repetitions": spec.repetitions,
        "base_seed": spec.base_seed,
        "slo": {"time_limit": spec.slo.time_limit, "accuracy_target": spec.slo.accuracy_target},
        "quantity_schedule": [list(bp) for bp in spec.schedule.breakpoints],
        "stream": {
            "n_features": spec.stream.n_features,
            "n_classes": spec.stream.n_classes,
            "n_centroids": spec.stream.n_centroids,
            "drift_speed": spec.stream.drift_speed,
        },
        "mlp": {"hidden_dims": list(spec.hidden_dims)},
        "devices": [{"name": d.name, "c0": d.c0, "c1": d.c1} for d in spec.devices],
        "policies": [_policy_to_json(p) for p in spec.policies],
        "preferences": {"time": list(spec.time_pref), "perf": list(spec.perf_pref)},
        "warmup_cap": spec.warmup_cap,
        "epsilon": spec.epsilon,
        "epochs": spec.epochs,
        "alpha": spec.alpha,
        "max_parents": spec.max_parents,
        "timing": spec.timing,
        "tie_break": spec.tie_break,
    }


def write_spec(spec: ExperimentSpec, path) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")
