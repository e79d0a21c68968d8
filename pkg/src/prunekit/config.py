"""Run configuration and its ``key = value`` text form.

Top-level lines set run keys; a ``[layer <id>]`` header opens a section
whose ``rate = ...`` overrides the goal pruning rate of that layer::

    mode = GHFP
    goal_rate = 0.4
    t_max = 40

    [layer conv3]
    rate = 0.3
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .pruning import Mode, ScheduleConfig
from .tensor import SgdConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleConfig = field(default_factory=lambda: ScheduleConfig(t_max=40))
    sgd: SgdConfig = field(default_factory=SgdConfig)
    batch_size: int = 64
    seed: int = 0
    arch: str = "tinyconvnet"
    classes: int = 10
    n_train: int = 2000
    n_test: int = 500
    noise: float = 0.3
    contrast: float = 0.3
    metrics_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    pretrained: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.arch != "tinyconvnet":
            raise ValueError(f"only tinyconvnet is executable, got {self.arch!r}")

    @property
    def epochs(self) -> int:
        return self.schedule.t_max

    def replace(self, **kw) -> "RunConfig":
        """Copy with top-level, schedule or sgd fields overridden by name."""
        sched = {k: kw.pop(k) for k in list(kw) if k in _SCHEDULE_KEYS}
        sgd = {k: kw.pop(k) for k in list(kw) if k in _SGD_KEYS}
        if sched:
            kw["schedule"] = dataclasses.replace(self.schedule, **sched)
        if sgd:
            kw["sgd"] = dataclasses.replace(self.sgd, **sgd)
        return dataclasses.replace(self, **kw)


_SCHEDULE_KEYS = {f.name for f in dataclasses.fields(ScheduleConfig)} - {"layer_rates"}
_SGD_KEYS = {f.name for f in dataclasses.fields(SgdConfig)}
_RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"schedule", "sgd"}
_INT_KEYS = {"t_max", "batch_size", "seed", "classes", "n_train", "n_test"}
_STR_KEYS = {"rate_ramp", "criterion", "arch", "metrics_path", "checkpoint_path", "pretrained"}

DEFAULTS_HELP = "\n".join(
    [f"  {k} = {getattr(ScheduleConfig(t_max=40), k)}" for k in sorted(_SCHEDULE_KEYS)]
    + [f"  {k} = {getattr(SgdConfig(), k)}" for k in sorted(_SGD_KEYS)]
    + [f"  {k} = {getattr(RunConfig(), k)}" for k in sorted(_RUN_KEYS)]
)


def _convert(key: str, raw: str):
    if key == "mode":
        return Mode.parse(raw)
    if key in _STR_KEYS:
        return None if raw.lower() in ("", "none") else raw
    if key in _INT_KEYS:
        return int(raw)
    return float(raw)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    top: dict = {}
    layer_rates: dict[str, float] = {}
    section: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if line.startswith("["):
            parts = line.strip("[]").split()
            if not line.endswith("]") or len(parts) != 2 or parts[0] != "layer":
                raise ConfigError(f"{where}: expected '[layer <id>]', got {line!r}")
            section = parts[1]
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        if section is not None:
            if key != "rate":
                raise ConfigError(f"{where}: layer sections only accept 'rate', got {key!r}")
            try:
                layer_rates[section] = float(value)
            except ValueError:
                raise ConfigError(f"{where}: bad rate {value!r}") from None
            continue
        if key not in _SCHEDULE_KEYS | _SGD_KEYS | _RUN_KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            top[key] = (lineno, _convert(key, value))
        except ValueError as e:
            raise ConfigError(f"{where}: bad value for {key!r}: {e}") from None
    values = {k: v for k, (_, v) in top.items()}
    try:
        sched = {k: values.pop(k) for k in list(values) if k in _SCHEDULE_KEYS}
        sched.setdefault("t_max", 40)
        # unset keys fall back to the chosen mode's usual defaults
        mode = sched.pop("mode", Mode.GHFP)
        goal = sched.pop("goal_rate", 0.0)
        sgd = {k: values.pop(k) for k in list(values) if k in _SGD_KEYS}
        return RunConfig(schedule=ScheduleConfig.for_mode(mode, goal, layer_rates=layer_rates, **sched),
                         sgd=SgdConfig(**sgd), **values)
    except ValueError as e:
        # validation runs on the assembled config; point at the key it names
        lineno = next((ln for k, (ln, _) in top.items() if k in str(e)), None)
        where = source if lineno is None else f"{source}:{lineno}"
        raise ConfigError(f"{where}: {e}") from None


def config_to_text(cfg: RunConfig) -> str:
    s = cfg.schedule
    lines = [f"mode = {s.mode.value}"]
    for k in sorted(_SCHEDULE_KEYS - {"mode"}):
        lines.append(f"{k} = {getattr(s, k)!r}".replace("'", ""))
    for k in sorted(_SGD_KEYS):
        lines.append(f"{k} = {getattr(cfg.sgd, k)!r}")
    for k in sorted(_RUN_KEYS):
        v = getattr(cfg, k)
        lines.append(f"{k} = {'none' if v is None else v}")
    for lid, r in sorted(s.layer_rates.items()):
        lines += ["", f"[layer {lid}]", f"rate = {r!r}"]
    return "\n".join(lines) + "\n"
