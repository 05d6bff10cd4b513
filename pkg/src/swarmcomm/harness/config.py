"""Run configuration and its INI file format.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` or
``;`` start comments. Unknown sections or keys are rejected. Booleans accept
true/false/yes/no/on/off/1/0; lists are comma separated.

Sections and keys (defaults in parentheses)::

    [run]        seed (0), out_dir (runs/default), max_iterations (2500),
                 eval_every (50), eval_episodes (30), success_threshold (0.85),
                 stop_at_threshold (true), checkpoint_every (50)
    [task]       kind (coverage), num_agents (3), arena_half_width (2.0),
                 horizon (50), dt (0.1), damping (0.5), cover_threshold (0.1),
                 formation_radius (0.5), radial_tolerance (0.05),
                 angular_tolerance (0.1), distance_clip (1.0)
    [comm]       mode (unrestricted | restricted), radius (2.0), variant
                 (mha | exp | uniform), heads (4), hops (3), hidden (128),
                 key_dim (128), tie_hops (false), dropout (false),
                 drop_fraction (0.5), resample_period (10), dropout_in_eval (false)
    [ppo]        gamma (0.99), lam (0.95), clip_eps (0.2), value_coef (0.5),
                 entropy_coef (0.01), epochs (4), lr (1e-4), n_envs (32),
                 rollout_len (128), minibatches (4), grad_clip (0.5),
                 normalize_advantages (true), bootstrap_timeouts (true),
                 scale_rewards (true)
    [curriculum] stages (3, 5, 7, 10), stage_budget (5000)
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from ..comm_graph import CommMode
from ..policy import CommVariant, NetConfig
from ..ppo import PpoConfig
from ..tasks import TaskConfig, TaskKind


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "runs/default"
    max_iterations: int = 2500
    eval_every: int = 50
    eval_episodes: int = 30
    success_threshold: float = 0.85
    stop_at_threshold: bool = True
    checkpoint_every: int = 50


@dataclass
class TaskSection:
    kind: str = "coverage"
    num_agents: int = 3
    arena_half_width: float = 2.0
    horizon: int = 50
    dt: float = 0.1
    damping: float = 0.5
    cover_threshold: float = 0.1
    formation_radius: float = 0.5
    radial_tolerance: float = 0.05
    angular_tolerance: float = 0.1
    distance_clip: float = 1.0


@dataclass
class CommSection:
    mode: str = "unrestricted"
    radius: float = 2.0
    variant: str = "mha"
    heads: int = 4
    hops: int = 3
    hidden: int = 128
    key_dim: int = 128
    tie_hops: bool = False
    dropout: bool = False
    drop_fraction: float = 0.5
    resample_period: int = 10
    dropout_in_eval: bool = False


@dataclass
class CurriculumSection:
    stages: list = field(default_factory=lambda: [3, 5, 7, 10])
    stage_budget: int = 5000


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    task: TaskSection = field(default_factory=TaskSection)
    comm: CommSection = field(default_factory=CommSection)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)

    def validate(self) -> "RunConfig":
        try:
            TaskKind(self.task.kind)
            self.task_config()
            self.net_config()
            self.comm_mode()
            PpoConfig(**dataclasses.asdict(self.ppo))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.comm.mode not in ("unrestricted", "restricted"):
            raise ConfigError(f"comm.mode must be unrestricted or restricted, got {self.comm.mode!r}")
        if self.task.num_agents < 1:
            raise ConfigError("task.num_agents must be >= 1")
        if self.run.eval_episodes < 1:
            raise ConfigError("run.eval_episodes must be >= 1")
        if self.run.eval_every < 1:
            raise ConfigError("run.eval_every must be >= 1")
        if not 0 <= self.run.success_threshold <= 1:
            raise ConfigError("run.success_threshold must lie in [0, 1]")
        stages = self.curriculum.stages
        if not stages or any(b <= a for a, b in zip(stages, stages[1:])) or stages[0] < 1:
            raise ConfigError("curriculum.stages must be a nonempty, strictly increasing list of team sizes")
        if not 0 <= self.comm.drop_fraction < 1:
            raise ConfigError("comm.drop_fraction must lie in [0, 1)")
        return self

    def task_config(self) -> TaskConfig:
        t = self.task
        return TaskConfig(
            kind=TaskKind(t.kind),
            cover_threshold=t.cover_threshold,
            formation_radius=t.formation_radius,
            radial_tolerance=t.radial_tolerance,
            angular_tolerance=t.angular_tolerance,
            distance_clip=t.distance_clip,
        )

    def net_config(self) -> NetConfig:
        c = self.comm
        return NetConfig(
            hidden=c.hidden, key_dim=c.key_dim, hops=c.hops, variant=CommVariant(c.variant, c.heads), tie_hops=c.tie_hops
        )

    def comm_mode(self) -> CommMode:
        return CommMode(self.comm.radius) if self.comm.mode == "restricted" else CommMode()

    def replace(self, **sections) -> "RunConfig":
        """Copy with per-section overrides, e.g. ``cfg.replace(task={"num_agents": 5})``."""
        new = from_ini_text(to_ini_text(self))
        for sec, values in sections.items():
            target = getattr(new, sec)
            for k, v in values.items():
                if not hasattr(target, k):
                    raise ConfigError(f"unknown key {sec}.{k}")
                setattr(target, k, v)
        return new.validate()


_SECTIONS = ("run", "task", "comm", "ppo", "curriculum")


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return [int(x) for x in raw.replace(" ", "").split(",") if x]
    return raw


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def from_ini_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    cfg = RunConfig()
    for sec in parser.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        target = getattr(cfg, sec)
        defaults = {f.name: getattr(target, f.name) for f in dataclasses.fields(target)}
        for key, raw in parser.items(sec):
            if key not in defaults:
                raise ConfigError(f"unknown key {sec}.{key}")
            try:
                setattr(target, key, _parse_value(raw, defaults[key]))
            except ValueError as exc:
                raise ConfigError(f"{sec}.{key}: {exc}") from exc
    return cfg.validate()


def to_ini_text(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec in _SECTIONS:
        obj = getattr(cfg, sec)
        parser[sec] = {f.name: _format_value(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    return from_ini_text(Path(path).read_text())
