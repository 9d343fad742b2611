"""Closed-loop tilting-platform simulation with a CoP-driven PID ankle controller.

The plant is a first-order surrogate for the robot standing on the platform:

    cop <- cop + dt/tau * (kappa * (phi - theta) + bias - cop),  clamped to [-1, 1]

``bias`` is the forward weight distribution (positive = toward the toe). When
cop crosses a fall limit the robot has tipped over and the harness catches
it: cop latches at +-1 for the rest of the trial. The controller sees cop
one tick late, as the perception pipeline would deliver it.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cop import SAFE_FRACTION, classify_safety, cop_from_frame
from .errors import ControllerError
from .frame_io import SensorGeometry
from .pnm import write_pnm
from .synth import render_press

DECLINED = "declined"
INCLINED = "inclined"


@dataclass(frozen=True)
class BalanceConfig:
    kp: float = 0.35
    ki: float = 0.004
    kd: float = 0.01
    scale_deg: float = 150.0  # offset fraction -> ankle degrees
    deadband: float = 0.02
    clamp_deg: float = 30.0
    windup: float = 50.0
    tau: float = 0.2
    kappa: float = 0.13
    bias: float = 0.32
    fall_toe: float | None = 0.65
    fall_heel: float | None = 0.9
    slew_deg_s: float = 12.0
    noise_sigma: float = 0.0
    rate_hz: float = 28.0
    grace_s: float = 1.0
    hold_s: float = 3.0
    safe_fraction: float = SAFE_FRACTION
    angles_deg: tuple = (5.0, 10.0, 15.0)
    speeds_rad_s: tuple = (0.1, 0.3)
    seed: int = 0
    mode: str = "direct"

    @property
    def dt(self) -> float:
        return 1.0 / self.rate_hz


def load_config(spec: str | Path | None = None, **overrides) -> BalanceConfig:
    """``None`` or ``"default"`` gives the frozen defaults; otherwise a JSON file of overrides."""
    data: dict = {}
    if spec not in (None, "default"):
        data = json.loads(Path(spec).read_text(encoding="utf-8"))
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = BalanceConfig.__dataclass_fields__
    bad = set(data) - set(known)
    if bad:
        raise ValueError(f"unknown balance config keys: {sorted(bad)}")
    for k in ("angles_deg", "speeds_rad_s"):
        if k in data:
            data[k] = tuple(float(v) for v in data[k])
    return BalanceConfig(**data)


@dataclass(frozen=True)
class PlatformScenario:
    target_deg: float
    speed_rad_s: float
    direction: str = DECLINED
    seed: int = 0

    def __post_init__(self):
        if not 0 <= abs(self.target_deg) <= 15:
            raise ValueError("target angle must be within 15 degrees")
        if self.speed_rad_s <= 0:
            raise ValueError("angular speed must be positive")
        if self.direction not in (DECLINED, INCLINED):
            raise ValueError(f"direction must be {DECLINED!r} or {INCLINED!r}")

    @property
    def signed_target(self) -> float:
        return abs(self.target_deg) * (1.0 if self.direction == DECLINED else -1.0)

    @property
    def ramp_time(self) -> float:
        return abs(self.target_deg) / math.degrees(self.speed_rad_s)

    @property
    def name(self) -> str:
        return f"{self.direction}_{abs(self.target_deg):g}deg_{self.speed_rad_s:g}rad_s"


def platform_angle(sc: PlatformScenario, t: float) -> float:
    """Ramp from level at the scenario speed, then hold; declined is positive."""
    if t < 0:
        raise ValueError("t must be non-negative")
    mag = min(abs(sc.target_deg), math.degrees(sc.speed_rad_s) * t)
    return mag if sc.direction == DECLINED else -mag


@dataclass(frozen=True)
class PlantState:
    cop_norm: float = 0.0
    phi: float = 0.0
    theta: float = 0.0
    tau: float = 0.2
    kappa: float = 0.13
    bias: float = 0.32
    fall_toe: float | None = 0.65
    fall_heel: float | None = 0.9
    fallen: bool = False

    @classmethod
    def from_config(cls, cfg: BalanceConfig) -> "PlantState":
        return cls(0.0, 0.0, 0.0, cfg.tau, cfg.kappa, cfg.bias, cfg.fall_toe, cfg.fall_heel)


def plant_step(s: PlantState, phi: float, theta: float, dt: float) -> PlantState:
    if dt <= 0 or s.tau <= 0:
        raise ValueError("dt and tau must be positive")
    if s.fallen:
        return replace(s, phi=phi, theta=theta)
    c = s.cop_norm + dt / s.tau * (s.kappa * (phi - theta) + s.bias - s.cop_norm)
    c = min(1.0, max(-1.0, c))
    fallen = (s.fall_toe is not None and c >= s.fall_toe) or (s.fall_heel is not None and c <= -s.fall_heel)
    if fallen:
        c = math.copysign(1.0, c)
    return replace(s, cop_norm=c, phi=phi, theta=theta, fallen=bool(fallen))


@dataclass(frozen=True)
class ControllerState:
    kp: float = 0.35
    ki: float = 0.004
    kd: float = 0.01
    scale: float = 150.0
    deadband: float = 0.02
    clamp: float = 30.0
    windup: float = 50.0
    e: float = 0.0
    e_i: float = 0.0
    e_d: float = 0.0
    e_prev: float = 0.0
    theta_off: float = 0.0

    @classmethod
    def from_config(cls, cfg: BalanceConfig) -> "ControllerState":
        return cls(cfg.kp, cfg.ki, cfg.kd, cfg.scale_deg, cfg.deadband, cfg.clamp_deg, cfg.windup)


def pid_step(s: ControllerState, e: float, dt: float) -> tuple[ControllerState, float]:
    """theta_off = clamp(scale * (Kp e + Ki e_i + Kd e_d)); held inside the deadband."""
    if not math.isfinite(e):
        raise ControllerError(f"non-finite error {e!r}")
    if dt <= 0:
        raise ControllerError("dt must be positive")
    e_d = (e - s.e_prev) / dt
    if abs(e) <= s.deadband:
        return replace(s, e=e, e_d=e_d, e_prev=e), s.theta_off
    e_i = min(s.windup, max(-s.windup, s.e_i + e * dt))
    out = s.scale * (s.kp * e + s.ki * e_i + s.kd * e_d)
    out = min(s.clamp, max(-s.clamp, out))
    return replace(s, e=e, e_i=e_i, e_d=e_d, e_prev=e, theta_off=out), out


@dataclass
class TrialResult:
    scenario: PlatformScenario
    feedback: bool
    success: bool
    trace: np.ndarray  # (n, 6): t, phi, theta, cop_norm, offset_fraction, safe flag
    status: list = field(default_factory=list)
    max_abs_offset: float = 0.0
    settling_time: float = float("nan")
    mode: str = "direct"

    TRACE_COLUMNS = ("t", "phi_deg", "theta_deg", "cop_norm", "offset_fraction", "status")

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.TRACE_COLUMNS)
            for row, st in zip(self.trace, self.status):
                w.writerow([f"{row[0]:.6f}", f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}",
                            f"{row[4]:.6f}", st])


def run_trial(sc: PlatformScenario, feedback: bool, cfg: BalanceConfig = BalanceConfig(),
              geom: SensorGeometry = SensorGeometry()) -> TrialResult:
    """Simulate one platform tilt; ``cfg.mode`` picks direct plant readout or rendered frames."""
    if cfg.mode not in ("direct", "full"):
        raise ValueError(f"unknown mode {cfg.mode!r}")
    dt = cfg.dt
    n = int(round((sc.ramp_time + cfg.grace_s + cfg.hold_s) / dt))
    judge_from = sc.ramp_time + cfg.grace_s
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, sc.seed, int(feedback)]))
    plant = PlantState.from_config(cfg)
    ctrl = ControllerState.from_config(cfg)
    cmd = 0.0
    meas = 0.0  # what the controller sees next tick
    trace = np.zeros((n, 6))
    status = []
    worst = 0.0
    last_bad = -1.0
    for i in range(n):
        t = (i + 1) * dt
        phi = platform_angle(sc, t)
        if feedback:
            ctrl, cmd = pid_step(ctrl, meas, dt)
        step = cfg.slew_deg_s * dt
        theta = plant.theta + min(step, max(-step, cmd - plant.theta))
        plant = plant_step(plant, phi, theta, dt)
        if cfg.mode == "direct":
            meas = plant.cop_norm
            if cfg.noise_sigma > 0:
                meas += float(rng.normal(0.0, cfg.noise_sigma))
        else:
            frame, _ = render_press(plant.cop_norm, geom, seed=int(rng.integers(2**31)),
                                    noise_sigma=max(cfg.noise_sigma * 255, 1.0))
            est = cop_from_frame(frame, geom, cfg.safe_fraction)
            meas = est.offset_fraction
        st = classify_safety(meas, 1, cfg.safe_fraction)
        trace[i] = (t, phi, theta, plant.cop_norm, meas, st == "safe")
        status.append(st)
        if st != "safe":
            last_bad = t
        if t >= judge_from - 1e-12:
            worst = max(worst, abs(meas))
    success = worst <= cfg.safe_fraction
    settle = last_bad + dt if last_bad < trace[-1, 0] else float("nan")
    if last_bad < 0:
        settle = 0.0
    return TrialResult(sc, feedback, bool(success), trace, status,
                       float(np.abs(trace[:, 4]).max()), float(settle), cfg.mode)


def scenarios(cfg: BalanceConfig = BalanceConfig()) -> list[PlatformScenario]:
    out = []
    for direction in (DECLINED, INCLINED):
        for a in cfg.angles_deg:
            for sp in cfg.speeds_rad_s:
                out.append(PlatformScenario(a, sp, direction, seed=len(out)))
    return out


MATRIX_COLUMNS = ("scenario", "direction", "target_deg", "speed_rad_s", "feedback", "success",
                  "max_abs_offset", "settling_time_s", "mode")


def run_matrix(cfg: BalanceConfig = BalanceConfig(), geom: SensorGeometry = SensorGeometry()) -> list[TrialResult]:
    return [run_trial(sc, fb, cfg, geom) for fb in (True, False) for sc in scenarios(cfg)]


def write_matrix_csv(results: list[TrialResult], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MATRIX_COLUMNS)
        for r in results:
            sc = r.scenario
            w.writerow([sc.name, sc.direction, f"{abs(sc.target_deg):g}", f"{sc.speed_rad_s:g}",
                        int(r.feedback), int(r.success), f"{r.max_abs_offset:.6f}",
                        f"{r.settling_time:.6f}", r.mode])


def summary_grid(results: list[TrialResult], cfg: BalanceConfig = BalanceConfig(), cell: int = 24) -> np.ndarray:
    """Green/red cells: rows are (feedback, direction), columns are (angle, speed)."""
    cols = [(a, s) for a in cfg.angles_deg for s in cfg.speeds_rad_s]
    rows = [(fb, d) for fb in (True, False) for d in (DECLINED, INCLINED)]
    img = np.full((len(rows) * cell, len(cols) * cell, 3), 128, np.uint8)
    for r in results:
        i = rows.index((r.feedback, r.scenario.direction))
        j = cols.index((abs(r.scenario.target_deg), r.scenario.speed_rad_s))
        color = (40, 170, 60) if r.success else (200, 40, 40)
        img[i * cell + 1:(i + 1) * cell - 1, j * cell + 1:(j + 1) * cell - 1] = color
    return img


def write_matrix_outputs(results: list[TrialResult], cfg: BalanceConfig, out: str | Path) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(results, out / "matrix.csv")
    write_pnm(out / "matrix.ppm", summary_grid(results, cfg))
    (out / "balance_config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    return {"matrix_csv": "matrix.csv", "summary": "matrix.ppm", "config": "balance_config.json"}
