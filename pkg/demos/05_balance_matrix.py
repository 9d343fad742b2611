"""
Tilting platform experiment
===========================

Run the 12 tilt scenarios with and without the CoP-driven ankle PID and
print the success grid. `mode="full"` renders every tick through the
perception pipeline; direct mode reads the plant CoP.
"""
from dataclasses import replace

from tacsole import balance

cfg = balance.BalanceConfig()
results = balance.run_matrix(cfg)

for fb in (True, False):
    print("feedback on" if fb else "feedback off")
    for d in (balance.DECLINED, balance.INCLINED):
        cells = []
        for a in cfg.angles_deg:
            for s in cfg.speeds_rad_s:
                r = next(r for r in results if r.feedback == fb and r.scenario.direction == d
                         and r.scenario.target_deg == a and r.scenario.speed_rad_s == s)
                cells.append(f"{a:g}/{s:g}:{'ok' if r.success else '--'}")
        print(f"  {d:>8s}  " + "  ".join(cells))

# one trial end to end through rendered frames
r = balance.run_trial(balance.PlatformScenario(10, 0.1), True, replace(cfg, mode="full"))
print(f"full mode, declined 10 deg at 0.1 rad/s: success={r.success}, max |offset| {r.max_abs_offset:.3f}")
r.write_trace("demo_trial.csv")
