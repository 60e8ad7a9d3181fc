"""Exhaustive reference for this fixture.

Enumerates every subset of windows, drops subsets with overlapping windows
in one exclusion group, replays each survivor through the two-well battery
model and keeps the best reward whose total charge never falls below the
floor. Usage: python3 oracle.py  (prints the best reward and its windows).
"""
import csv
import itertools
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

HERE = Path(__file__).parent
HORIZON = 9000.0

def load():
    sc = tomllib.loads((HERE / "scenario.toml").read_text())
    bat = tomllib.loads((HERE / "battery.toml").read_text())
    payloads = {p["name"]: p for p in tomllib.loads((HERE / "payloads.toml").read_text())["payload"]}
    with open(HERE / "windows.csv") as f:
        windows = list(csv.DictReader(f))
    with open(HERE / "sunlight.csv") as f:
        sun = list(csv.DictReader(f))
    with open(HERE / "passes.csv") as f:
        passes = list(csv.DictReader(f))
    return sc, bat, payloads, windows, sun, passes

def main():
    sc, bat, payloads, windows, sun, passes = load()
    cap, v = bat["capacity_as"], bat["diffusion_per_s"]
    assert bat["well_split"] == 0.5
    base = [(0.0, HORIZON, sc["background_load_a"])]
    base += [(float(p["start_s"]), float(p["end_s"]), sc["pass_load_a"]) for p in passes]
    base += [(float(s["start_s"]), float(s["end_s"]), -float(s["infeed_a"])) for s in sun]
    wins = []
    for w in windows:
        p = payloads[w["payload"]]
        reward = float(w["reward"]) if w["reward"] else p["reward"]
        wins.append((w["id"], float(w["start_s"]), float(w["end_s"]), p["power_a"], reward, p.get("exclusion_group")))
    floor = sc["soc_floor"] * cap

    def feasible(chosen):
        for x, y in itertools.combinations(chosen, 2):
            if x[5] and x[5] == y[5] and x[1] < y[2] and y[1] < x[2]:
                return False
        segs = base + [(w[1], w[2], w[3]) for w in chosen]
        cuts = sorted({t for s in segs for t in s[:2]} | {0.0, HORIZON})
        a = b = sc["initial_soc"] * cap / 2
        for t0, t1 in zip(cuts, cuts[1:]):
            load = sum(l for s, e, l in segs if s <= t0 and t1 <= e)
            # sum s = a + b falls linearly, difference d = b - a relaxes exponentially
            s0, d0 = a + b, b - a
            dinf = load / (2 * v)
            for k in range(1, 201):
                dt = (t1 - t0) * k / 200
                s = s0 - load * dt
                d = dinf + (d0 - dinf) * math.exp(-2 * v * dt)
                assert (s - d) / 2 < cap / 2, "available well full: extend the oracle"
                if (s - d) / 2 <= 0 or s < floor - 1e-9:
                    return False
            a, b = (s - d) / 2, (s + d) / 2
        return True

    best = (-1.0, ())
    for mask in range(1 << len(wins)):
        chosen = [w for i, w in enumerate(wins) if mask >> i & 1]
        reward = sum(w[4] for w in chosen)
        if reward > best[0] and feasible(chosen):
            best = (reward, tuple(w[0] for w in chosen))
    print(best[0])
    print(" ".join(best[1]))

if __name__ == "__main__":
    main()
