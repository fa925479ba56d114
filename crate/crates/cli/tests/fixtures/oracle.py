"""Independent check of the golden files: recompute smoothing, thresholds and
observation assembly from the raw fixtures and compare every value exactly.

    python3 oracle.py raw/state.csv raw/ltc.csv golden
"""
import csv
import math
import sys
from datetime import date

LOG_FLOOR = 0.5
LEVELS = {"confirmed": 100.0, "hospitalized": 10.0, "deaths": 10.0}


def read(path):
    with open(path) as f:
        rows = list(csv.reader(f))
    return [date.fromisoformat(r[0]) for r in rows[1:]], [[float(x) for x in r[1:]] for r in rows[1:]]


def ma7(v):
    n = len(v)
    out = []
    for t in range(n):
        s = 0.0
        for k in range(t - 3, t + 4):
            s += v[min(max(k, 0), n - 1)]
        out.append(s / 7.0)
    return out


def cumsum(v):
    out, s = [], 0.0
    for x in v:
        s += x
        out.append(s)
    return out


def log_floor(x):
    return math.log(x) if x > 0 else math.log(LOG_FLOOR)


def first_above(v, level):
    return next(i for i, x in enumerate(v) if x > level)


def main(state_path, ltc_path, golden):
    dates, state = read(state_path)
    ltc_dates, ltc = read(ltc_path)
    off = (ltc_dates[0] - dates[0]).days
    p, h, d = (ma7([r[c] for r in state]) for c in range(3))
    l1 = ma7([r[0] for r in ltc])
    pc, dc = cumsum(p), cumsum(d)
    last = min(len(d) - 1, off + len(l1) - 1)
    days = range(off, last + 1)
    d1 = {t: l1[t - off] for t in days}
    d2 = {t: d[t] - d1[t] for t in days}
    c1 = dict(zip(days, cumsum([d1[t] for t in days])))
    c2 = {t: dc[t] - c1[t] for t in days}
    thresholds = {
        "t1_p": first_above(pc, LEVELS["confirmed"]),
        "t1_h": first_above(h, LEVELS["hospitalized"]),
        "t1_d": first_above(dc, LEVELS["deaths"]),
        "t2_d": off - 1,
    }
    t_end = len(p) - 1
    t = thresholds
    spans = {
        "H": (h, t["t1_h"], t_end, 1.0),
        "Pc": (pc, t["t1_p"], t_end, 1.0),
        "pc": (p, t["t1_p"] + 1, t_end, 0.1),
        "D": (dc, t["t1_d"], t["t2_d"], 1.0),
        "d": (d, t["t1_d"] + 1, t["t2_d"], 0.1),
        "D1": (c1, t["t2_d"] + 1, last, 1.0),
        "D2": (c2, t["t2_d"] + 1, last, 1.0),
        "d1": (d1, t["t2_d"] + 2, last, 0.1),
        "d2": (d2, t["t2_d"] + 2, last, 0.1),
    }
    expected = [(b, day, w, w * log_floor(s[day])) for b, (s, a, z, w) in spans.items() for day in range(a, z + 1)]

    failures = 0
    with open(f"{golden}/thresholds.csv") as f:
        got = {r[0]: int(r[1]) for r in list(csv.reader(f))[1:]}
    if got != thresholds:
        print("thresholds differ:", got, thresholds)
        failures += 1
    with open(f"{golden}/observations.csv") as f:
        rows = list(csv.reader(f))[1:]
    got = sorted((r[0], int(r[1]), float(r[2]), float(r[3])) for r in rows)
    if got != sorted(expected):
        print("observations differ")
        failures += 1
    names = ["confirmed", "hospitalized", "deaths"]
    smoothed = {n: ([r[c] for r in state], s) for c, (n, s) in enumerate(zip(names, (p, h, d)))}
    smoothed["ltc_deaths"] = ([r[0] for r in ltc], l1)
    for name, (raw, sm) in smoothed.items():
        with open(f"{golden}/smoothed_{name}.csv") as f:
            rows = list(csv.reader(f))[1:]
        if [float(r[1]) for r in rows] != raw or [float(r[2]) for r in rows] != sm:
            print(f"smoothed_{name} differs")
            failures += 1
    print(f"{len(expected)} observation points, {failures} mismatching files")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:4]))
