#!/usr/bin/env python3
"""Log-log error curves for demo_rate_ou.csv with a slope-1/2 guide line."""

import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

rows = []
with open('demo_rate_ou.csv') as fh:
    for line in fh:
        if line.startswith("#") or not line.strip():
            continue
        rows.append(line.strip().split(","))
header, data = rows[0], rows[1:]
col = {name: i for i, name in enumerate(header)}

groups = {}
for row in data:
    key = row[col['f_name']] if 'f_name' in col else "all"
    groups.setdefault(key, []).append(
        (float(row[col['delta']]), float(row[col['weak_error']])))

fig, ax = plt.subplots(figsize=(6, 4.5))
for name, pts in sorted(groups.items()):
    pts.sort()
    xs = [p[0] for p in pts]
    ys = [max(p[1], 1e-300) for p in pts]
    ax.loglog(xs, ys, "o-", label=name)
    x0, y0 = xs[-1], ys[-1]
    guide = [y0 * (x / x0) ** 0.5 for x in xs]
    ax.loglog(xs, guide, "k--", alpha=0.4,
              label="slope 1/2" if name == sorted(groups)[0] else None)
ax.set_xlabel('step size')
ax.set_ylabel('weak_error')
ax.legend()
ax.grid(True, which="both", alpha=0.3)
fig.tight_layout()
fig.savefig('demo_rate_ou.csv' + ".png", dpi=150)
print("wrote", 'demo_rate_ou.csv' + ".png")
