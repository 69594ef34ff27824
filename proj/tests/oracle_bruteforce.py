#!/usr/bin/env python3
"""Independent brute-force enumeration of a micro-world's expected
generalization gap. Reads a world fixture file (see docs/formats.md) and
prints `err <value>` with 17 significant digits.

Deliberately written with naive loops and no shared code so it can serve as
a second, independent route for cross-checking the C++ enumeration.
"""
import itertools
import math
import sys


def parse_world(path):
    section = None
    world = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                section = line.strip("[]").strip()
                continue
            key, _, value = line.partition("=")
            if section == "world":
                world[key.strip()] = value.strip()
    return world


def main():
    if len(sys.argv) != 2:
        print("usage: oracle_bruteforce.py <world-file>", file=sys.stderr)
        return 2
    w = parse_world(sys.argv[1])
    x_size = int(w["x_size"])
    y_size = int(w["y_size"])
    n = int(w["n"])
    mu = [float(v) for v in w["mu"].split(",")]
    mu_prime = [float(v) for v in w["mu_prime"].split(",")]
    total = sum(mu)
    mu = [v / total for v in mu]
    total = sum(mu_prime)
    mu_prime = [v / total for v in mu_prime]
    if "loss" in w:
        loss = [float(v) for v in w["loss"].split(",")]
    else:
        loss = [0.0 if p == t else 1.0 for p in range(y_size) for t in range(y_size)]
    algorithm = w.get("algorithm", "erm")
    gamma = float(w.get("gamma", "1.0"))

    z_size = x_size * y_size
    hypotheses = list(itertools.product(range(y_size), repeat=x_size))
    # match the artifact's encoding: hypothesis index w predicts
    # (w // y_size**x) % y_size at input x, i.e. digit x is the least
    # significant first
    hypotheses = []
    for idx in range(y_size**x_size):
        hypotheses.append(tuple((idx // y_size**x) % y_size for x in range(x_size)))

    def sample_loss(h, z):
        x, y = divmod(z, y_size)
        return loss[h[x] * y_size + y]

    risk_tgt = [
        sum(mu_prime[z] * sample_loss(h, z) for z in range(z_size)) for h in hypotheses
    ]

    err = 0.0
    for s in itertools.product(range(z_size), repeat=n):
        ps = 1.0
        for z in s:
            ps *= mu[z]
        if ps == 0.0:
            continue
        emp = [sum(sample_loss(h, z) for z in s) for h in hypotheses]
        if algorithm == "erm":
            best = min(emp)
            arg = [k for k, e in enumerate(emp) if e <= best + 1e-12]
            weights = [1.0 / len(arg) if k in arg else 0.0 for k in range(len(hypotheses))]
        elif algorithm == "gibbs":
            shift = min(emp)
            raw = [math.exp(-gamma * (e - shift)) for e in emp]
            total = sum(raw)
            weights = [r / total for r in raw]
        else:
            raise SystemExit(f"unknown algorithm {algorithm}")
        for k, h in enumerate(hypotheses):
            if weights[k] == 0.0:
                continue
            err += ps * weights[k] * (risk_tgt[k] - emp[k] / n)
    print(f"err {err:.17g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
