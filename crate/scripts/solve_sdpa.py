#!/usr/bin/env python3
"""Solve a sparse SDPA (.dat-s) problem with cvxpy.

Prints the optimal value on the first line and the solution vector,
one entry per line, after it.

usage: solve_sdpa.py FILE [SOLVER]
"""
import sys

import cvxpy as cp
import numpy as np


def read(path):
    lines = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if line and line[0] not in '"*':
                lines.append(line)
    head = lambda s: s.split("=")[0].replace(",", " ").replace("{", " ").replace("}", " ").split()
    m = int(head(lines[0])[0])
    nblock = int(head(lines[1])[0])
    sizes = [int(t) for t in head(lines[2])]
    assert len(sizes) == nblock
    c = np.array([float(t) for t in head(lines[3])])
    entries = []
    for line in lines[4:]:
        v, b, i, j, val = line.split()
        entries.append((int(v), int(b) - 1, int(i) - 1, int(j) - 1, float(val)))
    return m, sizes, c, entries


def main():
    path = sys.argv[1]
    solver = sys.argv[2] if len(sys.argv) > 2 else "CLARABEL"
    m, sizes, c, entries = read(path)
    x = cp.Variable(m)
    coeffs = [[np.zeros((s, s)) for s in sizes] for _ in range(m + 1)]
    for v, b, i, j, val in entries:
        coeffs[v][b][i, j] += val
        if i != j:
            coeffs[v][b][j, i] += val
    cons = []
    for b, s in enumerate(sizes):
        expr = -coeffs[0][b]
        for v in range(1, m + 1):
            if np.any(coeffs[v][b]):
                expr = expr + x[v - 1] * coeffs[v][b]
        sym = cp.Variable((s, s), PSD=True)
        cons.append(sym == expr)
    prob = cp.Problem(cp.Minimize(c @ x), cons)
    prob.solve(solver=solver)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        print(f"solver status {prob.status}", file=sys.stderr)
        sys.exit(1)
    print(f"{prob.value:.17e}")
    for val in x.value:
        print(f"{val:.17e}")


if __name__ == "__main__":
    main()
