"""Generate the SVM reference fixtures with an off-the-shelf QP solver.

Each problem is a seeded, linearly separable 2-D two-class set of 50
points. The reference solves the primal of the same model the package
trains (hinge loss, C = 1, bias as an extra regularised feature):

    min 1/2 |w|^2 + 1/2 b^2 + C sum_i xi_i
    s.t. y_i (w . x_i + b) >= 1 - xi_i,  xi_i >= 0

and the squared-hinge variant (C sum_i xi_i^2 in the objective).

Run from the repository root:  python3 tools/make_svm_fixtures.py
"""
import json
from pathlib import Path

import cvxpy as cp
import numpy as np

N_PROBLEMS = 12
N_SAMPLES = 50
C = 1.0
OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "svm_qp.json"


def make_problem(seed: int):
    rng = np.random.default_rng(seed)
    angle = rng.uniform(0, 2 * np.pi)
    normal = np.array([np.cos(angle), np.sin(angle)])
    offset = rng.uniform(-0.5, 0.5)
    x = []
    while len(x) < N_SAMPLES:
        p = rng.uniform(-3, 3, size=2)
        margin = p @ normal - offset
        if abs(margin) >= 0.6:          # keep a clear gap
            x.append(p)
    x = np.array(x)
    y = (x @ normal - offset > 0).astype(int)
    if y.min() == y.max():
        y[0] = 1 - y[0]
        x[0] = x[0] - 2 * (x[0] @ normal - offset) * normal
    return x, y


def solve(x, y, squared=False):
    s = np.where(y == 1, 1.0, -1.0)
    w = cp.Variable(2)
    b = cp.Variable()
    xi = cp.Variable(len(x))
    slack = cp.sum_squares(xi) if squared else cp.sum(xi)
    objective = cp.Minimize(0.5 * cp.sum_squares(w) + 0.5 * cp.square(b) + C * slack)
    constraints = [cp.multiply(s, x @ w + b) >= 1 - xi, xi >= 0]
    cp.Problem(objective, constraints).solve(solver=cp.CLARABEL)
    return np.asarray(w.value), float(b.value)


def main():
    problems = []
    for seed in range(N_PROBLEMS):
        x, y = make_problem(seed)
        w, b = solve(x, y)
        w2, b2 = solve(x, y, squared=True)
        pred = (x @ w + b > 0).astype(int)
        problems.append({
            "seed": seed,
            "x": np.round(x, 12).tolist(),
            "y": y.tolist(),
            "qp_w": w.tolist(),
            "qp_b": b,
            "qp_train_accuracy": float((pred == y).mean()),
            "qp_sq_w": w2.tolist(),
            "qp_sq_b": b2,
        })
    OUT.write_text(json.dumps({"C": C, "problems": problems}, indent=1) + "\n")
    print(f"wrote {len(problems)} problems to {OUT}")
    print("accuracies:", [p["qp_train_accuracy"] for p in problems])


if __name__ == "__main__":
    main()
