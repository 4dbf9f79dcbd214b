"""Shared fixtures and the acceptance-suite terminal summary."""

from __future__ import annotations

import numpy as np
import pytest

from mixquant.fixtures import build_fixture
from mixquant.graph import (
    HEAD_SQUARED_ERROR,
    KIND_AFFINE,
    KIND_RELU,
    Dataset,
    Layer,
    ModelGraph,
)

F1_SEED = 7


@pytest.fixture(scope="session")
def f1():
    """The standard 6-affine-layer, 2-class fixture with its data splits."""
    return build_fixture(F1_SEED)


def make_diagonal_quadratic(curvatures=(1.0, 2.0, 3.0)):
    """A 1-affine squared-error model whose weight Hessian is diag(curvatures).

    With a single output unit and targets fixed at 1, the loss is
    0.5 * mean((w.x + b - 1)^2), so the weight-block Hessian equals
    mean(x x^T). Feature rows are scaled unit vectors chosen to make that
    mean exactly the requested diagonal.
    """
    d = np.asarray(curvatures, dtype=np.float64)
    n = d.size
    features = np.zeros((n, n))
    for i, c in enumerate(d):
        features[i, i] = np.sqrt(n * c)
    weight = np.linspace(0.2, -0.15, n).reshape(1, n)
    model = ModelGraph(
        [Layer("probe", KIND_AFFINE, weight, np.zeros(1))], head=HEAD_SQUARED_ERROR
    )
    data = Dataset(features, np.zeros(n, dtype=np.int64), 1)
    return model, data, d


def make_dead_relu_model(seed=3, examples=32):
    """A 2-affine chain whose relu is saturated at zero for every input.

    The large negative bias keeps the relu off with a wide margin, so the
    loss is locally constant in the first weights and the second weights
    see an all-zero input: both weight blocks have exactly zero curvature.
    """
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0, 0.3, size=(4, 3))
    b1 = np.full(4, -10.0)
    w2 = rng.normal(0, 0.3, size=(2, 4))
    b2 = np.array([0.3, -0.2])
    model = ModelGraph(
        [
            Layer("inner", KIND_AFFINE, w1, b1),
            Layer("gate", KIND_RELU),
            Layer("outer", KIND_AFFINE, w2, b2),
        ]
    )
    features = rng.normal(0, 1, size=(examples, 3))
    data = Dataset(features, rng.integers(0, 2, examples), 2)
    return model, data


def make_small_ce_model(seed=5, examples=64):
    """A compact softmax-CE model with genuinely coupled curvature."""
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0, 0.6, size=(6, 4))
    b1 = rng.normal(0, 0.1, size=6)
    w2 = rng.normal(0, 0.6, size=(3, 6))
    b2 = rng.normal(0, 0.1, size=3)
    model = ModelGraph(
        [
            Layer("first", KIND_AFFINE, w1, b1),
            Layer("act", KIND_RELU),
            Layer("second", KIND_AFFINE, w2, b2),
        ]
    )
    features = rng.normal(0, 1, size=(examples, 4))
    data = Dataset(features, rng.integers(0, 3, examples), 3)
    return model, data


def reference_levenshtein(a, b):
    """Full-matrix DP oracle, deliberately different from the library version."""
    m, n = len(a), len(b)
    table = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        table[i][0] = i
    for j in range(n + 1):
        table[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(
                table[i - 1][j] + 1, table[i][j - 1] + 1, table[i - 1][j - 1] + cost
            )
    return table[m][n]


# Synthetic separable search oracle: four tensors whose accuracy penalty
# is linear in a per-tensor weight and a per-width cost. Monotone and
# separable, so exhaustive enumeration is tractable and greedy is optimal.
O1_NAMES = ("L1", "L2", "L3", "L4")
O1_WEIGHTS = {"L1": 1, "L2": 2, "L3": 3, "L4": 4}
O1_PENALTY = {16: 0.0, 8: 0.002, 4: 0.01}
O1_NUMEL = 8


def o1_accuracy(config):
    return 1.0 - sum(O1_WEIGHTS[n] * O1_PENALTY[b] for n, b in config.bits.items())


def o1_size_bytes(config):
    return sum(O1_NUMEL * b // 8 for b in config.bits.values())


ACCEPTANCE_DESCRIPTIONS = {
    "test_criterion_1_grid_and_error_bound": "1. quantizer grid membership and calibrated error bound",
    "test_criterion_2_gradient_fidelity": "2. reverse-mode gradients match finite differences",
    "test_criterion_3_hessian_trace": "3. stochastic trace recovers known curvature",
    "test_criterion_4_noise_null_and_determinism": "4. noise metric null case and determinism",
    "test_criterion_5_search_matches_exhaustive_oracle": "5. searches match exhaustive oracle optima",
    "test_criterion_6_evaluation_budgets": "6. search evaluation budgets hold",
    "test_criterion_7_end_to_end_fixture": "7. end-to-end run beats target and random baseline",
    "test_criterion_8_ordering_distance": "8. ordering edit distance matches the DP oracle",
    "test_criterion_9_size_arithmetic": "9. model size arithmetic is exact",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            if "test_acceptance" not in getattr(report, "nodeid", ""):
                continue
            name = report.nodeid.rsplit("::", 1)[-1]
            description = ACCEPTANCE_DESCRIPTIONS.get(name, name)
            verdict = "PASS" if status == "passed" else "FAIL"
            lines.append((description, verdict))
    if lines:
        terminalreporter.section("acceptance criteria")
        for description, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {description}")
