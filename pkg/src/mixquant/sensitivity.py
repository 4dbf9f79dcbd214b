"""Per-tensor sensitivity metrics and the orderings they induce.

Each metric assigns every scored tensor a mean score (plus spread over
repeated trials where the metric is stochastic) and the report orders
tensors ascending by mean, least sensitive first. That ordering is what
the bit-width searches consume. Three model-driven metrics are provided,
quantization error, loss degradation under weight noise, and a
stochastic estimate of loss curvature, plus a seeded random ordering
that serves as the comparison baseline.

Stochastic metrics draw from a private substream per tensor (stream id
is the tensor's position in the scored list), so scores do not depend on
evaluation order and tensors could be scored concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .graph import Dataset, GraphError, ModelGraph, capture_activations, forward, hessian_vector_product
from .modelio import DataFormatError
from .quantize import QuantSpec, quantization_error
from .rng import substream

REPORT_FORMAT = "mixquant-sensitivity"

METRIC_QE = "qe"
METRIC_NOISE = "noise"
METRIC_HESSIAN = "hessian"
METRIC_RANDOM = "random"
METRICS = (METRIC_QE, METRIC_NOISE, METRIC_HESSIAN, METRIC_RANDOM)

DEFAULT_NOISE_SCALE = 0.05
DEFAULT_TRIALS = 5
DEFAULT_PROBES = 128
DEFAULT_SEED = 42


@dataclass(frozen=True)
class TensorScore:
    mean: float
    std: float
    trials: int


@dataclass(frozen=True)
class SensitivityReport:
    """Scores per tensor plus the ascending ordering they induce."""

    metric: str
    scores: dict[str, TensorScore]
    ordering: tuple[str, ...]
    seed: int


def _build_report(metric: str, scores: dict[str, TensorScore], seed: int) -> SensitivityReport:
    # Ascending by mean; exact ties fall back to the tensor name.
    ordering = tuple(sorted(scores, key=lambda name: (scores[name].mean, name)))
    return SensitivityReport(metric=metric, scores=scores, ordering=ordering, seed=seed)


def _stat(samples: list[float]) -> TensorScore:
    values = np.asarray(samples, dtype=np.float64)
    # Population spread: a single trial legitimately reports zero std.
    return TensorScore(
        mean=float(values.mean()), std=float(values.std()), trials=len(samples)
    )


def score_qe(
    model: ModelGraph,
    specs: Mapping[str, QuantSpec],
    probe_bits: int | None = None,
    data: Dataset | None = None,
) -> SensitivityReport:
    """Normalized RMS quantization error per tensor in ``specs``.

    Weight tensors are scored from their stored values. Activation
    tensors (``<layer>.out``) are scored from the values they take over
    ``data``, which must then be supplied. ``probe_bits`` overrides every
    spec's bit width, so one calibration can be probed at the most
    discriminative width, typically the lowest candidate.
    """
    if not specs:
        raise GraphError("score_qe needs at least one tensor spec")
    known = set(model.quantizable_tensor_names())
    unknown = sorted(set(specs) - known)
    if unknown:
        raise GraphError(f"specs name unknown tensors: {unknown}")
    activation_names = [n for n in specs if n.endswith(".out")]
    activations: dict[str, np.ndarray] = {}
    if activation_names:
        if data is None:
            raise GraphError(
                f"activation tensors {sorted(activation_names)} need calibration data to score"
            )
        activations = capture_activations(model, data)
    scores: dict[str, TensorScore] = {}
    for name, spec in specs.items():
        if probe_bits is not None:
            spec = spec.with_bits(probe_bits)
        values = activations[name] if name.endswith(".out") else model.parameter(name)
        scores[name] = _stat([quantization_error(values, spec)])
    return _build_report(METRIC_QE, scores, seed=0)


def score_noise(
    model: ModelGraph,
    data: Dataset,
    noise_scale: float = DEFAULT_NOISE_SCALE,
    trials: int = DEFAULT_TRIALS,
    seed: int = DEFAULT_SEED,
    measure: str = "loss",
) -> SensitivityReport:
    """Performance drop when one weight tensor is perturbed by Gaussian noise.

    For each weight tensor the noise is drawn with standard deviation
    ``noise_scale * max|w|``, the tensor is replaced on a private model
    copy, and the score is the perturbed-minus-clean loss (or, with
    ``measure="accuracy"``, clean-minus-perturbed accuracy, so larger
    still means more sensitive). Mean and spread are taken over
    ``trials`` independent draws.
    """
    if trials < 1:
        raise GraphError(f"trials must be >= 1, got {trials}")
    if noise_scale < 0:
        raise GraphError(f"noise_scale must be >= 0, got {noise_scale}")
    if measure not in ("loss", "accuracy"):
        raise GraphError(f"measure must be 'loss' or 'accuracy', got {measure!r}")
    base = forward(model, data)
    scores: dict[str, TensorScore] = {}
    for index, name in enumerate(model.weight_tensor_names()):
        w = model.parameter(name)
        sigma = noise_scale * float(np.max(np.abs(w)))
        rng = substream(seed, "noise", index)
        samples = []
        for _ in range(trials):
            noisy = w + rng.normal(0.0, sigma, size=w.shape) if sigma > 0 else w
            perturbed = forward(model.with_parameter(name, noisy), data)
            if measure == "loss":
                samples.append(perturbed.loss - base.loss)
            else:
                samples.append(base.accuracy - perturbed.accuracy)
        scores[name] = _stat(samples)
    return _build_report(METRIC_NOISE, scores, seed=seed)


def hutchinson_trace(rng: np.random.Generator, hvp, shape, probes: int) -> list[float]:
    """Per-probe samples of a Hessian trace estimate.

    Draws sign vectors ``z`` with independent +/-1 entries and returns
    ``z . hvp(z)`` for each; the mean over probes estimates the trace,
    exactly in expectation since ``E[z z^T]`` is the identity.
    """
    if probes < 1:
        raise GraphError(f"probes must be >= 1, got {probes}")
    samples = []
    for _ in range(probes):
        z = rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
        samples.append(float(np.sum(z * hvp(z))))
    return samples


def score_hessian(
    model: ModelGraph,
    data: Dataset,
    probes: int = DEFAULT_PROBES,
    seed: int = DEFAULT_SEED,
    normalize: bool = True,
) -> SensitivityReport:
    """Stochastic loss-curvature trace per weight tensor.

    Each tensor's score is the mean over sign-vector probes of
    ``z . H z`` with the Hessian-vector product taken on the full
    dataset as one batch. With ``normalize`` the trace is divided by the
    element count, making differently sized tensors comparable; without
    it the raw trace estimate is reported.
    """
    scores: dict[str, TensorScore] = {}
    for index, name in enumerate(model.weight_tensor_names()):
        w = model.parameter(name)
        rng = substream(seed, "hessian", index)
        samples = hutchinson_trace(
            rng, lambda z: hessian_vector_product(model, data, name, z), w.shape, probes
        )
        if normalize:
            samples = [s / w.size for s in samples]
        scores[name] = _stat(samples)
    return _build_report(METRIC_HESSIAN, scores, seed=seed)


def score_random(tensor_names: list[str], seed: int) -> SensitivityReport:
    """A seeded uniform-random ordering posing as sensitivity scores.

    Every tensor's score is its rank in a random permutation, so the
    induced ordering is exactly that permutation. Used as the baseline
    the informed metrics must beat.
    """
    names = list(tensor_names)
    if not names:
        raise GraphError("score_random needs at least one tensor name")
    if len(set(names)) != len(names):
        raise GraphError("tensor names must be unique")
    perm = substream(seed, "random").permutation(len(names))
    order = [names[i] for i in perm]
    scores = {name: _stat([float(rank)]) for rank, name in enumerate(order)}
    return _build_report(METRIC_RANDOM, scores, seed=seed)


def ordering_distance(a: list[str], b: list[str]) -> int:
    """Edit distance between two orderings, one symbol per tensor name.

    Counts the minimum number of single-name insertions, deletions and
    substitutions turning ``a`` into ``b``. Identical orderings give 0;
    the distance never exceeds the longer length.
    """
    a = list(a)
    b = list(b)
    if len(a) > len(b):
        a, b = b, a
    previous = list(range(len(a) + 1))
    for i, symbol_b in enumerate(b, start=1):
        current = [i] + [0] * len(a)
        for j, symbol_a in enumerate(a, start=1):
            cost = 0 if symbol_a == symbol_b else 1
            current[j] = min(
                previous[j] + 1,  # delete
                current[j - 1] + 1,  # insert
                previous[j - 1] + cost,  # substitute or match
            )
        previous = current
    return previous[len(a)]


def save_report(report: SensitivityReport, path: str | Path) -> None:
    payload = {
        "format": REPORT_FORMAT,
        "version": 1,
        "metric": report.metric,
        "seed": report.seed,
        "ordering": list(report.ordering),
        "scores": {
            name: {"mean": s.mean, "std": s.std, "trials": s.trials}
            for name, s in sorted(report.scores.items())
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_report(path: str | Path) -> SensitivityReport:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read sensitivity report {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != REPORT_FORMAT:
        raise DataFormatError(f"{path} is not a {REPORT_FORMAT!r} file")
    try:
        scores = {
            name: TensorScore(
                mean=float(s["mean"]), std=float(s["std"]), trials=int(s["trials"])
            )
            for name, s in payload.get("scores", {}).items()
        }
        return SensitivityReport(
            metric=str(payload["metric"]),
            scores=scores,
            ordering=tuple(payload["ordering"]),
            seed=int(payload["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed sensitivity report in {path}") from exc
