"""Deterministic synthetic fixtures: model, datasets, latency table.

The generated classifier is correct by construction. A seeded random
network labels its own inputs through argmax, and examples whose top-two
logit gap falls in the lowest quantile are discarded, so the float model
scores 100% while quantization still has borderline examples to break at
aggressive bit widths. Everything derives from one seed through named
substreams; the same seed always reproduces the same bytes on disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cost import KIND_MATMUL, LatencyTable
from .graph import (
    KIND_AFFINE,
    KIND_RELU,
    Dataset,
    GraphError,
    Layer,
    ModelGraph,
    _run_layers,
    forward,
)
from .rng import substream

# Float accuracy the generated fixture must reach on its own eval split.
MIN_FIXTURE_ACCURACY = 0.95

DEFAULT_DIMS = (16, 24, 24, 16, 16, 8, 2)
DEFAULT_CALIB_EXAMPLES = 512
DEFAULT_EVAL_EXAMPLES = 2048


@dataclass(frozen=True)
class FixtureSpec:
    """Shape of a generated fixture: layer widths and split sizes."""

    dims: tuple[int, ...] = DEFAULT_DIMS
    calib_examples: int = DEFAULT_CALIB_EXAMPLES
    eval_examples: int = DEFAULT_EVAL_EXAMPLES
    margin_keep: float = 0.85

    def __post_init__(self) -> None:
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise GraphError(f"dims must be >= 2 positive widths, got {self.dims}")
        if self.dims[-1] < 2:
            raise GraphError("the last width is the class count and must be >= 2")
        if self.calib_examples < 1 or self.eval_examples < 1:
            raise GraphError("example counts must be >= 1")
        if not 0.0 < self.margin_keep <= 1.0:
            raise GraphError(f"margin_keep must lie in (0, 1], got {self.margin_keep}")


def _f32(values: np.ndarray) -> np.ndarray:
    # Snap to float32-representable values so save/load round-trips exactly.
    return values.astype(np.float32).astype(np.float64)


def build_fixture_model(seed: int, spec: FixtureSpec = FixtureSpec()) -> ModelGraph:
    """A seeded He-initialized relu chain with ``len(dims) - 1`` affine layers."""
    layers: list[Layer] = []
    n_affine = len(spec.dims) - 1
    for i in range(n_affine):
        fan_in, fan_out = spec.dims[i], spec.dims[i + 1]
        rng = substream(seed, "fixture", "layer", i)
        weight = _f32(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        bias = _f32(rng.normal(0.0, 0.05, size=fan_out))
        layers.append(Layer(f"dense{i + 1}", KIND_AFFINE, weight, bias))
        if i < n_affine - 1:
            layers.append(Layer(f"relu{i + 1}", KIND_RELU))
    return ModelGraph(layers)


def build_fixture(
    seed: int, spec: FixtureSpec = FixtureSpec()
) -> tuple[ModelGraph, Dataset, Dataset]:
    """Generate ``(model, calibration split, eval split)`` for ``seed``.

    The splits are disjoint samples of the same labeled pool. Raises if
    the float model somehow scores below the construction floor.
    """
    model = build_fixture_model(seed, spec)
    num_classes = spec.dims[-1]
    wanted = spec.calib_examples + spec.eval_examples
    pool_n = int(math.ceil(wanted / spec.margin_keep * 1.1)) + 8
    rng = substream(seed, "fixture", "examples")
    features = _f32(rng.normal(0.0, 1.0, size=(pool_n, spec.dims[0])))

    pool = Dataset(features, np.zeros(pool_n, dtype=np.int64), num_classes)
    logits = _fixture_logits(model, pool)
    top2 = np.sort(logits, axis=1)[:, -2:]
    margin = top2[:, 1] - top2[:, 0]
    cutoff = np.quantile(margin, 1.0 - spec.margin_keep)
    kept = np.flatnonzero(margin >= cutoff)
    if kept.size < wanted:
        raise GraphError(
            f"margin filter kept {kept.size} of {pool_n} examples, need {wanted}; "
            "lower margin_keep or the split sizes"
        )
    kept = kept[:wanted]
    labels = np.argmax(logits[kept], axis=1)

    calib = Dataset(
        features[kept[: spec.calib_examples]],
        labels[: spec.calib_examples],
        num_classes,
    )
    evalset = Dataset(
        features[kept[spec.calib_examples :]],
        labels[spec.calib_examples :],
        num_classes,
    )
    accuracy = forward(model, evalset).accuracy
    if accuracy < MIN_FIXTURE_ACCURACY:
        raise GraphError(
            f"generated fixture scores {accuracy:.4f}, below the floor {MIN_FIXTURE_ACCURACY}"
        )
    return model, calib, evalset


def _fixture_logits(model: ModelGraph, data: Dataset) -> np.ndarray:
    logits, _ = _run_layers(model, data.features, {}, keep_tape=False)
    return logits


def build_fixture_latency_table(
    model: ModelGraph, bit_widths=range(2, 17)
) -> LatencyTable:
    """A synthetic timing table covering every affine layer at every width.

    Latencies grow affinely with the multiply count and proportionally
    with bit width, so narrower configs are always faster and the table
    is safe for relative-latency assertions.
    """
    table = LatencyTable()
    for layer in model.layers:
        if layer.kind != KIND_AFFINE:
            continue
        out_dim, in_dim = layer.weight.shape
        for bits in bit_widths:
            latency = (0.05 + 2e-4 * out_dim * in_dim) * bits / 16.0
            table.add(KIND_MATMUL, out_dim, 1, in_dim, int(bits), round(latency, 6))
    return table
