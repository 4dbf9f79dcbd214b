"""End-to-end run orchestration: calibrate, score, search, report.

A run loads a model with calibration and eval splits, calibrates and
adjusts quantizer scales once per candidate bit width, scores tensor
sensitivity with the chosen metric, searches bit widths over the induced
ordering against the eval split, and writes every report plus a manifest
that reproduces the run byte for byte. The search space is the model's
weight tensors; activation tensors are carried in the final config at
the baseline width so the artifact covers the full quantizable set.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calibrate import (
    DEFAULT_EPOCHS,
    DEFAULT_LEARNING_RATE,
    adjust_scales,
    calibrate,
    save_specs,
)
from .cost import LatencyTable, cost_report
from .graph import Dataset, GraphError, ModelGraph, forward
from .modelio import DataFormatError, load_dataset, load_model
from .rng import substream
from .search import (
    DEFAULT_BASELINE_BITS,
    QuantConfig,
    SearchOutcome,
    TargetUnreachableError,
    bisection_search,
    evaluate_config,
    greedy_search,
    save_config,
    save_outcome,
)
from .sensitivity import (
    DEFAULT_NOISE_SCALE,
    DEFAULT_PROBES,
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    METRIC_HESSIAN,
    METRIC_NOISE,
    METRIC_QE,
    METRIC_RANDOM,
    METRICS,
    SensitivityReport,
    load_report,
    ordering_distance,
    save_report,
    score_hessian,
    score_noise,
    score_qe,
    score_random,
)

MANIFEST_FORMAT = "mixquant-run-manifest"
COMPARISON_FORMAT = "mixquant-comparison"

ALGO_BISECTION = "bisection"
ALGO_GREEDY = "greedy"
ALGOS = (ALGO_BISECTION, ALGO_GREEDY)

# Per-stage sample counts for the two disjoint calibration-file subsets.
DEFAULT_STAGE_SAMPLES = 256


class PipelineConfigError(ValueError):
    """Invalid run parameters, as opposed to malformed data files."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run depends on; serialized verbatim into the manifest."""

    model: str
    calib_data: str
    eval_data: str
    latency_table: str
    out_dir: str
    metric: str = METRIC_HESSIAN
    algo: str = ALGO_GREEDY
    bits: tuple[int, ...] = (4, 8)
    target: float = 0.99
    seed: int = DEFAULT_SEED
    noise_scale: float = DEFAULT_NOISE_SCALE
    trials: int = DEFAULT_TRIALS
    probes: int = DEFAULT_PROBES
    learning_rate: float = DEFAULT_LEARNING_RATE
    epochs: int = DEFAULT_EPOCHS
    baseline_bits: int = DEFAULT_BASELINE_BITS
    sensitivity_samples: int = DEFAULT_STAGE_SAMPLES
    calibration_samples: int = DEFAULT_STAGE_SAMPLES

    def validate(self) -> None:
        if self.metric not in METRICS:
            raise PipelineConfigError(f"unknown metric {self.metric!r}; choose from {METRICS}")
        if self.algo not in ALGOS:
            raise PipelineConfigError(f"unknown algo {self.algo!r}; choose from {ALGOS}")
        if not self.bits:
            raise PipelineConfigError("at least one candidate bit width is required")
        for b in self.bits:
            if not 2 <= int(b) <= self.baseline_bits:
                raise PipelineConfigError(
                    f"candidate bit width {b} outside [2, {self.baseline_bits}]"
                )
        if not 0.0 < self.target <= 1.0:
            raise PipelineConfigError(f"target must lie in (0, 1], got {self.target}")
        if self.trials < 1 or self.probes < 1:
            raise PipelineConfigError("trials and probes must be >= 1")
        if self.noise_scale < 0 or self.learning_rate < 0 or self.epochs < 0:
            raise PipelineConfigError("noise_scale, learning_rate and epochs must be >= 0")
        if self.sensitivity_samples < 1 or self.calibration_samples < 1:
            raise PipelineConfigError("subset sample counts must be >= 1")


@dataclass
class RunResult:
    out_dir: Path
    manifest: dict
    report: SensitivityReport
    outcome: SearchOutcome
    config: QuantConfig
    cost: dict
    baseline_accuracy: float


class _Stage:
    """Context wrapper that prefixes errors with the failing stage name."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, Exception):
            exc.args = (f"[stage: {self.name}] {exc}",) + exc.args[1:]
        return False


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _split_subsets(data: Dataset, config: PipelineConfig) -> tuple[Dataset, Dataset]:
    """Two disjoint seeded samples: one scores sensitivity, one calibrates."""
    n = len(data)
    n_sens = min(config.sensitivity_samples, n // 2)
    n_cal = min(config.calibration_samples, n - n_sens)
    if n_sens < 1 or n_cal < 1:
        raise PipelineConfigError(
            f"calibration file with {n} examples cannot fill two disjoint subsets"
        )
    perm = substream(config.seed, "data-split").permutation(n)
    return data.subset(perm[:n_sens]), data.subset(perm[n_sens : n_sens + n_cal])


def _score(
    config: PipelineConfig,
    model: ModelGraph,
    sens_data: Dataset,
    spec_bank: dict[int, dict],
    levels: list[int],
) -> SensitivityReport:
    if config.metric == METRIC_QE:
        probe = min(levels)
        return score_qe(model, spec_bank[probe], probe_bits=probe)
    if config.metric == METRIC_NOISE:
        return score_noise(
            model,
            sens_data,
            noise_scale=config.noise_scale,
            trials=config.trials,
            seed=config.seed,
        )
    if config.metric == METRIC_HESSIAN:
        return score_hessian(model, sens_data, probes=config.probes, seed=config.seed)
    return score_random(model.weight_tensor_names(), seed=config.seed)


def run_pipeline(config: PipelineConfig) -> RunResult:
    """Execute one full run and write its artifacts under ``config.out_dir``."""
    config.validate()

    with _Stage("load-inputs"):
        model = load_model(config.model)
        calib_data = load_dataset(config.calib_data)
        eval_data = load_dataset(config.eval_data)
        table = LatencyTable.from_csv(config.latency_table)

    levels = sorted({int(b) for b in config.bits if int(b) < config.baseline_bits}, reverse=True)
    if not levels:
        raise PipelineConfigError(
            f"no candidate bit width lies below the baseline {config.baseline_bits}"
        )
    weight_names = model.weight_tensor_names()
    if not weight_names:
        raise PipelineConfigError("model has no weight tensors to quantize")

    with _Stage("split-calibration-data"):
        sens_data, cal_data = _split_subsets(calib_data, config)

    with _Stage("calibrate-scales"):
        spec_bank: dict[int, dict] = {}
        bank_outcomes = {}
        for bits in levels:
            outcome = calibrate(model, cal_data, {name: bits for name in weight_names})
            outcome = adjust_scales(
                model,
                cal_data,
                outcome,
                learning_rate=config.learning_rate,
                epochs=config.epochs,
            )
            bank_outcomes[bits] = outcome
            spec_bank[bits] = outcome.specs

    with _Stage("score-sensitivity"):
        report = _score(config, model, sens_data, spec_bank, levels)

    with _Stage("measure-baseline"):
        baseline_accuracy = forward(model, eval_data).accuracy

    with _Stage("search-bit-widths"):
        def evaluator(candidate: QuantConfig) -> float:
            return evaluate_config(model, eval_data, spec_bank, candidate)

        search = bisection_search if config.algo == ALGO_BISECTION else greedy_search
        outcome = search(
            evaluator,
            list(report.ordering),
            levels,
            config.target,
            baseline_accuracy,
            baseline_bits=config.baseline_bits,
        )

    with _Stage("verify-target"):
        verified = evaluate_config(model, eval_data, spec_bank, outcome.config)
        if verified < outcome.target:
            raise TargetUnreachableError(
                f"committed configuration reaches accuracy {verified:.6f}, "
                f"below target {outcome.target:.6f}"
            )

    with _Stage("report-costs"):
        activation_names = [
            n for n in model.quantizable_tensor_names() if n.endswith(".out")
        ]
        full_config = outcome.config.replace(
            {name: config.baseline_bits for name in activation_names}
        )
        cost = cost_report(model, full_config, table, baseline_bits=config.baseline_bits)

    with _Stage("write-artifacts"):
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": 1,
            "tool_version": __version__,
            "parameters": asdict(config),
            "inputs": {
                # content digests, not file hashes: the manifest JSON of two
                # same-shaped models is identical, the parameters are not
                "model_sha256": model.parameter_digest(),
                "calib_data_sha256": calib_data.digest(),
                "eval_data_sha256": eval_data.digest(),
                "latency_table_sha256": _sha256(Path(config.latency_table)),
            },
            "baseline_accuracy": baseline_accuracy,
        }
        _write_json(out_dir / "manifest.json", manifest)
        save_report(report, out_dir / "sensitivity.json")
        save_config(full_config, out_dir / "config.json")
        save_outcome(outcome, out_dir / "outcome.json")
        cost_payload = {
            "format": "mixquant-cost-report",
            "version": 1,
            "size_bytes": cost.size_bytes,
            "latency_us": cost.latency_us,
            "relative_size": cost.relative_size,
            "relative_latency": cost.relative_latency,
        }
        _write_json(out_dir / "cost.json", cost_payload)
        for bits, outcome_b in bank_outcomes.items():
            save_specs(outcome_b, out_dir / f"specs-{bits}bit.json")

    return RunResult(
        out_dir=out_dir,
        manifest=manifest,
        report=report,
        outcome=outcome,
        config=full_config,
        cost=cost_payload,
        baseline_accuracy=baseline_accuracy,
    )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> PipelineConfig:
    """Rebuild the PipelineConfig a manifest was written from."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != MANIFEST_FORMAT:
        raise DataFormatError(f"{path} is not a {MANIFEST_FORMAT!r} file")
    try:
        params = dict(payload["parameters"])
        params["bits"] = tuple(int(b) for b in params["bits"])
        return PipelineConfig(**params)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed manifest parameters in {path}") from exc


def _load_run(run_dir: Path) -> dict:
    manifest_path = run_dir / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read {manifest_path}: {exc}") from exc
    try:
        cost = json.loads((run_dir / "cost.json").read_text())
        outcome_payload = json.loads((run_dir / "outcome.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"incomplete run directory {run_dir}: {exc}") from exc
    report = load_report(run_dir / "sensitivity.json")
    return {
        "dir": run_dir,
        "manifest": manifest,
        "cost": cost,
        "outcome": outcome_payload,
        "report": report,
    }


def compare_runs(run_dirs) -> dict:
    """Side-by-side summary of completed runs over the same model.

    Collects per-run cost and accuracy rows, aggregates mean and spread
    for repeated (metric, algo) groups, and reports pairwise edit
    distances between the runs' sensitivity orderings. Runs over
    different models are refused.
    """
    runs = [_load_run(Path(d)) for d in run_dirs]
    if len(runs) < 2:
        raise PipelineConfigError("compare needs at least two run directories")

    model_hashes = {r["manifest"].get("inputs", {}).get("model_sha256") for r in runs}
    if len(model_hashes) != 1 or None in model_hashes:
        raise PipelineConfigError("runs were produced from different models")

    labels = _distinct_labels([r["dir"] for r in runs])
    rows = []
    for label, run in zip(labels, runs):
        params = run["manifest"].get("parameters", {})
        rows.append(
            {
                "run": label,
                "metric": params.get("metric"),
                "algo": params.get("algo"),
                "seed": params.get("seed"),
                "target": params.get("target"),
                "achieved_accuracy": run["outcome"].get("achieved_accuracy"),
                "evals": run["outcome"].get("evals"),
                "relative_size": run["cost"].get("relative_size"),
                "relative_latency": run["cost"].get("relative_latency"),
            }
        )

    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["metric"], row["algo"]), []).append(row)
    aggregates = []
    for (metric, algo), members in sorted(groups.items()):
        if len(members) < 2:
            continue
        sizes = np.array([m["relative_size"] for m in members], dtype=np.float64)
        lats = np.array([m["relative_latency"] for m in members], dtype=np.float64)
        aggregates.append(
            {
                "metric": metric,
                "algo": algo,
                "runs": len(members),
                "relative_size_mean": float(sizes.mean()),
                "relative_size_std": float(sizes.std()),
                "relative_latency_mean": float(lats.mean()),
                "relative_latency_std": float(lats.std()),
            }
        )

    name_sets = {frozenset(r["report"].ordering) for r in runs}
    if len(name_sets) != 1:
        raise PipelineConfigError(
            "sensitivity orderings cover different tensor sets; cannot compare"
        )
    distances = []
    for i, run_a in enumerate(runs):
        for j in range(i + 1, len(runs)):
            run_b = runs[j]
            distances.append(
                {
                    "a": labels[i],
                    "b": labels[j],
                    "distance": ordering_distance(
                        list(run_a["report"].ordering), list(run_b["report"].ordering)
                    ),
                }
            )

    return {
        "format": COMPARISON_FORMAT,
        "version": 1,
        "rows": rows,
        "aggregates": aggregates,
        "ordering_distances": distances,
    }


def _distinct_labels(paths: list[Path]) -> list[str]:
    names = [p.name for p in paths]
    if len(set(names)) == len(names):
        return names
    return [str(p) for p in paths]
