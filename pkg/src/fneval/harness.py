"""Verification sweeps and report persistence."""

from __future__ import annotations

import csv
import io
import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import __version__, constructions
from .analysis import Mismatch, predicts_failure, probe_counterexample
from .core import TransformerSpec, forward_chunked
from .precision import (QuantizationPolicy, c_size, min_exact_precision, precision_envelope)
from .task import (FunctionClass, Instance, PresentationCase, encode_batch, enumerate_instances,
                   exhaustive_cap, oracle, sampled_instances)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

MAX_FAILURES = 100
STREAM_BLOCK = 4096
CSV_FIELDS = ("case", "n", "trials", "correct", "accuracy", "seed", "wall_ms")


class UsageError(ValueError):
    pass


@dataclass
class SweepConfig:
    case: PresentationCase
    n: int
    builder: Optional[str] = None
    function_class: FunctionClass = FunctionClass.ALL_FUNCTIONS
    mode: str = "exhaustive"
    count: int = 10_000
    seed: int = 0
    p: Optional[int] = None
    workers: int = 1

    def __post_init__(self) -> None:
        self.case = PresentationCase.parse(self.case)
        self.function_class = FunctionClass(self.function_class)
        if self.builder is None:
            self.builder = constructions.default_builder(self.case)
        if self.n < 1:
            raise UsageError("n must be positive")
        if self.mode not in ("exhaustive", "sampled"):
            raise UsageError(f"mode must be 'exhaustive' or 'sampled', got {self.mode!r}")
        if self.mode == "exhaustive" and self.n > exhaustive_cap():
            raise UsageError(f"exhaustive mode needs n <= {exhaustive_cap()}; use --mode sampled")
        if self.mode == "sampled" and self.count < 1:
            raise UsageError("sample count must be positive")
        if self.workers < 0:
            raise UsageError("workers must be >= 0")

    def echo(self) -> dict:
        # workers is left out so reports do not depend on parallelism
        return {"case": int(self.case), "n": self.n, "builder": self.builder,
                "function_class": self.function_class.value, "mode": self.mode,
                "count": self.count if self.mode == "sampled" else None, "seed": self.seed,
                "p": self.p}


@dataclass
class VerificationReport:
    config: dict
    trials: int
    correct: int
    failures: list = field(default_factory=list)
    wall_ms: Optional[float] = None
    version: str = __version__

    @property
    def accuracy(self) -> float:
        return self.correct / self.trials if self.trials else 1.0

    @property
    def seed(self) -> int:
        return self.config["seed"]

    def to_dict(self, timing: bool = True) -> dict:
        return {"config": self.config, "trials": self.trials, "correct": self.correct,
                "accuracy": _ratio(self.accuracy), "failures": self.failures,
                "wall_ms": round(self.wall_ms, 3) if timing and self.wall_ms is not None else None,
                "version": self.version, "seed": self.seed}


def _ratio(x: float) -> float:
    return float(format(x, ".6g"))


def _instances(config: SweepConfig) -> Iterator[Instance]:
    if config.mode == "exhaustive":
        return enumerate_instances(config.n, config.function_class, ordered=config.case.ordered)
    return sampled_instances(config.n, config.function_class, config.case, config.count, config.seed)


def resolve_spec(config: SweepConfig) -> TransformerSpec:
    builder = config.builder
    if builder == "case3" and config.case is PresentationCase.SAME_POS_ORDERED:
        builder = "case2"
    spec = constructions.build(builder, config.n)
    if spec.case is not config.case:
        raise UsageError(f"builder {config.builder!r} targets case {int(spec.case)}, not case {int(config.case)}")
    return spec


def run_verification(config: SweepConfig, spec: Optional[TransformerSpec] = None) -> VerificationReport:
    """Compare (quantized) forward against the oracle on every instance of the sweep."""
    spec = resolve_spec(config) if spec is None else spec
    if spec.n != config.n or spec.length != config.case.length(config.n) \
            or spec.case.uses_pairs != config.case.uses_pairs:
        raise UsageError(f"spec (case {int(spec.case)}, n={spec.n}) does not fit case {int(config.case)}, n={config.n}")
    quantizer = QuantizationPolicy(config.p) if config.p is not None else None
    start = time.perf_counter()
    trials = correct = 0
    failures = []
    stream = _instances(config)
    while True:
        block = list(itertools.islice(stream, STREAM_BLOCK))
        if not block:
            break
        expected = np.array([oracle(inst) for inst in block])
        got = forward_chunked(spec, encode_batch(block, config.case), quantizer=quantizer,
                              invalid=-1, workers=config.workers)
        hits = got == expected
        trials += len(block)
        correct += int(hits.sum())
        for i in np.flatnonzero(~hits)[:MAX_FAILURES - len(failures)]:
            inst = block[i]
            failures.append({"instance": json.loads(inst.to_json()), "expected": int(expected[i]),
                             "got": int(got[i])})
    wall = (time.perf_counter() - start) * 1000.0
    return VerificationReport(config=config.echo(), trials=trials, correct=correct,
                              failures=failures, wall_ms=wall)


@dataclass
class ProbeReport:
    n: int
    spec_name: str
    predicted_failure: bool
    mismatch: Optional[Mismatch]

    @property
    def consistent(self) -> bool:
        return (self.mismatch is not None) == self.predicted_failure

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.consistent else EXIT_VERIFY_FAILED

    def to_dict(self) -> dict:
        mm = None
        if self.mismatch is not None:
            mm = asdict(self.mismatch)
            mm["tokens"] = list(mm["tokens"])
        return {"n": self.n, "spec": self.spec_name, "predicted_failure": self.predicted_failure,
                "mismatch": mm, "consistent": self.consistent}


def run_probe(spec: TransformerSpec, n: int, random_search: int = 0, seed: int = 0) -> ProbeReport:
    mismatch = probe_counterexample(spec, n, random_search=random_search, seed=seed)
    return ProbeReport(n=n, spec_name=spec.name, predicted_failure=predicts_failure(spec), mismatch=mismatch)


def precision_sweep(builder_id: str, n_list, sample: int = 10_000, seed: int = 0) -> list[dict]:
    """One row per n: p*, c-size at p*, the envelope and whether p* is within it."""
    rows = []
    for n in n_list:
        p_star = min_exact_precision(builder_id, n, sample_size=sample, seed=seed)
        spec = constructions.build(builder_id, n)
        envelope = precision_envelope(n)
        rows.append({"case": int(spec.case), "builder": builder_id, "n": n, "p_star": p_star,
                     "csize_at_pstar": c_size(spec, p_star).product if p_star is not None else None,
                     "envelope": envelope, "pass": p_star is not None and p_star <= envelope})
    return rows


def render_report(report: VerificationReport, fmt: str = "json", timing: bool = True) -> str:
    """Serialize a report; identical reports give identical text."""
    data = report.to_dict(timing=timing)
    if fmt == "json":
        return json.dumps(data, sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        wall = "" if data["wall_ms"] is None else f"{data['wall_ms']:.3f}"
        writer.writerow([report.config["case"], report.config["n"], report.trials, report.correct,
                         format(report.accuracy, ".6g"), report.seed, wall])
        return buf.getvalue()
    if fmt == "text":
        wall = "" if data["wall_ms"] is None else f" wall_ms={data['wall_ms']:.3f}"
        return (f"case={report.config['case']} n={report.config['n']} builder={report.config['builder']} "
                f"trials={report.trials} correct={report.correct} accuracy={format(report.accuracy, '.6g')} "
                f"seed={report.seed} failures={len(report.failures)}{wall}\n")
    raise UsageError(f"unknown report format {fmt!r}")


def render_rows(rows: list[dict], fields) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in fields})
    return buf.getvalue()


def emit_report(report: VerificationReport, fmt: str, path: Optional[str], timing: bool = True) -> None:
    text = render_report(report, fmt, timing=timing)
    if path is None or path == "-":
        print(text, end="")
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
