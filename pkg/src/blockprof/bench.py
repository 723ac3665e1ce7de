"""Microbenchmark harness: synthetic recursive workload plus suite runner.

The workload is a pair of mutually recursive functions.  The monitored
wrapper logs a start entry, invokes the recursive workload, and always
logs an end entry (finally semantics).  The workload recurses
``depth - 1`` times and at the innermost level busy-waits on the
monotonic clock until ``time_ns`` nanoseconds have passed, so one
invocation at depth d produces exactly d start and d end entries
(tags d, d-1, ..., 1 on the start channel; 1, 2, ..., d on the end
channel as the recursion unwinds).

A repeat times each of ``iterations`` invocations individually with the
same monotonic clock the profiler uses, samples resident memory every
``memory_sample_stride`` iterations, and persists one result file
(``iteration,elapsed_ns``) plus a memory sidecar per repeat.

A suite runs each configuration's repeats in fresh subprocesses so
allocator and page-cache state cannot leak between runs.  The suite
strips ``BLOCKPROF_OUT`` from child environments: repeats write traces
to isolated per-repeat directories under the results tree, and a global
override would make consecutive repeats clobber one another's files.
The baseline configuration omits the two log calls entirely.
"""

from __future__ import annotations

import argparse
import os
import platform
import resource
import shutil
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import clock, logformat
from .clock import now_ns
from .config import OUTPUT_DIR_ENV, HandlerKind, ProfilerConfig
from .core import Profiler
from .errors import ConfigurationError

#: Configuration labels in canonical suite order.
BASELINE_LABEL = "baseline"
HANDLER_LABELS = ("null", "direct_id", "buffered_id", "buffered_zstd", "buffered_realtime")
SUITE_ORDER = (BASELINE_LABEL,) + HANDLER_LABELS

MANIFEST_NAME = "manifest.txt"


def kind_for_label(label: str) -> HandlerKind | None:
    """Map a configuration label to its handler kind (None for baseline)."""
    if label == BASELINE_LABEL:
        return None
    if label in HANDLER_LABELS:
        return HandlerKind.from_name(label)
    raise ConfigurationError(
        f"unknown configuration {label!r} (expected one of: {', '.join(SUITE_ORDER)})"
    )


@dataclass
class BenchConfig:
    """One configuration's measurement parameters (protocol defaults)."""

    configuration: str = BASELINE_LABEL
    iterations: int = 2_000_000
    depth: int = 10
    method_time_ns: int = 0
    repeats: int = 10
    memory_sample_stride: int = 1_000

    def validate(self) -> None:
        kind_for_label(self.configuration)
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")
        if self.method_time_ns < 0:
            raise ConfigurationError("method_time_ns must be >= 0")
        if self.repeats < 1:
            raise ConfigurationError("repeats must be >= 1")
        if self.memory_sample_stride < 1:
            raise ConfigurationError("memory_sample_stride must be >= 1")


@dataclass
class MeasurementSet:
    """Per-iteration timings and memory samples for one repeat."""

    configuration: str
    repeat_index: int
    elapsed_ns: np.ndarray
    memory_samples: np.ndarray  # columns: iteration, resident_bytes
    valid: bool = True
    error: str = ""
    entry_counts: dict[str, int] = field(default_factory=dict)


def make_workload(
    log_start: Callable[[int], None] | None,
    log_end: Callable[[int], None] | None,
    inner: Callable[[int, int], int] | None = None,
) -> Callable[[int, int], int]:
    """Build the monitored workload.

    Returns ``monitored(time_ns, depth)``.  With both log callables set
    to None the instrumentation calls are omitted entirely (baseline).
    ``inner`` replaces the recursive workload body and exists for tests
    that need a failing workload; the end entry is logged even then.
    """
    mono = now_ns

    def extracted(time_ns: int, depth: int) -> int:
        if depth > 1:
            return monitored(time_ns, depth - 1)
        exit_time = mono() + time_ns
        cur = mono()
        while cur < exit_time:
            cur = mono()
        return cur

    body = inner if inner is not None else extracted

    if log_start is None and log_end is None:

        def monitored(time_ns: int, depth: int) -> int:
            return body(time_ns, depth)

        return monitored

    assert log_start is not None and log_end is not None

    def monitored(time_ns: int, depth: int) -> int:
        log_start(depth)
        try:
            return body(time_ns, depth)
        finally:
            log_end(depth)

    return monitored


_PAGE_SIZE = resource.getpagesize()


def resident_bytes() -> int:
    """Current resident set size in bytes (peak RSS fallback)."""
    try:
        with open("/proc/self/statm", "rb") as f:
            return int(f.read().split()[1]) * _PAGE_SIZE
    except (OSError, IndexError, ValueError):
        return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def run_repeat(
    config: BenchConfig,
    *,
    repeat_index: int = 0,
    num_blocks: int = 32,
    block_capacity: int = 1_000_000,
    num_compression_workers: int = 4,
    trace_dir: str | Path | None = None,
    result_dir: str | Path | None = None,
    keep_traces: bool = False,
) -> MeasurementSet:
    """Execute one repeat of one configuration in this process.

    Opens a fresh profiler (new trace files), times every iteration,
    drains on completion, and checks that the trace files decode to
    exactly ``iterations * depth`` entries per channel.  A flush
    failure or a count mismatch marks the repeat invalid.
    """
    config.validate()
    kind = kind_for_label(config.configuration)

    own_trace_dir = trace_dir is None
    if own_trace_dir:
        trace_dir = Path(tempfile.mkdtemp(prefix="blockprof-traces-"))
    else:
        trace_dir = Path(trace_dir)

    profiler: Profiler | None = None
    log_start = log_end = None
    if kind is not None:
        profiler = Profiler(
            ProfilerConfig(
                handler=kind,
                num_blocks=num_blocks,
                block_capacity=block_capacity,
                num_compression_workers=num_compression_workers,
                output_dir=trace_dir,
            )
        )
        log_start = profiler.open_channel("ch_start").log
        log_end = profiler.open_channel("ch_end").log

    monitored = make_workload(log_start, log_end)

    iterations = config.iterations
    depth = config.depth
    time_ns = config.method_time_ns
    stride = config.memory_sample_stride
    elapsed = np.empty(iterations, dtype=np.int64)
    mem_iters: list[int] = []
    mem_values: list[int] = []
    mono = now_ns

    for i in range(iterations):
        if not i % stride:
            mem_iters.append(i)
            mem_values.append(resident_bytes())
        t0 = mono()
        monitored(time_ns, depth)
        t1 = mono()
        elapsed[i] = t1 - t0

    valid = True
    error = ""
    entry_counts: dict[str, int] = {}
    if profiler is not None:
        report = profiler.shutdown()
        if not report.ok:
            valid = False
            error = "; ".join(report.errors) or "flush reported write errors"
        if kind.produces_file:
            expected = iterations * depth
            for name, stats in report.channels.items():
                entries, _ = logformat.decode_file(stats.path)
                entry_counts[name] = len(entries)
                if len(entries) != expected:
                    valid = False
                    error = (
                        f"channel {name!r} decoded {len(entries)} entries, "
                        f"expected {expected}"
                    )

    measurement = MeasurementSet(
        configuration=config.configuration,
        repeat_index=repeat_index,
        elapsed_ns=elapsed,
        memory_samples=np.array([mem_iters, mem_values], dtype=np.int64).T,
        valid=valid,
        error=error,
        entry_counts=entry_counts,
    )

    if result_dir is not None:
        write_repeat_files(Path(result_dir), measurement)

    if not keep_traces:
        shutil.rmtree(trace_dir, ignore_errors=True)

    return measurement


def repeat_file(result_dir: Path, repeat_index: int) -> Path:
    return result_dir / f"repeat_{repeat_index}.csv"


def memory_file(result_dir: Path, repeat_index: int) -> Path:
    return result_dir / f"repeat_{repeat_index}.mem.csv"


def write_repeat_files(result_dir: Path, measurement: MeasurementSet) -> None:
    result_dir.mkdir(parents=True, exist_ok=True)
    path = repeat_file(result_dir, measurement.repeat_index)
    with open(path, "w") as f:
        f.write("iteration,elapsed_ns\n")
        f.writelines(f"{i},{v}\n" for i, v in enumerate(measurement.elapsed_ns))
    mem_path = memory_file(result_dir, measurement.repeat_index)
    with open(mem_path, "w") as f:
        f.write("iteration,resident_bytes\n")
        f.writelines(f"{i},{v}\n" for i, v in measurement.memory_samples)


@dataclass
class SuiteConfig:
    """Full benchmark suite: configurations, volumes, profiler knobs."""

    out_dir: str | Path = "bench-results"
    configurations: tuple[str, ...] = SUITE_ORDER
    iterations: int = 2_000_000
    depth: int = 10
    method_time_ns: int = 0
    repeats: int = 10
    memory_sample_stride: int = 1_000
    num_blocks: int = 32
    block_capacity: int = 1_000_000
    num_compression_workers: int = 4
    keep_traces: bool = False

    def bench_config(self, label: str) -> BenchConfig:
        return BenchConfig(
            configuration=label,
            iterations=self.iterations,
            depth=self.depth,
            method_time_ns=self.method_time_ns,
            repeats=self.repeats,
            memory_sample_stride=self.memory_sample_stride,
        )

    def validate(self) -> None:
        if not self.configurations:
            raise ConfigurationError("no configurations selected")
        for label in self.configurations:
            self.bench_config(label).validate()


@dataclass
class SuiteResult:
    out_dir: Path
    manifest_path: Path
    statuses: dict[tuple[str, int], str]

    @property
    def failures(self) -> list[tuple[str, int, str]]:
        return [
            (label, idx, status)
            for (label, idx), status in self.statuses.items()
            if status != "ok"
        ]

    @property
    def ok(self) -> bool:
        return not self.failures


def host_metadata() -> dict[str, str]:
    cpu_model = platform.processor() or "unknown"
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.lower().startswith("model name"):
                    cpu_model = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {
        "host.platform": platform.platform(),
        "host.python": platform.python_version(),
        "host.cpu_model": cpu_model,
        "host.cpu_count": str(os.cpu_count() or 0),
        "host.clock_resolution_ns": f"{clock.resolution_ns():g}",
    }


def write_manifest(path: Path, entries: dict[str, str]) -> None:
    with open(path, "w") as f:
        for key, value in entries.items():
            f.write(f"{key} = {value}\n")


def parse_manifest(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def run_suite(suite: SuiteConfig) -> SuiteResult:
    """Run every selected configuration, each repeat in a fresh process.

    Results land under ``out_dir/<label>/``; the manifest records the
    deterministic suite order, the parameters, host metadata, and one
    status line per repeat.  Repeat failures are recorded and the suite
    continues.
    """
    suite.validate()
    out_dir = Path(suite.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    env = dict(os.environ)
    env.pop(OUTPUT_DIR_ENV, None)

    manifest: dict[str, str] = {"format": "blockprof-bench-manifest v1"}
    manifest["run.started_utc"] = datetime.now(timezone.utc).isoformat()
    manifest.update(host_metadata())
    manifest["suite.configurations"] = ",".join(suite.configurations)
    manifest["suite.iterations"] = str(suite.iterations)
    manifest["suite.depth"] = str(suite.depth)
    manifest["suite.method_time_ns"] = str(suite.method_time_ns)
    manifest["suite.repeats"] = str(suite.repeats)
    manifest["suite.memory_sample_stride"] = str(suite.memory_sample_stride)
    manifest["profiler.num_blocks"] = str(suite.num_blocks)
    manifest["profiler.block_capacity"] = str(suite.block_capacity)
    manifest["profiler.num_compression_workers"] = str(suite.num_compression_workers)
    manifest["stats.selection"] = "second-half-per-repeat"
    manifest["stats.stddev"] = "population"

    statuses: dict[tuple[str, int], str] = {}
    for label in suite.configurations:
        label_dir = out_dir / label
        label_dir.mkdir(parents=True, exist_ok=True)
        for idx in range(suite.repeats):
            cmd = [
                sys.executable,
                "-m",
                "blockprof.bench",
                "--label", label,
                "--iterations", str(suite.iterations),
                "--depth", str(suite.depth),
                "--time-ns", str(suite.method_time_ns),
                "--repeat-index", str(idx),
                "--stride", str(suite.memory_sample_stride),
                "--num-blocks", str(suite.num_blocks),
                "--block-capacity", str(suite.block_capacity),
                "--workers", str(suite.num_compression_workers),
                "--out", str(out_dir),
            ]
            if suite.keep_traces:
                cmd.append("--keep-traces")
            proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
            if proc.returncode == 0:
                status = "ok"
            else:
                tail = proc.stderr.strip().splitlines()
                status = f"failed rc={proc.returncode}"
                if tail:
                    status += f" ({tail[-1][:200]})"
            statuses[(label, idx)] = status
            manifest[f"result.{label}.repeat_{idx}"] = status

    manifest["run.finished_utc"] = datetime.now(timezone.utc).isoformat()
    manifest["suite.exit_status"] = (
        "complete" if all(s == "ok" for s in statuses.values()) else "partial"
    )
    manifest_path = out_dir / MANIFEST_NAME
    write_manifest(manifest_path, manifest)
    return SuiteResult(out_dir=out_dir, manifest_path=manifest_path, statuses=statuses)


def _worker_main(argv: Sequence[str] | None = None) -> int:
    """Entry point for one repeat in a fresh process (internal)."""
    parser = argparse.ArgumentParser(
        prog="python -m blockprof.bench",
        description="Run a single benchmark repeat (used by the suite runner).",
    )
    parser.add_argument("--label", required=True)
    parser.add_argument("--iterations", type=int, required=True)
    parser.add_argument("--depth", type=int, default=10)
    parser.add_argument("--time-ns", type=int, default=0)
    parser.add_argument("--repeat-index", type=int, default=0)
    parser.add_argument("--stride", type=int, default=1000)
    parser.add_argument("--num-blocks", type=int, default=32)
    parser.add_argument("--block-capacity", type=int, default=1_000_000)
    parser.add_argument("--workers", type=int, default=4)
    parser.add_argument("--out", required=True)
    parser.add_argument("--keep-traces", action="store_true")
    args = parser.parse_args(argv)

    config = BenchConfig(
        configuration=args.label,
        iterations=args.iterations,
        depth=args.depth,
        method_time_ns=args.time_ns,
        repeats=1,
        memory_sample_stride=args.stride,
    )
    result_dir = Path(args.out) / args.label
    trace_dir = result_dir / f"traces_repeat_{args.repeat_index}"
    measurement = run_repeat(
        config,
        repeat_index=args.repeat_index,
        num_blocks=args.num_blocks,
        block_capacity=args.block_capacity,
        num_compression_workers=args.workers,
        trace_dir=trace_dir,
        result_dir=result_dir,
        keep_traces=args.keep_traces,
    )
    if not measurement.valid:
        print(f"repeat invalid: {measurement.error}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(_worker_main())
