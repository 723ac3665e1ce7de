"""Channel lifecycle and the profiler facade.

Typical use::

    from blockprof import HandlerKind, Profiler, ProfilerConfig

    cfg = ProfilerConfig(handler=HandlerKind.BUFFERED_ZSTD, output_dir="traces")
    with Profiler(cfg) as prof:
        ch_start = prof.open_channel("ch_start")
        ch_end = prof.open_channel("ch_end")
        ch_start.log(7)
        ch_end.log(7)
    # context exit drains the pipeline; every entry is now on disk

One profiler owns one pipeline (one block pool, one worker pool, one
writer) shared by all of its channels.  Each channel writes one trace
file, ``<output_dir>/<name>.cpf``.  ``shutdown`` is idempotent and
returns the same :class:`FlushReport` on repeated calls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import codecs, handlers
from .clock import now_ns
from .config import HandlerKind, ProfilerConfig
from .errors import ConfigurationError
from .handlers import ChannelHandle, codec_for_kind
from .logformat import FILE_SUFFIX, encode_header
from .pipeline import DEFAULT_DRAIN_TIMEOUT_S, Pipeline

__all__ = ["Profiler", "FlushReport", "ChannelFlushStats", "now_ns"]

logger = logging.getLogger("blockprof")


@dataclass
class ChannelFlushStats:
    name: str
    channel_id: int
    path: Path | None
    entries_written: int = 0
    frames_written: int = 0
    payload_writes: int = 0
    bytes_written: int = 0
    write_errors: int = 0
    dropped_after_close: int = 0


@dataclass
class FlushReport:
    """Accounting returned by :meth:`Profiler.shutdown`."""

    ok: bool
    channels: dict[str, ChannelFlushStats] = field(default_factory=dict)
    codec_fallbacks: int = 0
    free_blocks: int | None = None
    errors: list[str] = field(default_factory=list)

    @property
    def total_entries(self) -> int:
        return sum(c.entries_written for c in self.channels.values())


class Profiler:
    """Owns the channels, the shared pipeline, and the trace files."""

    def __init__(self, config: ProfilerConfig):
        config.validate()
        codecs.require(codec_for_kind(config.handler))
        self._config = config
        self._output_dir = config.resolved_output_dir()
        self._channels: list[ChannelHandle] = []
        self._names: set[str] = set()
        self._report: FlushReport | None = None
        self._pipeline: Pipeline | None = None
        if config.handler.is_buffered:
            self._pipeline = Pipeline(config)

    @property
    def config(self) -> ProfilerConfig:
        return self._config

    @property
    def output_dir(self) -> Path:
        return self._output_dir

    def open_channel(self, name: str) -> ChannelHandle:
        """Open a named channel and return its logging handle.

        Channel ids are dense, starting at 0, in open order.  For
        file-producing handlers the trace file exists with a valid
        header before this returns.
        """
        if self._report is not None:
            raise ConfigurationError("profiler is shut down")
        if not name:
            raise ConfigurationError("channel name must be non-empty")
        if "/" in name or "\\" in name or name in (".", ".."):
            raise ConfigurationError(f"channel name {name!r} is not a valid file stem")
        if name in self._names:
            raise ConfigurationError(f"channel {name!r} is already open")

        kind = self._config.handler
        channel_id = len(self._channels)
        path: Path | None = None
        header: bytes | None = None
        if kind.produces_file:
            try:
                self._output_dir.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ConfigurationError(
                    f"output directory {self._output_dir} is not writable: {exc}"
                ) from None
            path = self._output_dir / f"{name}{FILE_SUFFIX}"
            header = encode_header(
                kind, codec_for_kind(kind), self._config.block_capacity, name
            )

        try:
            if kind.is_buffered:
                assert self._pipeline is not None and path is not None
                f = open(path, "wb", buffering=0)
                f.write(header)
                self._pipeline.register_channel(channel_id, name, path, f)
                handle = handlers.open_channel_handle(
                    kind, name, channel_id, path, header,
                    self._pipeline, self._config.block_capacity,
                )
            else:
                handle = handlers.open_channel_handle(
                    kind, name, channel_id, path, header, None,
                    self._config.block_capacity,
                )
        except OSError as exc:
            raise ConfigurationError(
                f"cannot create trace file for channel {name!r}: {exc}"
            ) from None

        self._channels.append(handle)
        self._names.add(name)
        return handle

    def shutdown(self, timeout: float = DEFAULT_DRAIN_TIMEOUT_S) -> FlushReport:
        """Seal and flush everything, close all files, stop all threads.

        Idempotent: repeated calls return the first call's report.
        """
        if self._report is not None:
            return self._report

        errors: list[str] = []
        for handle in self._channels:
            try:
                handle.close()
            except OSError as exc:
                errors.append(f"closing channel {handle.name!r} failed: {exc}")

        channels: dict[str, ChannelFlushStats] = {}
        codec_fallbacks = 0
        free_blocks: int | None = None
        drained = True
        if self._pipeline is not None:
            pipe_report = self._pipeline.drain(timeout=timeout)
            drained = pipe_report.drained
            codec_fallbacks = pipe_report.codec_fallbacks
            free_blocks = pipe_report.free_blocks
            errors.extend(pipe_report.errors)
            for handle in self._channels:
                sink = pipe_report.sinks.get(handle.channel_id)
                channels[handle.name] = ChannelFlushStats(
                    name=handle.name,
                    channel_id=handle.channel_id,
                    path=handle.path,
                    entries_written=sink.entries_written if sink else 0,
                    frames_written=sink.frames_written if sink else 0,
                    payload_writes=sink.payload_writes if sink else 0,
                    bytes_written=sink.bytes_written if sink else 0,
                    write_errors=sink.write_errors if sink else 0,
                    dropped_after_close=handle.dropped_after_close,
                )
        else:
            for handle in self._channels:
                channels[handle.name] = ChannelFlushStats(
                    name=handle.name,
                    channel_id=handle.channel_id,
                    path=handle.path,
                    entries_written=handle.entries_written(),
                    frames_written=0,
                    payload_writes=handle.payload_writes(),
                    bytes_written=handle.bytes_written(),
                    write_errors=handle.write_errors(),
                    dropped_after_close=handle.dropped_after_close,
                )

        total_write_errors = sum(c.write_errors for c in channels.values())
        report = FlushReport(
            ok=drained and not errors and total_write_errors == 0,
            channels=channels,
            codec_fallbacks=codec_fallbacks,
            free_blocks=free_blocks,
            errors=errors,
        )
        if not report.ok:
            logger.error("profiler shutdown reported problems: %s", errors or "write errors")
        self._report = report
        return report

    def __enter__(self) -> "Profiler":
        return self

    def __exit__(self, *exc_info) -> None:
        self.shutdown()
