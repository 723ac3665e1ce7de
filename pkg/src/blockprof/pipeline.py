"""Off-critical-path machinery: block pool, queues, workers, writer.

Ownership protocol.  A fixed pool of blocks circulates between stages::

    free pool -> filling (channel appender) -> raw queue -> worker
              -> write queue -> writer -> free pool

The no-compression route skips the workers: sealed blocks go straight
to the write queue and the writer encodes them itself.  Each block is
owned by exactly one stage at a time; hand-off happens through queues,
so no stage ever touches a block another stage holds.  Queue items are
``(block, channel_id, seq_no, codec_id, payload, raw_len)`` tuples
where ``payload`` is None until a worker has encoded and compressed the
block.

Producers that find the free pool empty wait with bounded exponential
backoff until the writer recycles a block; entries are never dropped.
Idle workers and the writer back off the same way, capped at 1 ms, so
empty queues do not burn a core.

Drain protocol: once every channel has sealed its partial block,
:meth:`Pipeline.drain` sets the drain flag, joins the workers (they
exit when the raw queue is empty), then lets the writer finish the
write queue, sync and close the files.  A drain that exceeds its
timeout reports a loss diagnosis instead of hanging.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import codecs
from ._native import EntryBlock
from .codecs import CodecId
from .config import HandlerKind, ProfilerConfig
from .errors import UsageError
from .logformat import encode_frame_header

logger = logging.getLogger("blockprof")

_BACKOFF_START_S = 1e-6
_BACKOFF_CAP_S = 1e-3

#: drain gives up (with a diagnosis) after this many seconds by default
DEFAULT_DRAIN_TIMEOUT_S = 60.0


def _write_all(f, data: bytes) -> None:
    # raw files may write short on signal delivery; one logical append anyway
    view = memoryview(data)
    while view:
        n = f.write(view)
        view = view[n:]


@dataclass
class ChannelSink:
    """One channel's trace file plus write accounting."""

    channel_id: int
    name: str
    path: Path
    file: object  # unbuffered binary file; writer thread only
    entries_written: int = 0
    frames_written: int = 0
    payload_writes: int = 0
    bytes_written: int = 0
    write_errors: int = 0


@dataclass
class PipelineReport:
    drained: bool
    sinks: dict[int, ChannelSink] = field(default_factory=dict)
    codec_fallbacks: int = 0
    free_blocks: int = 0
    errors: list[str] = field(default_factory=list)


class Pipeline:
    """Shared block pool, compression workers and the single writer."""

    def __init__(self, config: ProfilerConfig):
        config.validate()
        self._config = config
        self._free: queue.SimpleQueue = queue.SimpleQueue()
        self._raw: queue.SimpleQueue = queue.SimpleQueue()
        self._write: queue.SimpleQueue = queue.SimpleQueue()
        for _ in range(config.num_blocks):
            self._free.put(EntryBlock(capacity=config.block_capacity))
        self._sinks: dict[int, ChannelSink] = {}
        self._draining = threading.Event()
        self._workers_done = threading.Event()
        self._stopped = False
        self._codec_fallbacks = 0
        self._fallback_logged = False
        self._errors: list[str] = []
        self._error_lock = threading.Lock()

        # the no-codec route has no compression stage in its chain
        self._workers: list[threading.Thread] = []
        if config.handler.is_buffered and config.handler != HandlerKind.BUFFERED_ID:
            self._workers = [
                threading.Thread(
                    target=self._compression_worker_loop,
                    name=f"blockprof-worker-{i}",
                    daemon=True,
                )
                for i in range(config.num_compression_workers)
            ]
        self._writer = threading.Thread(
            target=self._writer_loop, name="blockprof-writer", daemon=True
        )
        for w in self._workers:
            w.start()
        self._writer.start()

    # -- channel registration -----------------------------------------

    def register_channel(self, channel_id: int, name: str, path: Path, file) -> None:
        """Attach a channel's open trace file; the writer appends to it."""
        self._sinks[channel_id] = ChannelSink(
            channel_id=channel_id, name=name, path=path, file=file
        )

    # -- producer side -------------------------------------------------

    def acquire_empty(self) -> EntryBlock:
        """Take an empty block from the pool, waiting if it is exhausted."""
        delay = _BACKOFF_START_S
        while True:
            try:
                return self._free.get_nowait()
            except queue.Empty:
                if self._stopped:
                    raise UsageError("pipeline is shut down") from None
                time.sleep(delay)
                delay = min(delay * 2, _BACKOFF_CAP_S)

    def release_empty(self, block: EntryBlock) -> None:
        """Return an unused (count == 0) block to the pool."""
        block.reset()
        self._free.put(block)

    def submit(self, block: EntryBlock, channel_id: int, seq_no: int, codec_id: CodecId) -> None:
        """Hand a sealed, non-empty block to the pipeline."""
        if block.count == 0:
            raise UsageError("cannot submit an empty block")
        item = (block, channel_id, seq_no, codec_id, None, 0)
        if codec_id == CodecId.IDENTITY:
            self._write.put(item)
        else:
            self._raw.put(item)

    # -- worker threads --------------------------------------------------

    def _get_backoff(self, q: queue.SimpleQueue, stop_event: threading.Event):
        delay = _BACKOFF_START_S
        while True:
            try:
                return q.get_nowait()
            except queue.Empty:
                if stop_event.is_set():
                    return None
                time.sleep(delay)
                delay = min(delay * 2, _BACKOFF_CAP_S)

    def _compression_worker_loop(self) -> None:
        while True:
            item = self._get_backoff(self._raw, self._draining)
            if item is None:
                return
            block, channel_id, seq_no, codec_id, _, _ = item
            raw = block.encode()
            try:
                payload = codecs.compress(codec_id, raw)
                used = codec_id
            except Exception as exc:
                # losslessness beats compression: ship the raw bytes
                with self._error_lock:
                    self._codec_fallbacks += 1
                    first = not self._fallback_logged
                    self._fallback_logged = True
                if first:
                    logger.warning("codec %s failed (%s); falling back to identity", codec_id, exc)
                payload = raw
                used = CodecId.IDENTITY
            self._write.put((block, channel_id, seq_no, used, payload, len(raw)))

    def _writer_loop(self) -> None:
        while True:
            item = self._get_backoff(self._write, self._workers_done)
            if item is None:
                break
            block, channel_id, seq_no, codec_id, payload, raw_len = item
            if payload is None:
                payload = block.encode()
                raw_len = len(payload)
                codec_id = CodecId.IDENTITY
            count = block.count
            frame = (
                encode_frame_header(seq_no, count, codec_id, raw_len, len(payload))
                + payload
            )
            sink = self._sinks[channel_id]
            try:
                _write_all(sink.file, frame)
                sink.frames_written += 1
                sink.payload_writes += 1
                sink.entries_written += count
                sink.bytes_written += len(frame)
            except OSError as exc:
                sink.write_errors += 1
                with self._error_lock:
                    self._errors.append(f"write to {sink.path} failed: {exc}")
            # recycle even after a failed write so producers never deadlock
            block.reset()
            self._free.put(block)
        for sink in self._sinks.values():
            try:
                sink.file.flush()
                os.fsync(sink.file.fileno())
                sink.file.close()
            except (OSError, ValueError) as exc:
                with self._error_lock:
                    self._errors.append(f"closing {sink.path} failed: {exc}")

    # -- shutdown --------------------------------------------------------

    def free_size(self) -> int:
        return self._free.qsize()

    def drain(self, timeout: float = DEFAULT_DRAIN_TIMEOUT_S) -> PipelineReport:
        """Flush everything, stop the threads, close the files.

        Callers must have sealed all filling blocks first.  Returns the
        accounting report; on timeout the report carries a loss
        diagnosis instead of raising.
        """
        deadline = time.monotonic() + timeout
        self._draining.set()
        stuck = False
        for w in self._workers:
            w.join(max(0.0, deadline - time.monotonic()))
            stuck = stuck or w.is_alive()
        self._workers_done.set()
        self._writer.join(max(0.0, deadline - time.monotonic()))
        stuck = stuck or self._writer.is_alive()
        self._stopped = True

        report = PipelineReport(
            drained=not stuck,
            sinks=self._sinks,
            codec_fallbacks=self._codec_fallbacks,
            free_blocks=self.free_size(),
            errors=list(self._errors),
        )
        if stuck:
            report.errors.append(
                "drain timed out: "
                f"raw queue ~{self._raw.qsize()}, write queue ~{self._write.qsize()}, "
                f"free pool {report.free_blocks}/{self._config.num_blocks}; "
                "entries still in flight may be lost"
            )
        return report
