"""Per-entry dispatch strategies: discard, write-per-entry, or buffer.

Each open channel is bound to one handler object whose ``log(tag)``
method is the hot path.  The null handler returns immediately.  The
direct handler writes one 12-byte record per call.  The buffered
handlers append into the current block through the native appender and
only touch the pipeline on the block-seal boundary.

Concurrency: ``log`` may be called from any number of threads.  The
native append is atomic under the GIL; sealing and block swaps happen
under a per-channel lock that is never held across file I/O (submitting
to the pipeline is an in-memory enqueue).  Logging on a closed channel
reports a warning once and then degrades to a counted no-op - the host
application must never crash because of its profiler.
"""

from __future__ import annotations

import logging
import os
import threading
from pathlib import Path

from ._native import ChannelAppender, DirectRecordWriter
from .codecs import CodecId
from .config import HandlerKind
from .logformat import ENTRY_SIZE
from .pipeline import Pipeline

logger = logging.getLogger("blockprof")


def codec_for_kind(kind: HandlerKind) -> CodecId:
    if kind == HandlerKind.BUFFERED_ZSTD:
        return CodecId.ZSTD
    if kind == HandlerKind.BUFFERED_REALTIME:
        return CodecId.REALTIME
    return CodecId.IDENTITY


class ChannelHandle:
    """Base handle; valid from open until profiler shutdown."""

    kind: HandlerKind

    def __init__(self, name: str, channel_id: int):
        self.name = name
        self.channel_id = channel_id
        self.path: Path | None = None
        self.closed = False
        self.dropped_after_close = 0

    def log(self, tag: int) -> None:  # pragma: no cover - overridden
        raise NotImplementedError

    def close(self) -> None:
        self.closed = True

    def _note_dropped(self) -> None:
        self.dropped_after_close += 1
        if self.dropped_after_close == 1:
            logger.warning(
                "log call on closed channel %r dropped (reported once)", self.name
            )

    # stats snapshot consumed by the shutdown report
    def entries_written(self) -> int:
        return 0

    def payload_writes(self) -> int:
        return 0

    def bytes_written(self) -> int:
        return 0

    def write_errors(self) -> int:
        return 0


class NullChannel(ChannelHandle):
    """Discards every entry; an immediately returning call."""

    kind = HandlerKind.NULL

    def log(self, tag: int) -> None:
        if self.closed:
            self._note_dropped()


class DirectChannel(ChannelHandle):
    """One write(2) of one 12-byte record per logged entry."""

    kind = HandlerKind.DIRECT_ID

    def __init__(self, name: str, channel_id: int, path: Path, header: bytes):
        super().__init__(name, channel_id)
        self.path = path
        self._fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC | os.O_APPEND, 0o644)
        os.write(self._fd, header)
        self._header_size = len(header)
        self._writer = DirectRecordWriter(fd=self._fd)
        self._dlog = self._writer.log

    def log(self, tag: int) -> None:
        if self.closed:
            self._note_dropped()
            return
        self._dlog(tag)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._writer.detach()
        os.fsync(self._fd)
        os.close(self._fd)

    def entries_written(self) -> int:
        return self._writer.writes

    def payload_writes(self) -> int:
        return self._writer.writes

    def bytes_written(self) -> int:
        return self._header_size + ENTRY_SIZE * self._writer.writes

    def write_errors(self) -> int:
        return self._writer.errors


class BufferedChannel(ChannelHandle):
    """Appends to the current block; seals full blocks into the pipeline."""

    def __init__(
        self,
        name: str,
        channel_id: int,
        path: Path,
        kind: HandlerKind,
        pipeline: Pipeline,
        capacity: int,
    ):
        super().__init__(name, channel_id)
        self.kind = kind
        self.path = path
        self._pipeline = pipeline
        self._capacity = capacity
        self._codec_id = codec_for_kind(kind)
        self._lock = threading.Lock()
        self._seq = 0
        self._block = pipeline.acquire_empty()
        self._appender = ChannelAppender()
        self._appender.set_block(self._block)
        self._clog = self._appender.log

    def log(self, tag: int) -> None:
        r = self._clog(tag)
        if r < 1:
            if r == 0:
                self._roll()
            else:
                self._log_blocked(tag)

    def _submit_locked(self) -> None:
        # submit before acquiring: the writer can only recycle blocks
        # that have reached the pipeline
        block = self._block
        self._pipeline.submit(block, self.channel_id, self._seq, self._codec_id)
        self._seq += 1
        fresh = self._pipeline.acquire_empty()
        self._block = fresh
        self._appender.set_block(fresh)

    def _roll(self) -> None:
        with self._lock:
            block = self._block
            if block is not None and block.count >= self._capacity:
                self._submit_locked()

    def _log_blocked(self, tag: int) -> None:
        # the current block was full (another thread is sealing) or the
        # channel is closed; retry under the lock
        while True:
            if self.closed:
                self._note_dropped()
                return
            with self._lock:
                block = self._block
                if block is None:
                    continue
                if block.count >= self._capacity:
                    self._submit_locked()
                r = self._clog(tag)
            if r == 0:
                self._roll()
                return
            if r == 1:
                return

    def close(self) -> None:
        with self._lock:
            if self.closed:
                return
            self.closed = True
            block = self._block
            self._block = None
            self._appender.set_block(None)
            if block.count > 0:
                self._pipeline.submit(block, self.channel_id, self._seq, self._codec_id)
                self._seq += 1
            else:
                self._pipeline.release_empty(block)


def open_channel_handle(
    kind: HandlerKind,
    name: str,
    channel_id: int,
    path: Path | None,
    header: bytes | None,
    pipeline: Pipeline | None,
    capacity: int,
) -> ChannelHandle:
    """Construct the handler for one channel (files already validated)."""
    if kind == HandlerKind.NULL:
        return NullChannel(name, channel_id)
    if kind == HandlerKind.DIRECT_ID:
        assert path is not None and header is not None
        return DirectChannel(name, channel_id, path, header)
    assert pipeline is not None and path is not None
    return BufferedChannel(name, channel_id, path, kind, pipeline, capacity)
