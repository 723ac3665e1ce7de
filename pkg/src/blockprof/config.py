"""Profiler configuration and handler selection."""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError

#: Environment variable that overrides ``ProfilerConfig.output_dir``.
OUTPUT_DIR_ENV = "BLOCKPROF_OUT"


class HandlerKind(enum.IntEnum):
    """The five per-entry logging strategies.

    The numeric values are stable: they appear as the handler byte in
    trace file headers.
    """

    NULL = 0
    DIRECT_ID = 1
    BUFFERED_ID = 2
    BUFFERED_ZSTD = 3
    BUFFERED_REALTIME = 4

    @property
    def is_buffered(self) -> bool:
        return self in (
            HandlerKind.BUFFERED_ID,
            HandlerKind.BUFFERED_ZSTD,
            HandlerKind.BUFFERED_REALTIME,
        )

    @property
    def produces_file(self) -> bool:
        return self is not HandlerKind.NULL

    @classmethod
    def from_name(cls, name: str) -> "HandlerKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            valid = ", ".join(k.name.lower() for k in cls)
            raise ConfigurationError(
                f"unknown handler {name!r} (expected one of: {valid})"
            ) from None


@dataclass
class ProfilerConfig:
    """Static configuration shared by all channels of one profiler.

    Defaults follow the reference protocol: 32 buffer blocks of one
    million entries each, four compression workers.
    """

    handler: HandlerKind = HandlerKind.BUFFERED_ZSTD
    num_blocks: int = 32
    block_capacity: int = 1_000_000
    num_compression_workers: int = 4
    output_dir: str | Path = "blockprof-out"
    channel_names: tuple[str, ...] = field(default_factory=tuple)

    def validate(self) -> None:
        if not isinstance(self.handler, HandlerKind):
            raise ConfigurationError(f"handler must be a HandlerKind, got {self.handler!r}")
        if self.block_capacity < 1:
            raise ConfigurationError("block_capacity must be >= 1")
        if self.num_compression_workers < 1:
            raise ConfigurationError("num_compression_workers must be >= 1")
        # one block in flight per worker, plus one filling and one writing
        if self.num_blocks < self.num_compression_workers + 2:
            raise ConfigurationError(
                f"num_blocks ({self.num_blocks}) must be >= "
                f"num_compression_workers + 2 ({self.num_compression_workers + 2})"
            )

    def resolved_output_dir(self) -> Path:
        """Output directory with the ``BLOCKPROF_OUT`` override applied."""
        env = os.environ.get(OUTPUT_DIR_ENV)
        return Path(env) if env else Path(self.output_dir)
