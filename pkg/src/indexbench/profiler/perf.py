"""Thin ctypes wrapper over Linux ``perf_event_open``.

Each event gets its own file descriptor (no group leader), so that one
unsupported event never takes its siblings down with it.  Counts are read
with the enabled/running times and scaled when the kernel multiplexed the
event onto a shared hardware counter.
"""

from __future__ import annotations

import ctypes
import errno
import os
import platform
import struct
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

PERF_TYPE_HARDWARE = 0
PERF_TYPE_SOFTWARE = 1
PERF_TYPE_RAW = 4

PERF_COUNT_HW_CPU_CYCLES = 0
PERF_COUNT_HW_INSTRUCTIONS = 1
PERF_COUNT_SW_CPU_CLOCK = 0
PERF_COUNT_SW_TASK_CLOCK = 1

PERF_FORMAT_TOTAL_TIME_ENABLED = 1 << 0
PERF_FORMAT_TOTAL_TIME_RUNNING = 1 << 1

_FLAG_DISABLED = 1 << 0
_FLAG_EXCLUDE_KERNEL = 1 << 5
_FLAG_EXCLUDE_HV = 1 << 6

_IOC_ENABLE = 0x2400
_IOC_DISABLE = 0x2401
_IOC_RESET = 0x2403

_SYSCALL_NR = {"x86_64": 298, "aarch64": 241}

ATTR_SIZE = 112


class PerfAttr(ctypes.Structure):
    # struct perf_event_attr, PERF_ATTR_SIZE_VER5 layout
    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),
        ("bp_type", ctypes.c_uint32),
        ("config1", ctypes.c_uint64),
        ("config2", ctypes.c_uint64),
        ("branch_sample_type", ctypes.c_uint64),
        ("sample_regs_user", ctypes.c_uint64),
        ("sample_stack_user", ctypes.c_uint32),
        ("clockid", ctypes.c_int32),
        ("sample_regs_intr", ctypes.c_uint64),
        ("aux_watermark", ctypes.c_uint32),
        ("sample_max_stack", ctypes.c_uint16),
        ("reserved", ctypes.c_uint16),
    ]


assert ctypes.sizeof(PerfAttr) == ATTR_SIZE


class PerfError(OSError):
    pass


class PermissionDenied(PerfError):
    """Counter access is restricted (perf_event_paranoid, seccomp, ...)."""


class UnsupportedEvent(PerfError):
    """The host PMU does not know this event."""


def raw_config(event: int, umask: int = 0, cmask: int = 0, inv: bool = False,
               edge: bool = False, any_thread: bool = False) -> int:
    """Encode an Intel core PMU event select the way the kernel's raw type
    expects it."""
    if not (0 <= event <= 0xFF and 0 <= umask <= 0xFF and 0 <= cmask <= 0xFF):
        raise ValueError("event, umask and cmask must each fit in one byte")
    return (event | (umask << 8) | (int(edge) << 18) | (int(any_thread) << 21)
            | (int(inv) << 23) | (cmask << 24))


_libc = None


def _syscall():
    global _libc
    if _libc is None:
        _libc = ctypes.CDLL(None, use_errno=True)
        _libc.syscall.restype = ctypes.c_long
        _libc.ioctl.restype = ctypes.c_int
    return _libc


def perf_event_open(type_: int, config: int, pid: int = 0, cpu: int = -1,
                    exclude_kernel: bool = True) -> int:
    """Open one disabled counting event for ``pid`` and return its fd."""
    nr = _SYSCALL_NR.get(platform.machine())
    if nr is None or not hasattr(os, "sched_getaffinity"):
        raise UnsupportedEvent(errno.ENOSYS, f"perf_event_open unsupported on {platform.machine()}")
    attr = PerfAttr()
    attr.type = type_
    attr.size = ATTR_SIZE
    attr.config = config
    attr.read_format = PERF_FORMAT_TOTAL_TIME_ENABLED | PERF_FORMAT_TOTAL_TIME_RUNNING
    attr.flags = _FLAG_DISABLED | _FLAG_EXCLUDE_HV | (_FLAG_EXCLUDE_KERNEL if exclude_kernel else 0)
    libc = _syscall()
    fd = libc.syscall(nr, ctypes.byref(attr), pid, cpu, -1, 0)
    if fd < 0:
        err = ctypes.get_errno()
        msg = f"perf_event_open(type={type_}, config={config:#x}): {os.strerror(err)}"
        if err in (errno.EACCES, errno.EPERM):
            raise PermissionDenied(err, msg)
        if err in (errno.ENOENT, errno.EOPNOTSUPP, errno.EINVAL, errno.ENODEV, errno.ENOSYS):
            raise UnsupportedEvent(err, msg)
        raise PerfError(err, msg)
    return fd


def _ioctl(fd: int, request: int) -> None:
    if _syscall().ioctl(fd, request, 0) < 0:
        err = ctypes.get_errno()
        raise PerfError(err, os.strerror(err))


@dataclass(frozen=True)
class Reading:
    raw: int
    time_enabled: int
    time_running: int

    @property
    def multiplex_ratio(self) -> float:
        """Fraction of the enabled time the event actually sat on a counter."""
        if self.time_enabled == 0:
            return 1.0
        return self.time_running / self.time_enabled

    @property
    def scaled(self) -> float:
        if self.time_running == 0:
            return 0.0 if self.time_enabled == 0 else float("nan")
        if self.time_running == self.time_enabled:
            return float(self.raw)
        return self.raw * self.time_enabled / self.time_running


class Counter:
    """One open event.  Use as a context manager or call ``close``."""

    def __init__(self, name: str, type_: int, config: int) -> None:
        self.name = name
        self.type = type_
        self.config = config
        self.fd: Optional[int] = None
        self.fd = perf_event_open(type_, config)

    def enable(self) -> None:
        _ioctl(self.fd, _IOC_ENABLE)

    def disable(self) -> None:
        _ioctl(self.fd, _IOC_DISABLE)

    def reset(self) -> None:
        _ioctl(self.fd, _IOC_RESET)

    def read(self) -> Reading:
        data = os.read(self.fd, 24)
        return Reading(*struct.unpack("QQQ", data))

    def close(self) -> None:
        if self.fd is not None:
            os.close(self.fd)
            self.fd = None

    def __enter__(self) -> "Counter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self) -> None:
        self.close()


class CounterSet:
    """A set of independently opened counters started and stopped together.

    Events that fail to open with ``UnsupportedEvent`` are recorded in
    ``failed`` rather than raised; ``PermissionDenied`` always propagates.
    """

    def __init__(self, events: List[Tuple[str, int, int]]) -> None:
        self.counters: List[Counter] = []
        self.failed: Dict[str, str] = {}
        try:
            for name, type_, config in events:
                try:
                    self.counters.append(Counter(name, type_, config))
                except UnsupportedEvent as exc:
                    self.failed[name] = str(exc)
        except BaseException:
            self.close()
            raise

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.counters]

    def start(self) -> None:
        for c in self.counters:
            c.reset()
        for c in self.counters:
            c.enable()

    def stop(self) -> None:
        for c in reversed(self.counters):
            c.disable()

    def read(self) -> Dict[str, Reading]:
        return {c.name: c.read() for c in self.counters}

    def close(self) -> None:
        for c in self.counters:
            c.close()

    def __enter__(self) -> "CounterSet":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
