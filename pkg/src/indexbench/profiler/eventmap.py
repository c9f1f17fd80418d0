"""Mapping from abstract TMAM inputs to host-specific counter events."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .perf import PERF_TYPE_HARDWARE, PERF_TYPE_RAW, PERF_TYPE_SOFTWARE, raw_config

# Metric levels, top to bottom: 1 overall (cycles, instructions), 2 cycle
# breakdown, 3 back-end split, 4 memory split.  Each level needs its own
# inputs plus everything above it.
LEVEL_INPUTS: Dict[int, Tuple[str, ...]] = {
    1: ("cycles", "instructions"),
    2: ("uops_issued_any", "uops_retired_retire_slots", "int_misc_recovery_cycles",
        "idq_uops_not_delivered_core"),
    3: ("cycle_activity_stalls_total", "cycle_activity_stalls_mem_any",
        "exe_activity_1_ports_util", "exe_activity_2_ports_util",
        "exe_activity_bound_on_stores"),
    4: ("cycle_activity_stalls_l1d_miss", "cycle_activity_stalls_l2_miss",
        "cycle_activity_stalls_l3_miss"),
}
ALL_INPUTS: Tuple[str, ...] = tuple(name for lvl in sorted(LEVEL_INPUTS) for name in LEVEL_INPUTS[lvl])
MAX_LEVEL = max(LEVEL_INPUTS)

_HW = {"cpu-cycles": 0, "instructions": 1, "cache-references": 2, "cache-misses": 3,
       "branch-instructions": 4, "branch-misses": 5}
_SW = {"cpu-clock": 0, "task-clock": 1, "page-faults": 2, "context-switches": 3}


class EventMapError(ValueError):
    pass


@dataclass(frozen=True)
class EventDescriptor:
    text: str
    type: int
    config: int


def parse_descriptor(text: str) -> Optional[EventDescriptor]:
    """Parse one right-hand side; ``unavailable`` yields None."""
    text = text.strip()
    if text == "unavailable":
        return None
    kind, _, body = text.partition(":")
    if kind == "hw":
        if body not in _HW:
            raise EventMapError(f"unknown hardware event {body!r}")
        return EventDescriptor(text, PERF_TYPE_HARDWARE, _HW[body])
    if kind == "sw":
        if body not in _SW:
            raise EventMapError(f"unknown software event {body!r}")
        return EventDescriptor(text, PERF_TYPE_SOFTWARE, _SW[body])
    if kind == "raw":
        fields: Dict[str, Union[int, bool]] = {}
        for part in body.split(","):
            part = part.strip()
            if not part:
                continue
            key, eq, val = part.partition("=")
            if not eq:
                if key not in ("inv", "edge", "any"):
                    raise EventMapError(f"unknown raw flag {key!r} in {text!r}")
                fields[key] = True
                continue
            if key not in ("event", "umask", "cmask"):
                raise EventMapError(f"unknown raw field {key!r} in {text!r}")
            try:
                fields[key] = int(val, 0)
            except ValueError:
                raise EventMapError(f"bad number {val!r} in {text!r}") from None
        if "event" not in fields:
            raise EventMapError(f"raw descriptor without event: {text!r}")
        try:
            config = raw_config(fields["event"], fields.get("umask", 0), fields.get("cmask", 0),
                                inv=bool(fields.get("inv")), edge=bool(fields.get("edge")),
                                any_thread=bool(fields.get("any")))
        except ValueError as exc:
            raise EventMapError(f"{text!r}: {exc}") from None
        return EventDescriptor(text, PERF_TYPE_RAW, config)
    raise EventMapError(f"descriptor {text!r} must start with hw:, sw:, raw: or be 'unavailable'")


@dataclass
class EventMap:
    section: str
    cpu_id: str
    issue_width: int
    events: Dict[str, Optional[EventDescriptor]] = field(default_factory=dict)

    def unavailable(self) -> List[str]:
        return [name for name in ALL_INPUTS if self.events.get(name) is None]

    def level_supported(self, level: int) -> bool:
        return all(self.events.get(name) is not None for name in LEVEL_INPUTS[level])

    def events_for_levels(self, max_level: int) -> List[Tuple[str, int, int]]:
        """(name, perf type, config) for every mapped input of levels 1..max_level."""
        if not 1 <= max_level <= MAX_LEVEL:
            raise EventMapError(f"level must be in 1..{MAX_LEVEL}")
        out = []
        for lvl in range(1, max_level + 1):
            for name in LEVEL_INPUTS[lvl]:
                desc = self.events.get(name)
                if desc is not None:
                    out.append((name, desc.type, desc.config))
        return out

    def to_dict(self) -> dict:
        return {
            "section": self.section,
            "cpu_id": self.cpu_id,
            "issue_width": self.issue_width,
            "events": {k: (v.text if v is not None else "unavailable") for k, v in self.events.items()},
        }


def host_cpu_id(cpuinfo: str = "/proc/cpuinfo") -> str:
    """``vendor-family-model`` of the first processor, e.g. ``GenuineIntel-6-85``."""
    try:
        text = Path(cpuinfo).read_text()
    except OSError:
        return "unknown"
    info = {}
    for line in text.splitlines():
        if not line.strip():
            if info:
                break
            continue
        key, _, val = line.partition(":")
        info[key.strip()] = val.strip()
    vendor = info.get("vendor_id", "unknown")
    return f"{vendor}-{info.get('cpu family', '?')}-{info.get('model', '?')}"


def _read_config(path: Optional[Union[str, Path]]) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(delimiters=("=",), interpolation=None,
                                       inline_comment_prefixes=None)
    parser.optionxform = str
    if path is None:
        parser.read_string(resources.files(__package__).joinpath("events.conf").read_text())
    else:
        with open(path) as fh:
            parser.read_file(fh)
    return parser


def load_event_map(path: Optional[Union[str, Path]] = None, cpu_id: Optional[str] = None) -> EventMap:
    """Resolve the section matching ``cpu_id`` (the host by default)."""
    parser = _read_config(path)
    cpu_id = cpu_id or host_cpu_id()
    chosen = fallback = None
    for name in parser.sections():
        rules = [r.strip() for r in parser[name].get("match", "").split(",") if r.strip()]
        if not rules:
            raise EventMapError(f"section [{name}] has no match rule")
        if cpu_id in rules and chosen is None:
            chosen = name
        elif "*" in rules and fallback is None:
            fallback = name
    chosen = chosen or fallback
    if chosen is None:
        raise EventMapError(f"no event map section matches {cpu_id}")
    sec = parser[chosen]
    try:
        width = int(sec.get("issue_width", ""))
    except ValueError:
        raise EventMapError(f"[{chosen}] issue_width must be an integer") from None
    if width < 1:
        raise EventMapError(f"[{chosen}] issue_width must be positive")
    events: Dict[str, Optional[EventDescriptor]] = {}
    for name in ALL_INPUTS:
        if name not in sec:
            raise EventMapError(f"[{chosen}] neither maps nor declares unavailable: {name}")
        events[name] = parse_descriptor(sec[name])
    extra = set(sec) - set(ALL_INPUTS) - {"match", "issue_width"}
    if extra:
        raise EventMapError(f"[{chosen}] unknown inputs: {', '.join(sorted(extra))}")
    return EventMap(chosen, cpu_id, width, events)

