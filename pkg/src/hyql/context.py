"""Context abstraction: raw sensor events to discrete situation keys.

A situation combines a time bucket, a place, the user's social group and
the user's current cognitive activity, at a chosen granularity level.
Time buckets come from fixed hour boundaries on a simulated local clock
(day 0 is a Monday). Places come from a static gazetteer of bounding
regions with a parent hierarchy (place -> city -> root), which replaces
any live reverse-geocoding service so that runs stay deterministic and
offline. Missing sensor fields map to an explicit "Unknown" sentinel so
every event yields a usable situation.

All functions here are pure: same inputs, same key, from any thread.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

SECONDS_PER_HOUR = 3_600
SECONDS_PER_DAY = 86_400

PARTS_OF_DAY = ("Morning", "Afternoon", "Evening", "Night")
DAY_CLASSES = ("Weekday", "Weekend")
CALENDAR_STATES = ("InMeeting", "Free")
COGNITIVE_KINDS = ("Navigate", "SendEmail", "Call", "OpenFolder")
PLACE_TYPES = ("Home", "Office", "ClientSite", "Transit", "Other")

UNKNOWN_PLACE = "Unknown"
UNKNOWN_COGNITIVE = "Unknown"

# Hour boundaries for the parts of the day: [6,12) Morning, [12,18)
# Afternoon, [18,23) Evening, everything else Night.
_MORNING, _AFTERNOON, _EVENING = 6, 12, 18
_NIGHT = 23

# Hour spans used when synthesizing timestamps for a wanted bucket.
HOUR_RANGES = {
    "Morning": (6, 12),
    "Afternoon": (12, 18),
    "Evening": (18, 23),
    "Night": (23, 30),  # 23:00 through 05:59 next morning, mod 24
}


class GazetteerError(Exception):
    """Raised for an empty, malformed or inconsistent gazetteer."""


@dataclass(frozen=True)
class TimeBucket:
    """Discretized time: part of day, weekday/weekend, calendar state."""

    part_of_day: str
    day_class: str
    calendar_state: str

    def __post_init__(self):
        if self.part_of_day not in PARTS_OF_DAY:
            raise ValueError(f"bad part_of_day: {self.part_of_day!r}")
        if self.day_class not in DAY_CLASSES:
            raise ValueError(f"bad day_class: {self.day_class!r}")
        if self.calendar_state not in CALENDAR_STATES:
            raise ValueError(f"bad calendar_state: {self.calendar_state!r}")

    def canonical(self) -> str:
        return f"{self.part_of_day}-{self.day_class}-{self.calendar_state}"

    @classmethod
    def from_canonical(cls, text: str) -> "TimeBucket":
        parts = text.split("-")
        if len(parts) != 3:
            raise ValueError(f"bad time bucket string: {text!r}")
        return cls(*parts)


@dataclass(frozen=True)
class CalendarEntry:
    label: str
    start: int
    end: int

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("calendar entry ends before it starts")


@dataclass(frozen=True)
class CognitiveAction:
    """A user action observed by the cognitive sensor.

    `kind` is the action class used in situation keys; `item` carries the
    navigated document for Navigate actions and is ignored otherwise.
    """

    kind: str
    item: Optional[str] = None

    def __post_init__(self):
        if self.kind not in COGNITIVE_KINDS:
            raise ValueError(f"bad cognitive kind: {self.kind!r}")


@dataclass(frozen=True)
class RawEvent:
    """One multi-sensor observation of a user.

    At least one of geo / cognitive / calendar_entry must be present.
    """

    user_id: str
    timestamp: int
    geo: Optional[tuple[float, float]] = None
    cognitive: Optional[CognitiveAction] = None
    calendar_entry: Optional[CalendarEntry] = None

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError("timestamp must be >= 0")
        if self.geo is not None:
            lat, lon = self.geo
            if not (-90.0 <= lat <= 90.0):
                raise ValueError(f"latitude out of range: {lat}")
            if not (-180.0 <= lon <= 180.0):
                raise ValueError(f"longitude out of range: {lon}")
        if self.geo is None and self.cognitive is None and self.calendar_entry is None:
            raise ValueError("event carries no sensor payload")


@dataclass(frozen=True)
class PlaceNode:
    """A gazetteer entry: named region with a parent and a centroid."""

    name: str
    place_type: str
    parent: Optional[str]  # parent place name, None for the root
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    centroid_lat: float
    centroid_lon: float

    def contains(self, lat: float, lon: float) -> bool:
        return (self.lat_min <= lat <= self.lat_max
                and self.lon_min <= lon <= self.lon_max)


@dataclass(frozen=True)
class SituationKey:
    """The discrete state: hashable, equality by value.

    `granularity` is the effective place level actually used (0 = most
    specific). Lifting a key whose place chain is shorter than the asked
    level clamps at the chain end, so the Unknown sentinel stays at
    level 0 at every granularity.
    """

    time: TimeBucket
    place: str
    social_group: str
    cognitive: str
    granularity: int

    def canonical(self) -> str:
        return "|".join((self.time.canonical(), self.place, self.social_group,
                         self.cognitive, str(self.granularity)))

    @classmethod
    def from_canonical(cls, text: str) -> "SituationKey":
        parts = text.split("|")
        if len(parts) != 5:
            raise ValueError(f"bad situation key string: {text!r}")
        return cls(TimeBucket.from_canonical(parts[0]), parts[1], parts[2],
                   parts[3], int(parts[4]))


@dataclass(frozen=True)
class Profile:
    """What aggregation needs to know about a user."""

    social_group: str
    prior_cognitive: Optional[str] = None


def abstract_time(timestamp: int, calendar: Iterable[CalendarEntry] = ()) -> TimeBucket:
    """Map a timestamp (plus calendar) to its bucket. Total function."""
    if timestamp < 0:
        raise ValueError("timestamp must be >= 0")
    hour = (timestamp % SECONDS_PER_DAY) // SECONDS_PER_HOUR
    if _MORNING <= hour < _AFTERNOON:
        part = "Morning"
    elif _AFTERNOON <= hour < _EVENING:
        part = "Afternoon"
    elif _EVENING <= hour < _NIGHT:
        part = "Evening"
    else:
        part = "Night"
    day_of_week = (timestamp // SECONDS_PER_DAY) % 7  # 0 = Monday
    day_class = "Weekend" if day_of_week >= 5 else "Weekday"
    state = "Free"
    for entry in calendar:
        if entry.start <= timestamp < entry.end:
            state = "InMeeting"
            break
    return TimeBucket(part, day_class, state)


def parse_gazetteer(lines: Iterable[str], source: str = "<gazetteer>") -> list[PlaceNode]:
    """Parse `name,type,parent,lat_min,lat_max,lon_min,lon_max,clat,clon` lines."""
    nodes = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 9:
            raise GazetteerError(f"{source}:{lineno}: expected 9 fields, got {len(fields)}")
        name, ptype, parent = fields[0], fields[1], fields[2] or None
        if ptype not in PLACE_TYPES:
            raise GazetteerError(f"{source}:{lineno}: unknown place type {ptype!r}")
        try:
            numbers = [float(f) for f in fields[3:]]
        except ValueError as exc:
            raise GazetteerError(f"{source}:{lineno}: {exc}") from None
        nodes.append(PlaceNode(name, ptype, parent, *numbers))
    return nodes


class ContextModel:
    """Holds the place hierarchy and provides the abstraction pipeline."""

    def __init__(self, nodes: Sequence[PlaceNode]):
        if not nodes:
            raise GazetteerError("gazetteer is empty")
        self.nodes: dict[str, PlaceNode] = {}
        for node in nodes:
            if node.name in self.nodes:
                raise GazetteerError(f"duplicate place name {node.name!r}")
            if node.name == UNKNOWN_PLACE:
                raise GazetteerError(f"{UNKNOWN_PLACE!r} is a reserved place name")
            self.nodes[node.name] = node
        roots = [n.name for n in nodes if n.parent is None]
        if len(roots) != 1:
            raise GazetteerError(f"expected exactly one root place, found {roots}")
        self.root = roots[0]
        self._chains: dict[str, tuple[str, ...]] = {UNKNOWN_PLACE: (UNKNOWN_PLACE,)}
        for node in nodes:
            chain = [node.name]
            seen = {node.name}
            cursor = node
            while cursor.parent is not None:
                if cursor.parent not in self.nodes:
                    raise GazetteerError(f"place {cursor.name!r} has unknown parent {cursor.parent!r}")
                if cursor.parent in seen:
                    raise GazetteerError(f"cycle in place hierarchy at {cursor.parent!r}")
                seen.add(cursor.parent)
                chain.append(cursor.parent)
                cursor = self.nodes[cursor.parent]
            self._chains[node.name] = tuple(chain)
        self.depth = max(len(c) - 1 for c in self._chains.values())
        # chain length minus one == how deep the node sits below the root
        self._node_depth = {name: len(chain) - 1
                            for name, chain in self._chains.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "ContextModel":
        text = Path(path).read_text(encoding="utf-8")
        return cls(parse_gazetteer(text.splitlines(), source=str(path)))

    @classmethod
    def default(cls) -> "ContextModel":
        path = Path(__file__).parent / "data" / "gazetteer.csv"
        return cls.from_file(path)

    def place_chain(self, name: str) -> tuple[str, ...]:
        """Names from the node up to the root; ("Unknown",) for the sentinel."""
        try:
            return self._chains[name]
        except KeyError:
            raise GazetteerError(f"unknown place {name!r}") from None

    def abstract_location(self, lat: float, lon: float) -> PlaceNode:
        """Reverse geocode against the gazetteer.

        Deepest containing region wins; same-depth ties go to the
        lexicographically smaller name; with no containing region at all,
        fall back to the nearest centroid (ties again by name).
        """
        if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
            raise ValueError(f"invalid coordinates ({lat}, {lon})")
        containing = [n for n in self.nodes.values() if n.contains(lat, lon)]
        if containing:
            return min(containing, key=lambda n: (-self._node_depth[n.name], n.name))

        def dist2(node: PlaceNode) -> float:
            return (node.centroid_lat - lat) ** 2 + (node.centroid_lon - lon) ** 2

        return min(self.nodes.values(), key=lambda n: (dist2(n), n.name))

    def aggregate(self, event: RawEvent, profile: Profile, level: int) -> SituationKey:
        """Compose time, lifted place, group and cognitive class into one key."""
        if level < 0 or level > self.depth:
            raise ValueError(f"granularity level {level} outside 0..{self.depth}")
        calendar = (event.calendar_entry,) if event.calendar_entry else ()
        bucket = abstract_time(event.timestamp, calendar)
        if event.geo is not None:
            leaf = self.abstract_location(*event.geo).name
        else:
            leaf = UNKNOWN_PLACE
        chain = self.place_chain(leaf)
        effective = min(level, len(chain) - 1)
        if event.cognitive is not None:
            cognitive = event.cognitive.kind
        else:
            cognitive = getattr(profile, "prior_cognitive", None) or UNKNOWN_COGNITIVE
        return SituationKey(bucket, chain[effective], profile.social_group,
                            cognitive, effective)

    def enumerate_granularities(self, event: RawEvent, profile: Profile) -> list[SituationKey]:
        """All keys for an event from most specific to most general, deduped."""
        keys: list[SituationKey] = []
        for level in range(self.depth + 1):
            key = self.aggregate(event, profile, level)
            if not keys or key != keys[-1]:
                keys.append(key)
        return keys

    def generalize(self, key: SituationKey, level: int) -> SituationKey:
        """Lift a key's place to `level`, clamping at its chain end."""
        if level < key.granularity:
            raise ValueError(f"cannot specialize key from level {key.granularity} to {level}")
        if level > self.depth:
            raise ValueError(f"granularity level {level} outside 0..{self.depth}")
        chain = self.place_chain(key.place)
        hop = min(level - key.granularity, len(chain) - 1)
        if hop == 0 and level == key.granularity:
            return key
        return SituationKey(key.time, chain[hop], key.social_group,
                            key.cognitive, key.granularity + hop)
