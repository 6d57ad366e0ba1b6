"""The shared run database: users, devices, histories, preferences.

Everything is append-only in memory and snapshots to five tab-separated
UTF-8 files in a run directory (users.tsv, devices.tsv,
history_actions.tsv, history_events.tsv, preferences.tsv). Each file
starts with a `#` header carrying the schema version and column names.
Snapshots are canonical: snapshot -> load -> snapshot is byte-identical.
Loading is atomic, a malformed file raises with its line number and no
partial store is exposed.

Preference aggregates (count and mean reward per user/situation/action)
are derived state, recomputed from the raw stream on load.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .agent import StepRecord
from .context import CalendarEntry, CognitiveAction, RawEvent, SituationKey
from .serde import fmt_float

SCHEMA_VERSION = 1

CAPABILITIES = ("Display", "GPS", "Calendar", "Call")

_FILES = {
    "users": ("users.tsv", "user_id\tlogin\tsocial_group"),
    "devices": ("devices.tsv", "device_id\tuser_id\tcapabilities"),
    "actions": ("history_actions.tsv",
                "step\tsituation_key\taction\tbranch\treward\tnext_situation_key"),
    "events": ("history_events.tsv",
               "step\tuser_id\ttimestamp\tlat\tlon\tcognitive_kind\tcognitive_item"
               "\tcalendar_label\tcalendar_start\tcalendar_end"),
    "preferences": ("preferences.tsv", "user_id\tsituation_key\taction\treward\tstep"),
}


class OrderingError(Exception):
    """An append whose step went backwards."""


class StoreParseError(Exception):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    login: str
    social_group: str

    def __post_init__(self):
        if not self.login:
            raise ValueError("login must be non-empty")


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    user_id: str
    capabilities: frozenset[str]

    def __post_init__(self):
        bad = set(self.capabilities) - set(CAPABILITIES)
        if bad:
            raise ValueError(f"unknown capabilities: {sorted(bad)}")


@dataclass(frozen=True)
class PreferenceRecord:
    user_id: str
    situation: SituationKey
    action: str
    reward: float
    step: int

    def __post_init__(self):
        if not 0.0 <= self.reward <= 1.0:
            raise ValueError("reward must be in [0, 1]")


class RunStore:
    """Single-writer store for one simulation run."""

    def __init__(self):
        self.users: list[UserRecord] = []
        self.devices: list[DeviceRecord] = []
        self.action_history: list[StepRecord] = []
        self.event_history: list[tuple[int, RawEvent]] = []
        self.preferences: list[PreferenceRecord] = []
        # (user, situation, action) -> [count, reward_sum]
        self._aggregates: dict[tuple[str, SituationKey, str], list[float]] = {}
        self._user_ids: set[str] = set()

    # -- users / devices ----------------------------------------------------

    def add_user(self, record: UserRecord) -> None:
        if record.user_id in self._user_ids:
            raise ValueError(f"duplicate user id {record.user_id!r}")
        self._user_ids.add(record.user_id)
        self.users.append(record)

    def add_device(self, record: DeviceRecord) -> None:
        if record.user_id not in self._user_ids:
            raise ValueError(f"device for unknown user {record.user_id!r}")
        self.devices.append(record)

    # -- histories ------------------------------------------------------------

    def append_action_history(self, record: StepRecord) -> None:
        if self.action_history and record.step < self.action_history[-1].step:
            raise OrderingError(
                f"action step {record.step} < last {self.action_history[-1].step}")
        self.action_history.append(record)

    def append_event_history(self, event: RawEvent, step: int) -> None:
        if self.event_history and step < self.event_history[-1][0]:
            raise OrderingError(
                f"event step {step} < last {self.event_history[-1][0]}")
        self.event_history.append((step, event))

    # -- preferences ----------------------------------------------------------

    def upsert_preferences(self, record: PreferenceRecord) -> None:
        self.preferences.append(record)
        key = (record.user_id, record.situation, record.action)
        agg = self._aggregates.setdefault(key, [0.0, 0.0])
        agg[0] += 1.0
        agg[1] += record.reward

    def preference_aggregate(self, user_id: str, situation: SituationKey,
                             action: str) -> Optional[tuple[int, float]]:
        agg = self._aggregates.get((user_id, situation, action))
        if agg is None:
            return None
        return int(agg[0]), agg[1] / agg[0]

    # -- snapshot / load --------------------------------------------------------

    def snapshot(self, dirpath: str | Path) -> None:
        directory = Path(dirpath)
        directory.mkdir(parents=True, exist_ok=True)
        self._write(directory, "users",
                    (f"{u.user_id}\t{u.login}\t{u.social_group}" for u in self.users))
        self._write(directory, "devices",
                    (f"{d.device_id}\t{d.user_id}\t{','.join(sorted(d.capabilities))}"
                     for d in self.devices))
        self._write(directory, "actions",
                    (r.to_line() for r in self.action_history))
        self._write(directory, "events",
                    (_event_line(step, e) for step, e in self.event_history))
        self._write(directory, "preferences",
                    (f"{p.user_id}\t{p.situation.canonical()}\t{p.action}"
                     f"\t{fmt_float(p.reward)}\t{p.step}" for p in self.preferences))

    @staticmethod
    def _write(directory: Path, part: str, lines) -> None:
        filename, columns = _FILES[part]
        body = "\n".join(lines)
        header = f"# hyql-store v{SCHEMA_VERSION} {part}: {columns}"
        (directory / filename).write_text(
            header + ("\n" + body if body else "") + "\n", encoding="utf-8")

    @classmethod
    def load(cls, dirpath: str | Path) -> "RunStore":
        directory = Path(dirpath)
        store = cls()
        for record in _read_part(directory, "users", 3):
            path, lineno, fields = record
            _guard(path, lineno, lambda: store.add_user(UserRecord(*fields)))
        for record in _read_part(directory, "devices", 3):
            path, lineno, fields = record
            caps = frozenset(fields[2].split(",")) if fields[2] else frozenset()
            _guard(path, lineno, lambda: store.add_device(
                DeviceRecord(fields[0], fields[1], caps)))
        for record in _read_part(directory, "actions", 6):
            path, lineno, fields = record
            _guard(path, lineno, lambda: store.append_action_history(
                StepRecord.from_line("\t".join(fields))))
        for record in _read_part(directory, "events", 10):
            path, lineno, fields = record
            _guard(path, lineno, lambda: store.append_event_history(
                _event_from_fields(fields[1:]), int(fields[0])))
        for record in _read_part(directory, "preferences", 5):
            path, lineno, fields = record
            _guard(path, lineno, lambda: store.upsert_preferences(PreferenceRecord(
                fields[0], SituationKey.from_canonical(fields[1]), fields[2],
                float(fields[3]), int(fields[4]))))
        return store


def _guard(path, lineno, thunk) -> None:
    try:
        thunk()
    except StoreParseError:
        raise
    except Exception as exc:
        raise StoreParseError(path, lineno, str(exc)) from exc


def _read_part(directory: Path, part: str, n_fields: int):
    filename, _ = _FILES[part]
    path = directory / filename
    if not path.exists():
        raise StoreParseError(path, 0, "missing store file")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(f"# hyql-store v{SCHEMA_VERSION} {part}:"):
        raise StoreParseError(path, 1, "missing or wrong schema header")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != n_fields:
            raise StoreParseError(path, lineno,
                                  f"expected {n_fields} fields, got {len(fields)}")
        yield path, lineno, fields


def _event_line(step: int, event: RawEvent) -> str:
    lat = fmt_float(event.geo[0]) if event.geo else ""
    lon = fmt_float(event.geo[1]) if event.geo else ""
    kind = event.cognitive.kind if event.cognitive else ""
    item = (event.cognitive.item or "") if event.cognitive else ""
    label = event.calendar_entry.label if event.calendar_entry else ""
    start = str(event.calendar_entry.start) if event.calendar_entry else ""
    end = str(event.calendar_entry.end) if event.calendar_entry else ""
    return "\t".join((str(step), event.user_id, str(event.timestamp),
                      lat, lon, kind, item, label, start, end))


def _event_from_fields(fields: list[str]) -> RawEvent:
    user_id, timestamp, lat, lon, kind, item, label, start, end = fields
    geo = (float(lat), float(lon)) if lat else None
    cognitive = CognitiveAction(kind, item or None) if kind else None
    calendar = CalendarEntry(label, int(start), int(end)) if label else None
    return RawEvent(user_id, int(timestamp), geo, cognitive, calendar)
