import random

import pytest

from hyql.agent import StepRecord
from hyql.context import (CalendarEntry, CognitiveAction, RawEvent,
                          SituationKey, TimeBucket)
from hyql.store import (DeviceRecord, OrderingError, PreferenceRecord,
                        RunStore, StoreParseError, UserRecord)


def skey(place="Office"):
    return SituationKey(TimeBucket("Morning", "Weekday", "Free"), place, "g0",
                        "Navigate", 0)


def step_record(step, reward=1.0):
    return StepRecord(step, skey(), "doc00", "Exploit", reward, skey("Home"))


def sample_event(user="u00", timestamp=9 * 3600):
    return RawEvent(user, timestamp, (48.85, 2.32), CognitiveAction("Navigate", "doc03"),
                    CalendarEntry("sync", timestamp - 60, timestamp + 60))


def populated_store():
    store = RunStore()
    store.add_user(UserRecord("u00", "u00", "g0"))
    store.add_user(UserRecord("u01", "u01", "g0"))
    store.add_device(DeviceRecord("dev-1", "u00", frozenset({"Display", "GPS"})))
    store.append_event_history(sample_event(), 0)
    store.append_event_history(RawEvent("u01", 7200, None, CognitiveAction("Call")), 1)
    for step in range(3):
        store.append_action_history(step_record(step, reward=float(step % 2)))
        store.upsert_preferences(PreferenceRecord("u00", skey(), "doc00",
                                                  float(step % 2), step))
    return store


class TestActionHistory:
    def test_append_then_read_round_trip(self):
        store = RunStore()
        record = step_record(0)
        store.append_action_history(record)
        assert store.action_history == [record]

    def test_equal_steps_accepted(self):
        store = RunStore()
        store.append_action_history(step_record(3))
        store.append_action_history(step_record(3))
        assert len(store.action_history) == 2

    def test_decreasing_step_rejected(self):
        store = RunStore()
        store.append_action_history(step_record(5))
        with pytest.raises(OrderingError):
            store.append_action_history(step_record(4))


class TestEventHistory:
    def test_round_trip(self):
        store = RunStore()
        event = sample_event()
        store.append_event_history(event, 0)
        assert store.event_history == [(0, event)]

    def test_empty_read(self):
        assert RunStore().event_history == []

    def test_thousand_appends_order_preserved(self):
        store = RunStore()
        for i in range(1000):
            store.append_event_history(RawEvent("u00", i, None,
                                                CognitiveAction("Call")), i)
        assert len(store.event_history) == 1000
        assert [s for s, _ in store.event_history] == list(range(1000))

    def test_decreasing_step_rejected(self):
        store = RunStore()
        store.append_event_history(sample_event(), 5)
        with pytest.raises(OrderingError):
            store.append_event_history(sample_event(), 4)


class TestPreferences:
    def test_mean_of_two(self):
        store = RunStore()
        store.upsert_preferences(PreferenceRecord("u00", skey(), "doc00", 1.0, 0))
        store.upsert_preferences(PreferenceRecord("u00", skey(), "doc00", 0.0, 1))
        assert store.preference_aggregate("u00", skey(), "doc00") == (2, 0.5)

    def test_single_record(self):
        store = RunStore()
        store.upsert_preferences(PreferenceRecord("u00", skey(), "doc01", 0.75, 0))
        assert store.preference_aggregate("u00", skey(), "doc01") == (1, 0.75)

    def test_aggregates_match_brute_force_group_by(self):
        rng = random.Random(30)
        store = RunStore()
        raw = []
        for step in range(100):
            record = PreferenceRecord(f"u{rng.randrange(3)}",
                                      skey(("Office", "Home")[rng.randrange(2)]),
                                      f"doc{rng.randrange(2)}",
                                      float(rng.randrange(2)), step)
            raw.append(record)
            store.upsert_preferences(record)
        groups = {}
        for r in raw:
            groups.setdefault((r.user_id, r.situation, r.action), []).append(r.reward)
        for key, rewards in groups.items():
            count, mean = store.preference_aggregate(*key)
            assert count == len(rewards)
            assert mean == pytest.approx(sum(rewards) / len(rewards))

    def test_missing_aggregate_is_none(self):
        assert RunStore().preference_aggregate("u00", skey(), "doc00") is None


class TestUsersDevices:
    def test_duplicate_user_rejected(self):
        store = RunStore()
        store.add_user(UserRecord("u00", "u00", "g0"))
        with pytest.raises(ValueError):
            store.add_user(UserRecord("u00", "other", "g0"))

    def test_device_needs_existing_user(self):
        store = RunStore()
        with pytest.raises(ValueError):
            store.add_device(DeviceRecord("dev-1", "ghost", frozenset()))

    def test_empty_login_rejected(self):
        with pytest.raises(ValueError):
            UserRecord("u00", "", "g0")

    def test_unknown_capability_rejected(self):
        with pytest.raises(ValueError):
            DeviceRecord("dev-1", "u00", frozenset({"Teleport"}))


class TestSnapshotLoad:
    def test_empty_round_trip(self, tmp_path):
        RunStore().snapshot(tmp_path / "run")
        loaded = RunStore.load(tmp_path / "run")
        assert loaded.users == [] and loaded.action_history == []

    def test_populated_round_trip_byte_identical(self, tmp_path):
        store = populated_store()
        first = tmp_path / "first"
        second = tmp_path / "second"
        store.snapshot(first)
        RunStore.load(first).snapshot(second)
        for name in ("users.tsv", "devices.tsv", "history_actions.tsv",
                     "history_events.tsv", "preferences.tsv"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_observational_equality(self, tmp_path):
        store = populated_store()
        store.snapshot(tmp_path / "run")
        loaded = RunStore.load(tmp_path / "run")
        assert loaded.users == store.users
        assert loaded.devices == store.devices
        assert loaded.action_history == store.action_history
        assert loaded.event_history == store.event_history
        assert loaded.preferences == store.preferences
        assert loaded.preference_aggregate("u00", skey(), "doc00") == \
            store.preference_aggregate("u00", skey(), "doc00")

    def test_truncated_file_is_parse_error_with_line(self, tmp_path):
        store = populated_store()
        store.snapshot(tmp_path / "run")
        path = tmp_path / "run" / "history_actions.tsv"
        lines = path.read_text().splitlines()
        lines[-1] = lines[-1][: len(lines[-1]) // 2]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(StoreParseError) as info:
            RunStore.load(tmp_path / "run")
        assert info.value.lineno == len(lines)

    def test_missing_header_rejected(self, tmp_path):
        store = populated_store()
        store.snapshot(tmp_path / "run")
        path = tmp_path / "run" / "users.tsv"
        body = path.read_text().splitlines()[1:]
        path.write_text("\n".join(body) + "\n")
        with pytest.raises(StoreParseError, match="schema header"):
            RunStore.load(tmp_path / "run")

    def test_missing_file_rejected(self, tmp_path):
        store = populated_store()
        store.snapshot(tmp_path / "run")
        (tmp_path / "run" / "devices.tsv").unlink()
        with pytest.raises(StoreParseError, match="missing store file"):
            RunStore.load(tmp_path / "run")

    def test_ordering_violation_in_file_detected(self, tmp_path):
        store = populated_store()
        store.snapshot(tmp_path / "run")
        path = tmp_path / "run" / "history_actions.tsv"
        lines = path.read_text().splitlines()
        lines.append(lines[1].replace(lines[1].split("\t")[0], "0", 1))
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(StoreParseError):
            RunStore.load(tmp_path / "run")
