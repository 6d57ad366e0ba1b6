import random

import pytest

from hyql.context import (CalendarEntry, CognitiveAction, ContextModel,
                          GazetteerError, PlaceNode, Profile, RawEvent,
                          SituationKey, TimeBucket, abstract_time,
                          parse_gazetteer, SECONDS_PER_DAY, SECONDS_PER_HOUR,
                          UNKNOWN_PLACE)

MONDAY = 0
TUESDAY = 1
SATURDAY = 5


def ts(day_of_week: int, hour: int, minute: int = 0) -> int:
    return day_of_week * SECONDS_PER_DAY + hour * SECONDS_PER_HOUR + minute * 60


class TestAbstractTime:
    def test_tuesday_morning_free(self):
        assert abstract_time(ts(TUESDAY, 9)) == TimeBucket("Morning", "Weekday", "Free")

    def test_saturday_afternoon_in_meeting(self):
        entry = CalendarEntry("standup", ts(SATURDAY, 12), ts(SATURDAY, 14))
        assert abstract_time(ts(SATURDAY, 13), [entry]) == TimeBucket(
            "Afternoon", "Weekend", "InMeeting")

    def test_monday_night(self):
        assert abstract_time(ts(MONDAY, 3, 30)) == TimeBucket("Night", "Weekday", "Free")

    def test_bucket_boundaries(self):
        assert abstract_time(ts(MONDAY, 6)).part_of_day == "Morning"
        assert abstract_time(ts(MONDAY, 12)).part_of_day == "Afternoon"
        assert abstract_time(ts(MONDAY, 18)).part_of_day == "Evening"
        assert abstract_time(ts(MONDAY, 23)).part_of_day == "Night"
        assert abstract_time(ts(MONDAY, 5, 59)).part_of_day == "Night"

    def test_meeting_end_is_exclusive(self):
        entry = CalendarEntry("m", 100, 200)
        assert abstract_time(200, [entry]).calendar_state == "Free"
        assert abstract_time(199, [entry]).calendar_state == "InMeeting"

    def test_total_and_pure_over_wide_range(self):
        rng = random.Random(0)
        for _ in range(2000):
            t = rng.randrange(0, 10**10)
            first = abstract_time(t)
            assert abstract_time(t) == first
            assert first.part_of_day in ("Morning", "Afternoon", "Evening", "Night")

    def test_negative_timestamp_rejected(self):
        with pytest.raises(ValueError):
            abstract_time(-1)


class TestAbstractLocation:
    def test_containment(self, context):
        assert context.abstract_location(48.85, 2.32).name == "Office"
        assert context.abstract_location(48.87, 2.35).name == "Home"

    def test_nearest_centroid_fallback(self):
        # no global root box, so points can fall outside every region
        nodes = parse_gazetteer([
            "Root,Other,,10,11,10,11,10.5,10.5",
            "Home,Home,Root,10.0,10.2,10.0,10.2,10.1,10.1",
            "Office,Office,Root,10.8,11.0,10.8,11.0,10.9,10.9",
        ])
        ctx = ContextModel(nodes)
        queries = [(12.0, 12.0), (9.9, 9.9), (10.3, 10.5), (20.0, 3.0)]
        for lat, lon in queries:
            expected = min(ctx.nodes.values(),
                           key=lambda n: ((n.centroid_lat - lat) ** 2
                                          + (n.centroid_lon - lon) ** 2, n.name))
            got = ctx.abstract_location(lat, lon)
            assert got.name == expected.name

    def test_boundary_tie_lexicographic(self):
        nodes = parse_gazetteer([
            "Root,Other,,0,10,0,10,5,5",
            "B,Office,Root,0,5,0,5,2,2",
            "A,Home,Root,5,10,0,5,7,2",
        ])
        ctx = ContextModel(nodes)
        # (5, 3) sits on the shared lat boundary of A and B
        assert ctx.abstract_location(5.0, 3.0).name == "A"

    def test_invalid_coordinates(self, context):
        with pytest.raises(ValueError):
            context.abstract_location(91.0, 0.0)

    def test_deeper_region_beats_city(self, context):
        # Office is inside the Paris box; the leaf must win
        node = context.abstract_location(48.85, 2.33)
        assert node.name == "Office"


class TestGazetteer:
    def test_empty_is_config_error(self):
        with pytest.raises(GazetteerError):
            ContextModel([])

    def test_bad_field_count(self):
        with pytest.raises(GazetteerError, match="expected 9 fields"):
            parse_gazetteer(["A,Home,,1,2,3"])

    def test_comments_and_blanks_skipped(self):
        nodes = parse_gazetteer([
            "# comment",
            "",
            "Root,Other,,0,1,0,1,0.5,0.5",
        ])
        assert len(nodes) == 1

    def test_two_roots_rejected(self):
        nodes = parse_gazetteer([
            "R1,Other,,0,1,0,1,0,0",
            "R2,Other,,2,3,2,3,2,2",
        ])
        with pytest.raises(GazetteerError, match="one root"):
            ContextModel(nodes)

    def test_unknown_parent_rejected(self):
        nodes = parse_gazetteer([
            "Root,Other,,0,1,0,1,0,0",
            "A,Home,Nowhere,0,1,0,1,0,0",
        ])
        with pytest.raises(GazetteerError, match="unknown parent"):
            ContextModel(nodes)


def office_event(timestamp=ts(TUESDAY, 9), cognitive="Navigate"):
    return RawEvent("u00", timestamp, (48.85, 2.32), CognitiveAction(cognitive))


class TestAggregate:
    def test_morning_at_office(self, context):
        key = context.aggregate(office_event(), Profile("g0"), 0)
        assert key == SituationKey(TimeBucket("Morning", "Weekday", "Free"),
                                   "Office", "g0", "Navigate", 0)

    def test_full_depth_reaches_root(self, context):
        key = context.aggregate(office_event(), Profile("g0"), context.depth)
        assert key.place == "Anywhere"
        assert key.granularity == context.depth

    def test_missing_geo_is_unknown_place(self, context):
        event = RawEvent("u00", ts(TUESDAY, 9), None, CognitiveAction("Call"))
        key = context.aggregate(event, Profile("g0"), 0)
        assert key.place == UNKNOWN_PLACE

    def test_missing_cognitive_uses_profile_prior(self, context):
        event = RawEvent("u00", ts(TUESDAY, 9), (48.85, 2.32), None,
                         CalendarEntry("m", 0, 1))
        key = context.aggregate(event, Profile("g0", prior_cognitive="SendEmail"), 0)
        assert key.cognitive == "SendEmail"
        key = context.aggregate(event, Profile("g0"), 0)
        assert key.cognitive == "Unknown"

    def test_level_out_of_range(self, context):
        with pytest.raises(ValueError):
            context.aggregate(office_event(), Profile("g0"), context.depth + 1)
        with pytest.raises(ValueError):
            context.aggregate(office_event(), Profile("g0"), -1)

    def test_generalization_is_function_of_previous_level(self, context):
        # equal level-k keys must generalize to equal level-(k+1) keys
        rng = random.Random(1)
        places = [(48.85, 2.32), (48.87, 2.35), (48.63, 2.44), (48.89, 2.39), None]
        events = []
        for _ in range(200):
            geo = places[rng.randrange(len(places))]
            events.append(RawEvent("u00", rng.randrange(0, 10**7), geo,
                                   CognitiveAction("Navigate")))
        for k in range(context.depth):
            seen = {}
            for event in events:
                key_k = context.aggregate(event, Profile("g0"), k)
                key_k1 = context.aggregate(event, Profile("g0"), k + 1)
                if key_k in seen:
                    assert seen[key_k] == key_k1
                seen[key_k] = key_k1


class TestEnumerateGranularities:
    def test_leaf_depth_two_gives_three_keys(self, context):
        keys = context.enumerate_granularities(office_event(), Profile("g0"))
        assert [k.place for k in keys] == ["Office", "Paris", "Anywhere"]
        assert [k.granularity for k in keys] == [0, 1, 2]

    def test_unknown_place_deduplicates(self, context):
        event = RawEvent("u00", ts(TUESDAY, 9), None, CognitiveAction("Call"))
        keys = context.enumerate_granularities(event, Profile("g0"))
        assert len(keys) == 1
        assert keys[0].place == UNKNOWN_PLACE

    def test_same_bucket_same_lists(self, context):
        a = context.enumerate_granularities(office_event(ts(TUESDAY, 9)), Profile("g0"))
        b = context.enumerate_granularities(office_event(ts(TUESDAY, 11, 45)), Profile("g0"))
        assert a == b

    def test_no_duplicates_and_ordered(self, context):
        keys = context.enumerate_granularities(office_event(), Profile("g0"))
        assert len(set(keys)) == len(keys)
        assert [k.granularity for k in keys] == sorted(k.granularity for k in keys)


class TestSituationKey:
    def test_canonical_round_trip(self, context):
        key = context.aggregate(office_event(), Profile("g0"), 0)
        assert SituationKey.from_canonical(key.canonical()) == key

    def test_value_equality_and_hash(self):
        bucket = TimeBucket("Morning", "Weekday", "Free")
        a = SituationKey(bucket, "Office", "g0", "Navigate", 0)
        b = SituationKey(bucket, "Office", "g0", "Navigate", 0)
        assert a == b and hash(a) == hash(b)
        assert len({a, b}) == 1


class TestRawEvent:
    def test_needs_some_payload(self):
        with pytest.raises(ValueError):
            RawEvent("u00", 0)

    def test_coordinate_ranges(self):
        with pytest.raises(ValueError):
            RawEvent("u00", 0, (95.0, 0.0))
        with pytest.raises(ValueError):
            RawEvent("u00", 0, (0.0, -190.0))
