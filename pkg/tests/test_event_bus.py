"""Tests for the in-process event bus."""

import math
import queue
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from server.event_bus import (
    TOPICS,
    BusClosedError,
    BusOverflowError,
    EventBus,
    InvalidTopicError,
    serialize_error,
)
from store.errors import IntegrityError
from testbed.errors import DomainError

topics = st.sampled_from(TOPICS)


class TestPublishSubscribe:
    """Delivery and ordering."""

    def test_exact_topic(self, bus):
        """A subscriber receives events on its topic only."""
        sub = bus.subscribe("run.verdict")
        bus.publish("run.measured_ready", {"run_id": 1})
        seq = bus.publish("run.verdict", {"run_id": 1, "status": "valid"})
        event = sub.get(timeout=1)
        assert event.seq == seq
        assert event.topic == "run.verdict"
        assert event.payload["status"] == "valid"
        assert sub.poll() is None

    def test_wildcard_matches_one_segment(self, bus):
        """`*` stands for exactly one segment."""
        runs = bus.subscribe("run.*")
        anything = bus.subscribe("*.*")
        deep = bus.subscribe("run.*.x")
        bus.publish("run.verdict")
        bus.publish("twin.params_updated")
        assert [e.topic for e in runs.drain()] == ["run.verdict"]
        assert [e.topic for e in anything.drain()] == ["run.verdict", "twin.params_updated"]
        assert len(deep) == 0

    def test_sequence_numbers(self, bus):
        """Sequence numbers increase by one per publish, delivered or not."""
        assert bus.publish("run.verdict") == 1
        assert bus.publish("run.verdict") == 2
        assert bus.last_seq == 2

    @settings(max_examples=50, deadline=None)
    @given(st.lists(topics, max_size=40))
    def test_every_subscriber_sees_publish_order(self, published):
        """Each subscriber's events are the matching publishes in publish order."""
        bus = EventBus()
        subs = [bus.subscribe(pattern) for pattern in ("run.*", "twin.params_updated", "*.*")]
        seqs = [bus.publish(topic, i) for i, topic in enumerate(published)]
        for sub in subs:
            got = sub.drain()
            expected = [i for i, topic in enumerate(published) if sub.matches(topic)]
            assert [e.payload for e in got] == expected
            assert [e.seq for e in got] == [seqs[i] for i in expected]
        bus.close()

    def test_concurrent_publishers_keep_one_order(self, bus):
        """All subscribers agree on a single order under concurrent publishing."""
        a = bus.subscribe("run.*")
        b = bus.subscribe("*.*")

        def publish(worker):
            for i in range(200):
                bus.publish("run.verdict", (worker, i))

        threads = [threading.Thread(target=publish, args=(w,)) for w in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

        seen_a = [e.seq for e in a.drain()]
        seen_b = [e.seq for e in b.drain()]
        assert seen_a == seen_b == sorted(seen_a)
        assert len(seen_a) == 800

    def test_get_times_out(self, bus):
        """get() raises queue.Empty when nothing arrives."""
        sub = bus.subscribe("run.verdict")
        with pytest.raises(queue.Empty):
            sub.get(timeout=0.01)


class TestBackpressure:
    """Bounded queues reject instead of dropping."""

    def test_overflow_rejects_for_everyone(self):
        """A full queue rejects the event for every subscriber."""
        bus = EventBus()
        slow = bus.subscribe("run.verdict", maxsize=1)
        fast = bus.subscribe("run.*")
        bus.publish("run.verdict", 1)
        with pytest.raises(BusOverflowError) as exc_info:
            bus.publish("run.verdict", 2)
        assert exc_info.value.capacity == 1
        assert exc_info.value.pattern == "run.verdict"
        assert [e.payload for e in fast.drain()] == [1]
        assert bus.last_seq == 1
        slow.drain()
        assert bus.publish("run.verdict", 3) == 2

    def test_unrelated_topics_unaffected(self):
        """A full queue only blocks topics it subscribes to."""
        bus = EventBus()
        bus.subscribe("run.verdict", maxsize=1)
        bus.publish("run.verdict")
        assert bus.publish("run.measured_ready") == 2

    def test_queue_size_validation(self):
        """Queues hold at least one event."""
        with pytest.raises(ValueError):
            EventBus(queue_size=0)


class TestLifecycle:
    """Closing and unsubscribing."""

    def test_closed_bus_rejects(self, bus):
        """Publishing on a closed bus fails."""
        sub = bus.subscribe("run.verdict")
        bus.close()
        assert bus.closed
        assert not sub.active
        with pytest.raises(BusClosedError):
            bus.publish("run.verdict")

    def test_unsubscribe(self, bus):
        """An unsubscribed handle receives nothing more."""
        sub = bus.subscribe("run.verdict")
        bus.publish("run.verdict")
        sub.unsubscribe()
        bus.publish("run.verdict")
        assert not sub.active
        assert len(sub.drain()) == 1
        sub.unsubscribe()

    @pytest.mark.parametrize("topic", ["", "run..verdict", "run.verdict!", "run.*"])
    def test_invalid_publish_topic(self, bus, topic):
        """Empty segments, odd characters and wildcards cannot be published."""
        with pytest.raises(InvalidTopicError):
            bus.publish(topic)

    def test_invalid_pattern(self, bus):
        """Subscription patterns are validated too."""
        with pytest.raises(InvalidTopicError):
            bus.subscribe("run.**")


class TestSerializeError:
    """Tests for serialize_error()."""

    def test_structured_fields(self):
        """Known attributes travel with the error."""
        data = serialize_error(DomainError("v_max_mps", math.inf, "must be finite"))
        assert data == {"type": "DomainError", "message": "must be finite", "field": "v_max_mps", "value": "inf"}

    def test_plain_exception(self):
        """Exceptions without fields keep type and message."""
        assert serialize_error(RuntimeError("boom")) == {"type": "RuntimeError", "message": "boom"}

    def test_store_error(self):
        """Store integrity errors carry their table and key."""
        data = serialize_error(IntegrityError("runs", (3,)))
        assert data["table"] == "runs"
        assert data["key"] == [3]
