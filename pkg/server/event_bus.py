"""In-process publish/subscribe bus for alerting between the validation components."""

import logging
import math
import queue
import re
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_SIZE = 10_000

# Topic contract between controller, orchestrator, validator and estimator.
TOPICS = (
    "run.trajectory_ready",
    "run.measured_ready",
    "run.simulation_completed",
    "run.verdict",
    "twin.params_updated",
)

_SEGMENT = re.compile(r"^[A-Za-z0-9_\-]+$")


class BusError(Exception):
    """Base class for event bus errors."""


class BusClosedError(BusError):
    def __init__(self, topic: str):
        self.topic = topic
        super().__init__(f"Cannot publish '{topic}': bus is closed")


class BusOverflowError(BusError):
    """A subscriber's queue is full; the event is rejected for everyone."""

    def __init__(self, topic: str, pattern: str, capacity: int):
        self.topic = topic
        self.pattern = pattern
        self.capacity = capacity
        super().__init__(f"Subscriber '{pattern}' queue full ({capacity} events) while publishing '{topic}'")


class InvalidTopicError(BusError):
    def __init__(self, topic: str, reason: str):
        self.topic = topic
        self.reason = reason
        super().__init__(f"Invalid topic '{topic}': {reason}")


@dataclass(frozen=True)
class Event:
    topic: str
    payload: Any
    seq: int
    emitted_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))


def _validate(topic: str, allow_wildcard: bool) -> List[str]:
    if not isinstance(topic, str) or not topic:
        raise InvalidTopicError(str(topic), "topic must be a nonempty string")
    segments = topic.split(".")
    for segment in segments:
        if allow_wildcard and segment == "*":
            continue
        if not _SEGMENT.match(segment):
            raise InvalidTopicError(topic, f"bad segment '{segment}'")
    return segments


class Subscription:
    """A subscriber's handle: its own bounded FIFO queue of matching events."""

    def __init__(self, bus: "EventBus", pattern: str, maxsize: int):
        self.pattern = pattern
        self._segments = _validate(pattern, allow_wildcard=True)
        self._bus = bus
        self._queue: "queue.Queue[Event]" = queue.Queue(maxsize=maxsize)
        self.maxsize = maxsize
        self.active = True

    def matches(self, topic: str) -> bool:
        parts = topic.split(".")
        if len(parts) != len(self._segments):
            return False
        return all(s == "*" or s == p for s, p in zip(self._segments, parts))

    def has_room(self) -> bool:
        return self._queue.qsize() < self.maxsize

    def _deliver(self, event: Event) -> None:
        self._queue.put_nowait(event)

    def get(self, timeout: Optional[float] = None) -> Event:
        """Next event; raises queue.Empty after `timeout` seconds."""
        return self._queue.get(timeout=timeout)

    def poll(self) -> Optional[Event]:
        try:
            return self._queue.get_nowait()
        except queue.Empty:
            return None

    def drain(self) -> List[Event]:
        events = []
        while True:
            event = self.poll()
            if event is None:
                return events
            events.append(event)

    def __len__(self) -> int:
        return self._queue.qsize()

    def unsubscribe(self) -> None:
        self._bus.unsubscribe(self)


class EventBus:
    """Thread-safe in-process bus.

    Topics are dotted names; subscription patterns may use `*` for exactly one segment.
    Every publish gets the next sequence number and is delivered, in that order, to the
    queue of every matching subscriber.
    """

    def __init__(self, queue_size: int = DEFAULT_QUEUE_SIZE):
        if queue_size < 1:
            raise ValueError("queue_size must be >= 1")
        self._lock = threading.Lock()
        self._subscriptions: List[Subscription] = []
        self._seq = 0
        self._closed = False
        self.queue_size = queue_size

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def last_seq(self) -> int:
        return self._seq

    def subscribe(self, pattern: str, maxsize: Optional[int] = None) -> Subscription:
        """Subscribe to an exact topic or a single-level wildcard pattern such as `run.*`.

        Raises:
            InvalidTopicError: Malformed pattern
        """
        subscription = Subscription(self, pattern, maxsize or self.queue_size)
        with self._lock:
            self._subscriptions.append(subscription)
        logger.debug(f"Subscribed to '{pattern}'")
        return subscription

    def unsubscribe(self, subscription: Subscription) -> None:
        with self._lock:
            if subscription in self._subscriptions:
                self._subscriptions.remove(subscription)
            subscription.active = False

    def publish(self, topic: str, payload: Any = None) -> int:
        """Publish `payload` on `topic` and return the event's sequence number.

        Raises:
            BusClosedError: The bus was closed
            InvalidTopicError: Malformed topic (wildcards are not publishable)
            BusOverflowError: A matching subscriber's queue is full; nothing is delivered
        """
        _validate(topic, allow_wildcard=False)
        with self._lock:
            if self._closed:
                raise BusClosedError(topic)
            targets = [s for s in self._subscriptions if s.matches(topic)]
            for subscription in targets:
                if not subscription.has_room():
                    raise BusOverflowError(topic, subscription.pattern, subscription.maxsize)
            self._seq += 1
            event = Event(topic, payload, self._seq)
            for subscription in targets:
                subscription._deliver(event)
        logger.debug(f"Event {event.seq} '{topic}' delivered to {len(targets)} subscribers")
        return event.seq

    def close(self) -> None:
        with self._lock:
            self._closed = True
            for subscription in self._subscriptions:
                subscription.active = False
            self._subscriptions.clear()


_ERROR_FIELDS = (
    "field",
    "hint",
    "operation",
    "value",
    "table",
    "key",
    "column",
    "entity",
    "metric",
    "quantity",
    "candidate",
    "reason",
    "t_s",
    "span",
    "expected",
    "actual",
    "topic",
    "pattern",
    "capacity",
)


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [_jsonable(v) for v in value]
    return str(value)


def serialize_error(exc: Exception) -> Dict[str, Any]:
    """Serialize an exception for event payloads and reports.

    Returns:
        Dict with the error type, message and any structured fields the error carries
    """
    error_data: Dict[str, Any] = {
        "type": type(exc).__name__,
        "message": str(exc),
    }
    for name in _ERROR_FIELDS:
        if name in vars(exc):
            error_data[name] = _jsonable(getattr(exc, name))
    return error_data
