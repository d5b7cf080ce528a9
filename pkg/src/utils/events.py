import json
import logging
import threading
from pathlib import Path
from typing import Callable, Dict, List

from src.utils.privacy import scrub_dict

log = logging.getLogger(__name__)

Event = Dict[str, object]
EventSink = Callable[[Event], None]

_sinks: List[EventSink] = []


def register_sink(sink: EventSink) -> None:
    if sink not in _sinks:
        _sinks.append(sink)


def unregister_sink(sink: EventSink) -> None:
    if sink in _sinks:
        _sinks.remove(sink)


def clear_sinks() -> None:
    _sinks.clear()


def emit(event: Event) -> None:
    event = scrub_dict(dict(event))
    if not _sinks:
        log.info("EVENT", extra={"event": event})
        return

    for sink in list(_sinks):
        try:
            sink(event)
        except Exception as exc:  # pragma: no cover - sink failures never stop a run
            log.error("Event sink %s failed: %s", sink, exc)


class JsonLinesSink:
    """Append events of selected types to a JSON Lines file."""

    def __init__(self, path: Path | str, types: set[str] | None = None):
        self.path = Path(path)
        self.types = types
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, event: Event) -> None:
        if self.types is not None and event.get("type") not in self.types:
            return
        line = json.dumps(event, sort_keys=True, default=str)
        with self._lock, self.path.open("a", encoding="utf-8") as handle:
            handle.write(line + "\n")
