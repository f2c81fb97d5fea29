"""Run monitoring and metrics for the writer identification pipeline."""

import json
import threading
import time
from collections import defaultdict, deque
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from core.logger import setup_logger

logger = setup_logger("monitoring")


@dataclass
class MetricPoint:
    """Individual metric measurement."""
    timestamp: float
    value: float
    labels: Dict[str, str] = field(default_factory=dict)


@dataclass
class RunSession:
    """Track one CLI command from start to finish."""
    session_id: str
    command: str
    start_time: float
    end_time: Optional[float] = None
    status: str = "in_progress"  # in_progress, completed, failed
    error_message: Optional[str] = None
    stage_seconds: Dict[str, float] = field(default_factory=dict)

    def duration(self) -> float:
        """Get session duration in seconds."""
        end = self.end_time or time.time()
        return end - self.start_time

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for serialization."""
        return {
            "session_id": self.session_id,
            "command": self.command,
            "status": self.status,
            "error_message": self.error_message,
            "duration": self.duration(),
            "stages": dict(self.stage_seconds),
        }


class MetricsCollector:
    """Collect counters, gauges and timings for a run. Thread-safe."""

    def __init__(self, max_points: int = 1000):
        self.metrics: Dict[str, deque] = defaultdict(lambda: deque(maxlen=max_points))
        self.counters: Dict[str, int] = defaultdict(int)
        self.gauges: Dict[str, float] = {}
        self.sessions: Dict[str, RunSession] = {}
        self._lock = threading.Lock()

    @staticmethod
    def _key(name: str, labels: Optional[Dict[str, str]]) -> str:
        if not labels:
            return name
        return f"{name}:{json.dumps(labels, sort_keys=True)}"

    def record_metric(self, name: str, value: float, labels: Optional[Dict[str, str]] = None):
        """Record a metric point."""
        point = MetricPoint(timestamp=time.time(), value=float(value), labels=labels or {})
        with self._lock:
            self.metrics[name].append(point)
        logger.debug(f"Recorded metric {name}: {value}")

    def increment_counter(self, name: str, amount: int = 1, labels: Optional[Dict[str, str]] = None):
        """Increment a counter metric."""
        with self._lock:
            self.counters[self._key(name, labels)] += int(amount)

    def set_gauge(self, name: str, value: float, labels: Optional[Dict[str, str]] = None):
        """Set a gauge metric."""
        with self._lock:
            self.gauges[self._key(name, labels)] = float(value)

    def counter(self, name: str, labels: Optional[Dict[str, str]] = None) -> int:
        return self.counters.get(self._key(name, labels), 0)

    def start_session(self, session_id: str, command: str) -> RunSession:
        """Start tracking a command run."""
        session = RunSession(session_id=session_id, command=command, start_time=time.time())
        self.sessions[session_id] = session
        logger.info(f"Started {command} ({session_id})")
        return session

    def end_session(self, session_id: str, status: str = "completed", error_message: Optional[str] = None):
        """End a command run."""
        if session_id not in self.sessions:
            logger.warning(f"Session {session_id} not found")
            return

        session = self.sessions[session_id]
        session.end_time = time.time()
        session.status = status
        session.error_message = error_message
        self.record_metric("session_duration", session.duration(), {"status": status})
        logger.info(f"Ended {session.command} with status {status} after {session.duration():.1f}s")

    @contextmanager
    def stage(self, session_id: str, name: str):
        """Time one pipeline stage of a session."""
        start = time.time()
        try:
            yield
        finally:
            elapsed = time.time() - start
            session = self.sessions.get(session_id)
            if session is not None:
                session.stage_seconds[name] = session.stage_seconds.get(name, 0.0) + elapsed
            self.record_metric(f"stage_{name}_seconds", elapsed)

    def export_metrics(self) -> Dict[str, Any]:
        """Export a JSON-serializable snapshot."""
        with self._lock:
            return {
                "counters": dict(sorted(self.counters.items())),
                "gauges": dict(sorted(self.gauges.items())),
                "sessions": [s.to_dict() for s in self.sessions.values()],
            }


# Global metrics collector
metrics_collector = MetricsCollector()
