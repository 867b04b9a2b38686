"""Persistent monthly request budget for fair-use limited services.

The ledger is a one-line ASCII file ``YYYY-MM <consumed>\\n`` per endpoint.
Every grant is written through (temp file + atomic rename) before it is
returned, so a process killed mid-run never loses a grant it handed out.
"""

from __future__ import annotations

import datetime as dt
import os
import re
import tempfile
import threading
from pathlib import Path
from typing import Callable

from .errors import Exhausted, LedgerIo

DEFAULT_MONTHLY_BUDGET = 10000
BUDGET_DIR_ENV = "SOLARIS_BUDGET_DIR"

_LEDGER_RE = re.compile(r"^(\d{4}-\d{2}) (\d+)\n?$")


def period_key(today: dt.date) -> str:
    return f"{today.year:04d}-{today.month:02d}"


def _utc_today() -> dt.date:
    return dt.datetime.now(dt.timezone.utc).date()


def default_budget_dir() -> Path:
    env = os.environ.get(BUDGET_DIR_ENV)
    if env:
        return Path(env)
    state = os.environ.get("XDG_STATE_HOME") or Path.home() / ".local" / "state"
    return Path(state) / "solaris-tiler"


def ledger_path_for(name: str, budget_dir: Path | None = None) -> Path:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", name)
    return Path(budget_dir or default_budget_dir()) / f"{safe}.budget"


class RateBudget:
    """Thread-safe monthly counter backed by a ledger file.

    ``acquire`` either grants ``n`` requests and persists the new count, or
    raises :class:`Exhausted` without changing anything.
    """

    def __init__(
        self,
        capacity: int,
        ledger_path: str | os.PathLike,
        today: Callable[[], dt.date] = _utc_today,
    ):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.ledger_path = Path(ledger_path)
        self._today = today
        self._lock = threading.Lock()
        self.period_key, self.consumed = self._load()

    @classmethod
    def for_endpoint(cls, name: str, capacity: int, budget_dir: Path | None = None, **kw) -> "RateBudget":
        return cls(capacity, ledger_path_for(name, budget_dir), **kw)

    def _load(self) -> tuple[str, int]:
        current = period_key(self._today())
        try:
            text = self.ledger_path.read_text(encoding="ascii")
        except FileNotFoundError:
            return current, 0
        except (OSError, UnicodeDecodeError) as e:
            raise LedgerIo(f"cannot read budget ledger {self.ledger_path}: {e}") from e
        m = _LEDGER_RE.match(text)
        if not m:
            # refusing to guess: a silent reset could hand out spent budget again
            raise LedgerIo(f"corrupt budget ledger {self.ledger_path}: {text[:40]!r}")
        if m.group(1) != current:
            return current, 0
        return current, int(m.group(2))

    def _persist(self, key: str, consumed: int) -> None:
        path = self.ledger_path
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=path.name, dir=path.parent)
            try:
                with os.fdopen(fd, "w", encoding="ascii") as f:
                    f.write(f"{key} {consumed}\n")
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as e:
            raise LedgerIo(f"cannot write budget ledger {path}: {e}") from e

    def _roll_period(self) -> None:
        key = period_key(self._today())
        if key != self.period_key:
            self.period_key, self.consumed = key, 0

    @property
    def remaining(self) -> int:
        with self._lock:
            self._roll_period()
            return self.capacity - self.consumed

    def acquire(self, n: int = 1) -> int:
        """Grant ``n`` requests; returns the consumed count after the grant."""
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        with self._lock:
            self._roll_period()
            if self.consumed + n > self.capacity:
                raise Exhausted(
                    f"budget {self.ledger_path.stem} exhausted for {self.period_key}: "
                    f"{self.consumed}/{self.capacity} used, {n} requested"
                )
            self._persist(self.period_key, self.consumed + n)
            self.consumed += n
            return self.consumed
