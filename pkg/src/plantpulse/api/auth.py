"""Accounts, session tokens, and login rate limiting.

Passwords are stored only as salted PBKDF2-SHA256 hashes; verification is
a constant-time compare, and a login for an unknown user burns the same
hash work as a real one so the two failures are indistinguishable from
outside, in both shape and timing.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

DEFAULT_ITERATIONS = 50_000
TOKEN_TTL_SECONDS = 12 * 3600
FAILURE_WINDOW_SECONDS = 60.0
MAX_FAILURES_PER_WINDOW = 10

ROLES = ("admin", "viewer")


def hash_password(password: str, salt: bytes, iterations: int) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, iterations)


@dataclass(frozen=True)
class UserAccount:
    user_id: str
    role: str
    salt: bytes
    password_hash: bytes
    iterations: int


class AuthStore:
    def __init__(self, users: dict[str, UserAccount] | None = None):
        self.users = users or {}
        # decoy account equalizes hashing work for unknown user ids
        self._decoy = self._build("__decoy__", secrets.token_hex(8), "viewer",
                                  DEFAULT_ITERATIONS)

    @staticmethod
    def _build(user_id: str, password: str, role: str, iterations: int) -> UserAccount:
        salt = secrets.token_bytes(16)
        return UserAccount(
            user_id=user_id, role=role, salt=salt,
            password_hash=hash_password(password, salt, iterations),
            iterations=iterations,
        )

    @classmethod
    def from_entries(cls, entries: list[dict], *,
                     iterations: int = DEFAULT_ITERATIONS) -> "AuthStore":
        """Build from config entries: [{"user", "password", "role"}, ...]."""
        users = {}
        for entry in entries:
            role = entry.get("role", "viewer")
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r} for user {entry.get('user')!r}")
            account = cls._build(entry["user"], entry["password"], role, iterations)
            users[account.user_id] = account
        return cls(users)

    def verify(self, user_id: str, password: str) -> UserAccount | None:
        account = self.users.get(user_id)
        target = account if account is not None else self._decoy
        candidate = hash_password(password, target.salt, target.iterations)
        if hmac.compare_digest(candidate, target.password_hash) and account is not None:
            return account
        return None

    def list_users(self) -> list[dict]:
        return [
            {"user_id": a.user_id, "role": a.role}
            for a in sorted(self.users.values(), key=lambda a: a.user_id)
        ]

    # -- persistence (the seeded user table in the data directory) -----------

    def save(self, path: str | Path) -> None:
        blob = [
            {
                "user_id": a.user_id,
                "role": a.role,
                "salt": a.salt.hex(),
                "password_hash": a.password_hash.hex(),
                "iterations": a.iterations,
            }
            for a in self.users.values()
        ]
        Path(path).write_text(json.dumps(blob, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "AuthStore":
        blob = json.loads(Path(path).read_text())
        users = {
            entry["user_id"]: UserAccount(
                user_id=entry["user_id"],
                role=entry["role"],
                salt=bytes.fromhex(entry["salt"]),
                password_hash=bytes.fromhex(entry["password_hash"]),
                iterations=entry["iterations"],
            )
            for entry in blob
        }
        return cls(users)


@dataclass(frozen=True)
class SessionToken:
    token: str
    user_id: str
    role: str
    expires_at: float


class SessionManager:
    def __init__(self, *, ttl_seconds: float = TOKEN_TTL_SECONDS, clock=time.time):
        self.ttl_seconds = ttl_seconds
        self.clock = clock
        self._tokens: dict[str, SessionToken] = {}

    def issue(self, account: UserAccount) -> SessionToken:
        token = SessionToken(
            token=secrets.token_hex(16),  # 128-bit opaque
            user_id=account.user_id,
            role=account.role,
            expires_at=self.clock() + self.ttl_seconds,
        )
        self._tokens[token.token] = token
        return token

    def validate(self, token: str | None) -> SessionToken | None:
        """Expired and unknown tokens fail identically (both return None)."""
        if not token:
            return None
        session = self._tokens.get(token)
        if session is None:
            return None
        if self.clock() >= session.expires_at:
            del self._tokens[token]
            return None
        return session


class LoginRateLimiter:
    """At most 10 failed logins per user per minute; the next attempt
    inside the window is refused outright."""

    def __init__(self, *, window: float = FAILURE_WINDOW_SECONDS,
                 max_failures: int = MAX_FAILURES_PER_WINDOW, clock=time.time):
        self.window = window
        self.max_failures = max_failures
        self.clock = clock
        self._failures: dict[str, deque[float]] = {}

    def _prune(self, user_id: str, now: float) -> deque[float]:
        entries = self._failures.setdefault(user_id, deque())
        while entries and now - entries[0] > self.window:
            entries.popleft()
        return entries

    def allowed(self, user_id: str) -> bool:
        return len(self._prune(user_id, self.clock())) < self.max_failures

    def record_failure(self, user_id: str) -> None:
        self._prune(user_id, self.clock()).append(self.clock())
