"""
LRU cache for sampled mesh clouds (.npy).
Uses SQLite for metadata storage and file system for the arrays.
"""

from __future__ import annotations

import hashlib
import io
import sqlite3
import threading
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from t3dnet.config import settings
from t3dnet.core.logging import get_logger
from t3dnet.storage.files import atomic_write_bytes

logger = get_logger(__name__)


def content_hash(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


class MeshSampleCache:
    """
    Size-bounded cache of sampled clouds keyed by (mesh content hash, n, seed).

    Features:
    - Content-addressed keys (renaming a file keeps its samples)
    - LRU eviction once the size limit is reached
    - SQLite index next to the .npy files
    """

    _instance: Optional[MeshSampleCache] = None
    _lock = threading.Lock()

    def __new__(cls, *args, **kwargs) -> MeshSampleCache:
        """Один экземпляр на процесс."""
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
                    cls._instance._initialized = False
        return cls._instance

    def __init__(
        self,
        cache_dir: Optional[Path] = None,
        max_size_mb: Optional[int] = None,
        enabled: Optional[bool] = None,
    ) -> None:
        """
        Args:
            cache_dir: Directory for cache files (default: settings.cache_path)
            max_size_mb: Maximum cache size in MB (default: from settings)
            enabled: Whether cache is enabled (default: from settings)
        """
        if getattr(self, "_initialized", False):
            return

        self.enabled = enabled if enabled is not None else settings.cache_enabled
        self.cache_dir = Path(cache_dir) if cache_dir is not None else settings.cache_path
        self.max_nbytes = (max_size_mb if max_size_mb is not None else settings.cache_max_mb) * 1024 * 1024

        self.samples_dir = self.cache_dir / "samples"
        self.db_path = self.cache_dir / "clouds.sqlite3"
        if self.enabled:
            self.samples_dir.mkdir(parents=True, exist_ok=True)
            self._init_db()
        self._initialized = True

        logger.debug(
            "Mesh cache initialized",
            dir=str(self.cache_dir),
            max_mb=self.max_nbytes // (1024 * 1024),
            enabled=self.enabled,
        )

    @classmethod
    def reset(cls) -> None:
        """Drop the singleton so the next construction re-reads its arguments."""
        with cls._lock:
            cls._instance = None

    @contextmanager
    def _connect(self) -> Iterator[sqlite3.Connection]:
        """Transaction on a fresh connection; closed on exit."""
        conn = sqlite3.connect(str(self.db_path), timeout=30.0)
        conn.row_factory = sqlite3.Row
        try:
            with conn:
                yield conn
        finally:
            conn.close()

    def _init_db(self) -> None:
        with self._connect() as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS clouds (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    sample_key TEXT NOT NULL UNIQUE,
                    path TEXT NOT NULL,
                    nbytes INTEGER NOT NULL,
                    stored_at TEXT NOT NULL,
                    touched_at TEXT NOT NULL
                )
            """)
            conn.execute("CREATE INDEX IF NOT EXISTS idx_clouds_touched ON clouds(touched_at)")
            conn.commit()

    @staticmethod
    def make_key(mesh_hash: str, n: int, seed: int) -> str:
        return f"{mesh_hash}:{n}:{seed}"

    def _sample_path(self, key: str) -> Path:
        hashed = hashlib.md5(key.encode("utf-8")).hexdigest()
        return self.samples_dir / f"{hashed}.npy"

    @staticmethod
    def _now() -> str:
        return datetime.now(timezone.utc).isoformat()

    def get(self, mesh_hash: str, n: int, seed: int) -> Optional[np.ndarray]:
        """Cached (n, 3) cloud or None on a miss."""
        if not self.enabled:
            return None

        key = self.make_key(mesh_hash, n, seed)
        with self._connect() as conn:
            row = conn.execute("SELECT * FROM clouds WHERE sample_key = ?", (key,)).fetchone()
            if row is None:
                return None

            path = Path(row["path"])
            if not path.exists():
                self._drop(conn, row["id"], row["path"])
                return None

            conn.execute(
                "UPDATE clouds SET touched_at = ? WHERE id = ?",
                (self._now(), row["id"]),
            )
            conn.commit()

        try:
            points = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as e:
            logger.warning("Unreadable cache file", path=str(path), error=str(e))
            return None
        if points.shape != (n, 3):
            return None
        return points

    def put(self, mesh_hash: str, n: int, seed: int, points: np.ndarray) -> bool:
        """Store a sampled cloud. Returns True when cached."""
        if not self.enabled:
            return False

        key = self.make_key(mesh_hash, n, seed)
        path = self._sample_path(key)
        buffer = io.BytesIO()
        np.save(buffer, np.ascontiguousarray(points), allow_pickle=False)
        payload = buffer.getvalue()
        now = self._now()

        try:
            self._make_room(len(payload))
            atomic_write_bytes(path, payload)
            with self._connect() as conn:
                conn.execute("""
                    INSERT INTO clouds
                        (sample_key, path, nbytes, stored_at, touched_at)
                    VALUES (?, ?, ?, ?, ?)
                    ON CONFLICT(sample_key) DO UPDATE SET
                        path = excluded.path,
                        nbytes = excluded.nbytes,
                        stored_at = excluded.stored_at,
                        touched_at = excluded.touched_at
                """, (key, str(path), len(payload), now, now))
                conn.commit()
            return True
        except (OSError, sqlite3.Error) as e:
            logger.error("Error storing cache entry", key=key, error=str(e))
            path.unlink(missing_ok=True)
            return False

    def _drop(self, conn: sqlite3.Connection, row_id: int, path: str) -> None:
        try:
            Path(path).unlink(missing_ok=True)
        except OSError as e:
            logger.warning("Error deleting cache file", path=path, error=str(e))
        conn.execute("DELETE FROM clouds WHERE id = ?", (row_id,))
        conn.commit()

    def _used_bytes(self, conn: sqlite3.Connection) -> int:
        return conn.execute("SELECT COALESCE(SUM(nbytes), 0) FROM clouds").fetchone()[0]

    def _make_room(self, incoming: int) -> None:
        """Evict least recently used entries until the new one fits."""
        with self._connect() as conn:
            used = self._used_bytes(conn)
            while used + incoming > self.max_nbytes:
                oldest = conn.execute(
                    "SELECT id, path, nbytes FROM clouds ORDER BY touched_at ASC, id ASC LIMIT 1"
                ).fetchone()
                if oldest is None:
                    break
                self._drop(conn, oldest["id"], oldest["path"])
                used -= oldest["nbytes"]
                logger.debug("Evicted LRU cache entry", path=oldest["path"])

    def clear(self) -> int:
        """Remove every entry. Returns the number removed."""
        if not self.enabled:
            return 0
        with self._connect() as conn:
            rows = conn.execute("SELECT id, path FROM clouds").fetchall()
            for row in rows:
                self._drop(conn, row["id"], row["path"])
        return len(rows)

    def stats(self) -> dict:
        """Число облаков и занятый объём."""
        if not self.enabled:
            return {"enabled": False, "entries": 0, "bytes": 0}
        with self._connect() as conn:
            entries = conn.execute("SELECT COUNT(*) FROM clouds").fetchone()[0]
            used = self._used_bytes(conn)
        return {"enabled": True, "entries": entries, "bytes": used, "limit_bytes": self.max_nbytes}


_cache: Optional[MeshSampleCache] = None


def get_mesh_cache() -> MeshSampleCache:
    """Get or create the global mesh-sample cache."""
    global _cache
    if _cache is None:
        _cache = MeshSampleCache()
    return _cache


def reset_mesh_cache() -> None:
    global _cache
    _cache = None
    MeshSampleCache.reset()
