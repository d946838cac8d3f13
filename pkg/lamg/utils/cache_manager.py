from typing import Dict, Any, Optional
import time
import json
import hashlib
from pathlib import Path
import logging

import numpy as np

logger = logging.getLogger(__name__)


def content_key(*parts: Any) -> str:
    """Stable hash of JSON-serializable parts, used as a cache key"""
    payload = json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:32]


class CacheManager:
    def __init__(self, cache_dir: str = ".cache", ttl: Optional[int] = None):
        """
        Initialize the cache manager

        Args:
            cache_dir (str): Directory to store cached arrays
            ttl (Optional[int]): Time to live in seconds, None keeps entries forever
        """
        self.cache_dir = Path(cache_dir)
        self.ttl = ttl
        self.memory_cache: Dict[str, Dict[str, Any]] = {}

        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _get_cache_file(self, key: str) -> Path:
        return self.cache_dir / f"{key}.npz"

    def _expired(self, timestamp: float) -> bool:
        return self.ttl is not None and time.time() - timestamp > self.ttl

    def get(self, key: str) -> Optional[Dict[str, np.ndarray]]:
        """
        Get cached arrays

        Args:
            key (str): Cache key

        Returns:
            Optional[Dict[str, np.ndarray]]: Cached arrays if found and not expired
        """
        if key in self.memory_cache:
            data = self.memory_cache[key]
            if not self._expired(data["timestamp"]):
                return data["value"]
            del self.memory_cache[key]

        cache_file = self._get_cache_file(key)
        if cache_file.exists():
            try:
                with np.load(cache_file) as archive:
                    timestamp = float(archive["__timestamp__"])
                    value = {name: archive[name] for name in archive.files if name != "__timestamp__"}
                if not self._expired(timestamp):
                    self.memory_cache[key] = {"timestamp": timestamp, "value": value}
                    return value
                cache_file.unlink()
            except Exception as e:
                logger.error(f"Error reading cache file {cache_file}: {str(e)}")

        return None

    def set(self, key: str, value: Dict[str, np.ndarray]) -> None:
        """
        Store arrays under a key

        Args:
            key (str): Cache key
            value (Dict[str, np.ndarray]): Arrays to cache
        """
        timestamp = time.time()
        self.memory_cache[key] = {"timestamp": timestamp, "value": value}

        cache_file = self._get_cache_file(key)
        try:
            np.savez(cache_file, __timestamp__=np.array(timestamp), **value)
        except Exception as e:
            logger.error(f"Error writing cache file {cache_file}: {str(e)}")

    def clear(self, key: Optional[str] = None) -> None:
        """
        Clear cache entries

        Args:
            key (str, optional): Specific key to clear. If None, clears all cache
        """
        if key is None:
            self.memory_cache.clear()
            for cache_file in self.cache_dir.glob("*.npz"):
                try:
                    cache_file.unlink()
                except Exception as e:
                    logger.error(f"Error deleting cache file {cache_file}: {str(e)}")
        else:
            self.memory_cache.pop(key, None)
            cache_file = self._get_cache_file(key)
            if cache_file.exists():
                try:
                    cache_file.unlink()
                except Exception as e:
                    logger.error(f"Error deleting cache file {cache_file}: {str(e)}")
