import csv
import json
import logging
import os
from typing import Iterable, List, Optional

import numpy as np

from config import settings

logger = logging.getLogger(__name__)


def _default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if hasattr(value, "to_json"):
        return value.to_json()
    return str(value)


class ReportStorage:
    def __init__(self):
        self.out_dir = settings.out_dir
        self.ready = False

    def initialize(self, out_dir: Optional[str] = None):
        """Create the report directory"""
        if out_dir is not None:
            self.out_dir = out_dir
        try:
            if not os.path.isdir(self.out_dir):
                os.makedirs(self.out_dir, exist_ok=True)
                logger.info(f"Report directory '{self.out_dir}' created")
            else:
                logger.info(f"Report directory '{self.out_dir}' already exists")
            self.ready = True
        except OSError as e:
            logger.error(f"Failed to initialize report storage: {e}")
            raise

    def _path(self, name: str) -> str:
        if not self.ready:
            self.initialize()
        return os.path.join(self.out_dir, name)

    def report_name(self, command: str, seed: int, suffix: str = "json") -> str:
        return f"{command}_seed{seed}.{suffix}"

    def write_json(self, name: str, payload: dict) -> str:
        """
        Write a JSON report with sorted keys.
        Returns: the path written
        """
        path = self._path(name)
        try:
            with open(path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True, default=_default)
                f.write("\n")
            logger.info(f"Report written: {path}")
            return path
        except (OSError, TypeError) as e:
            logger.error(f"Failed to write report {path}: {e}")
            raise

    def write_csv(self, name: str, header: List[str], rows: Iterable[Iterable]) -> str:
        path = self._path(name)
        try:
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_default(v) if isinstance(v, (np.generic, np.ndarray)) else v for v in row])
            logger.info(f"Table written: {path}")
            return path
        except OSError as e:
            logger.error(f"Failed to write table {path}: {e}")
            raise

    def read_json(self, path: str) -> dict:
        try:
            with open(path) as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Failed to read {path}: {e}")
            raise


# Global instance
report_storage = ReportStorage()
