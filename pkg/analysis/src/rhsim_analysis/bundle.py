"""Read-only access to a finished run directory."""
from __future__ import annotations

import hashlib
import json
import os
import warnings

import pandas as pd

CSV_FILES = ("users", "fleet_states", "matches", "performance",
             "region_traffic", "stranded", "rebalance_log")


class RunBundle:
    """Lazy frames over one run directory; never mutates anything in it."""

    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        man_path = os.path.join(run_dir, "manifest.json")
        if not os.path.exists(man_path):
            raise FileNotFoundError(f"{run_dir}: manifest.json missing")
        with open(man_path) as fh:
            self.manifest = json.load(fh)
        self._frames: dict[str, pd.DataFrame | None] = {}

    @property
    def config(self) -> dict:
        return self.manifest["config"]

    @property
    def config_hash(self) -> str:
        return self.manifest["config_hash"]

    @property
    def strategy(self) -> str:
        return self.config["strategy"]

    @property
    def seed(self) -> int:
        return self.manifest["seed"]

    @property
    def label(self) -> str:
        return f"{self.strategy} (seed {self.seed})"

    def verify_hash(self) -> bool:
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16] == self.config_hash

    def frame(self, name: str) -> pd.DataFrame | None:
        """CSV as a DataFrame, or None (with a warning) when absent."""
        if name not in self._frames:
            path = os.path.join(self.run_dir, f"{name}.csv")
            if not os.path.exists(path):
                warnings.warn(f"{self.run_dir}: {name}.csv missing")
                self._frames[name] = None
            else:
                self._frames[name] = pd.read_csv(path)
        return self._frames[name]

    def resilience(self) -> dict | None:
        path = os.path.join(self.run_dir, "resilience.json")
        if not os.path.exists(path):
            return None
        with open(path) as fh:
            return json.load(fh)

    def disruption_window(self) -> tuple[float, float] | None:
        d = self.config.get("disruption")
        if not d:
            return None
        return d["start_s"], d["end_s"]


def load_bundles(run_dirs) -> list[RunBundle]:
    out = []
    for d in run_dirs:
        try:
            out.append(RunBundle(d))
        except FileNotFoundError as exc:
            warnings.warn(str(exc))
    return out
