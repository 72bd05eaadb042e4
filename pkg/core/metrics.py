"""
Newline-delimited JSON metrics stream.

One record per line, e.g.
  {"step": 3, "latent": 0.91, "video_recon": 0.42, "text_ce": 3.8, "total": 5.13, "lr": 0.001, "elapsed_ms": 812.4}

Only fields in WALL_CLOCK_FIELDS differ between two runs of the same
(config, seed).
"""
import json
import time
from pathlib import Path
from typing import Any, Dict, List, Union

WALL_CLOCK_FIELDS = ("elapsed_ms",)


def _safe_json_dumps(obj: Any) -> str:
    return json.dumps(obj, default=str, sort_keys=True)


def strip_wall_clock(record: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in record.items() if k not in WALL_CLOCK_FIELDS}


class MetricsWriter:
    """Appends records to `path`; a fresh writer truncates unless `append` is set (resume)."""

    def __init__(self, path: Union[str, Path], append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not append:
            self.path.write_text("", encoding="utf-8")
        self.started = time.time()
        self.count = 0

    def write(self, record: Dict[str, Any]) -> Dict[str, Any]:
        record = dict(record)
        record["elapsed_ms"] = round((time.time() - self.started) * 1000, 3)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(_safe_json_dumps(record) + "\n")
        self.count += 1
        return record


def read_metrics(path: Union[str, Path]) -> List[Dict[str, Any]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [json.loads(line) for line in lines if line.strip()]


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    """Pretty JSON result file (summary, eval, bench, ablation)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")
    return path
