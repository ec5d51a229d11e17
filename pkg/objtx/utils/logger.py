import json
import logging
import os
from typing import Any, Dict, Iterator, List, Optional, Union

from pythonjsonlogger import jsonlogger

LOG_FORMAT = "[%(asctime)s] %(levelname)s {%(filename)s:%(lineno)d} - %(message)s"

logger = logging.getLogger("objtx")
logger.setLevel(logging.INFO)
logger.propagate = False
if not logger.handlers:
    _console = logging.StreamHandler()
    _console.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(_console)


def set_log_level(level: Union[str, int]) -> None:
    """
    Set the log level for the logger.

    Parameters:
    - level (Union[str, int]): A string or logging level such as 'debug', 'info', 'warning', 'error', or 'critical', or the corresponding logging constants like logging.DEBUG, logging.INFO, etc.
    """
    if isinstance(level, str):
        level = level.upper()
        numeric_level = getattr(logging, level, None)
        if not isinstance(numeric_level, int):
            raise ValueError(f"Invalid log level: {level}")
        logger.setLevel(numeric_level)
    else:
        logger.setLevel(level)


def add_file_handler(out_dir: str) -> str:
    """Mirror the `objtx` logger into `<out_dir>/objtx.log`; calling twice for one path is a no-op."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.abspath(os.path.join(out_dir, "objtx.log"))
    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler) and handler.baseFilename == path:
            return path
    handler = logging.FileHandler(path)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    return path


class MetricsLog:
    """
    Line-delimited metric records, one JSON object per line.

    Every record holds `metric`, `value` and either `step` (training traces) or
    `split` (evaluation results).
    """

    def __init__(self, path: str, name: Optional[str] = None) -> None:
        self.path = os.path.abspath(path)
        directory = os.path.dirname(self.path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self._logger = logging.getLogger(name or f"objtx.metrics.{self.path}")
        self._logger.setLevel(logging.INFO)
        self._logger.propagate = False
        for handler in self._logger.handlers[:]:
            self._logger.removeHandler(handler)
            handler.close()
        self._handler = logging.FileHandler(self.path, mode="a", encoding="utf-8")
        self._handler.setFormatter(
            jsonlogger.JsonFormatter("%(message)s", json_ensure_ascii=False)
        )
        self._logger.addHandler(self._handler)

    def log_step(self, step: int, metric: str, value: float) -> None:
        self._logger.info(metric, extra={"step": int(step), "metric": metric, "value": float(value)})

    def log_split(self, split: str, metric: str, value: float) -> None:
        self._logger.info(metric, extra={"split": split, "metric": metric, "value": float(value)})

    def close(self) -> None:
        self._handler.flush()
        self._logger.removeHandler(self._handler)
        self._handler.close()

    def __enter__(self) -> "MetricsLog":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()


def metrics_logger(out_dir: str, file_name: str = "metrics.jsonl") -> MetricsLog:
    return MetricsLog(os.path.join(out_dir, file_name))


def read_metrics(path: str) -> List[Dict[str, Any]]:
    """Read back the records written by `MetricsLog`, in file order."""
    def _lines() -> Iterator[str]:
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    yield line

    records = []
    for line in _lines():
        record = json.loads(line)
        record.pop("message", None)
        records.append(record)
    return records
