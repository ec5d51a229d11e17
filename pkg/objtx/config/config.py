import os

# objtx/config/config.py -> repository root
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

CONFIG_DIR = os.path.join(PROJECT_ROOT, "configs")
DEFAULT_CONFIG = os.path.join(CONFIG_DIR, "desk.env")
TINY_CONFIG = os.path.join(CONFIG_DIR, "tiny.env")

# File names written under --out
CHECKPOINT_FILE = "params.ckpt"
CORPUS_FILE = "corpus.jsonl"
METRICS_FILE = "metrics.jsonl"
REPORT_FILE = "report.json"
