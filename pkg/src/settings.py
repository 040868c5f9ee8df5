import os

DATA_DIR = os.environ.get("DATA_DIR", os.path.join(os.path.dirname(__file__), "..", "data"))


def get_workers() -> int:
    """Worker count for joblib pools and forest training."""
    raw = os.environ.get("POSELOAD_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ValueError(f"Invalid POSELOAD_WORKERS: {raw!r}; expected an integer")
    return max(workers, 1)
