import logging
import os

from dotenv import load_dotenv

load_dotenv()

DATABASE_URL = os.getenv("RIS_LAB_DB", "sqlite:///./rislab.db")
LOG_LEVEL = os.getenv("RIS_LAB_LOG_LEVEL", "INFO").upper()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def resolve_workers(flag: int | None = None) -> int:
    """
    Worker count: explicit flag > RIS_LAB_WORKERS > available cores.
    Workers only change wall time, never results.
    """
    if flag is not None:
        if flag < 1:
            raise RuntimeError(f"--workers must be >= 1 (got {flag})")
        return flag

    raw = os.getenv("RIS_LAB_WORKERS")
    if raw is None or not raw.strip():
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise RuntimeError(f"RIS_LAB_WORKERS must be an integer (got {raw!r})")
    if n < 1:
        raise RuntimeError(f"RIS_LAB_WORKERS must be >= 1 (got {n})")
    return n


def database_url() -> str:
    # read at call time so tests and wrappers can point the ledger elsewhere
    return os.getenv("RIS_LAB_DB", DATABASE_URL)


def configure_logging(level: str | None = None) -> None:
    logging.basicConfig(level=(level or LOG_LEVEL), format=LOG_FORMAT)
