import logging
from pathlib import Path


def configure_logging(config: dict, out_dir: str = None):
    log_cfg = config.get("logging", {})
    lvl = (log_cfg.get("level") or "INFO").upper()
    handlers = [logging.StreamHandler()]
    if log_cfg.get("file") and out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Path(out_dir) / log_cfg["file"], encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, lvl, logging.INFO),
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
        handlers=handlers,
        force=True,
    )
