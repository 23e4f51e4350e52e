import io
import logging
import zipfile
from pathlib import Path

import requests
from tenacity import (
    before_sleep_log,
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from data.interactions import DATASET_PRESETS
from utils.numerics import ConfigurationError

logger = logging.getLogger("dataset_source")

PUBLIC_ARCHIVES = {
    "movielens-1m": "https://files.grouplens.org/datasets/movielens/ml-1m.zip",
    "filmtrust": "https://guoguibing.github.io/librec/datasets/filmtrust.zip",
    "ciao": "https://guoguibing.github.io/librec/datasets/CiaoDVD.zip",
}


class DatasetSourceClient:
    """Fetches and unpacks the public rating archives"""

    TIMEOUT = 60

    def __init__(self, config: dict):
        ds_cfg = config.get("dataset", {})
        self.name = ds_cfg.get("name")
        self.url = ds_cfg.get("url") or PUBLIC_ARCHIVES.get(self.name or "")
        self.logger = logging.getLogger("dataset_source")
        if not self.url:
            raise ConfigurationError(
                f"no download URL for dataset '{self.name}'; set dataset.url or use one of {sorted(PUBLIC_ARCHIVES)}"
            )

    @retry(
        stop=stop_after_attempt(4),
        wait=wait_exponential(multiplier=2, min=2, max=60),
        retry=retry_if_exception_type(requests.exceptions.RequestException),
        before_sleep=before_sleep_log(logger, logging.WARNING),
        reraise=True,
    )
    def _download(self) -> bytes:
        self.logger.info(f"📥 Downloading {self.url}")
        r = requests.get(self.url, timeout=self.TIMEOUT)
        r.raise_for_status()
        return r.content

    def fetch(self, target_dir) -> Path:
        """Download the archive, unpack it under target_dir and return the ratings file path."""
        target = Path(target_dir)
        target.mkdir(parents=True, exist_ok=True)
        payload = self._download()
        with zipfile.ZipFile(io.BytesIO(payload)) as archive:
            archive.extractall(target)
            names = archive.namelist()
        self.logger.info(f"Unpacked {len(names)} files into {target}")

        expected = DATASET_PRESETS.get(self.name or "", {}).get("file")
        if expected is None:
            return target
        for name in names:
            if name.endswith(expected) or Path(name).name == Path(expected).name:
                return target / name
        self.logger.warning(f"Archive has no {expected}; returning the extraction directory")
        return target
