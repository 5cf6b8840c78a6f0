from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple
import json
import logging
import re
from pathlib import Path
from datetime import datetime

import pandas as pd
from pydantic import BaseModel

from .schemas import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"


def slugify(text):
    """Helper to create safe directory/file names."""
    text = str(text).lower()
    text = re.sub(r'[^\w\s-]', '', text)
    text = re.sub(r'[\s_-]+', '_', text)
    return text[:30]


def manifest_path(output: Path) -> Path:
    output = Path(output)
    return output.with_name(output.name + MANIFEST_SUFFIX)


class RunStorage(ABC):
    """Abstract base class for run outputs and their manifests."""

    @abstractmethod
    def save_table(self, output, frame: pd.DataFrame, manifest: RunManifest) -> Path:
        """
        Writes a CSV table and the manifest beside it.
        Returns the path of the written table.
        """

    @abstractmethod
    def save_report(self, output, report: BaseModel, manifest: RunManifest) -> Path:
        """Writes a JSON report and the manifest beside it."""

    @abstractmethod
    def list_runs(self, subcommand: Optional[str] = None) -> List[dict]:
        """
        Returns the known runs, newest first.
        Each item dict contains:
        - 'name'
        - 'timestamp'
        - 'subcommand'
        - 'identifier' (to pass to load_run)
        """

    @abstractmethod
    def load_run(self, identifier) -> Tuple[Any, dict]:
        """
        Loads an output by its identifier.
        Returns (DataFrame or report dict, manifest dict)
        """


class LocalRunStorage(RunStorage):
    """Filesystem storage: outputs where requested, manifests alongside."""

    def __init__(self, base_dir: str = "runs"):
        self.base_dir = Path(base_dir)

    def default_output(self, subcommand: str, suffix: str = ".csv") -> Path:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        folder = self.base_dir / slugify(subcommand)
        folder.mkdir(parents=True, exist_ok=True)
        return folder / f"{timestamp}_{slugify(subcommand)}{suffix}"

    def _prepare(self, output) -> Path:
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        return output

    def _write_manifest(self, output: Path, manifest: RunManifest):
        outputs = list(manifest.outputs)
        if str(output) not in outputs:
            outputs.append(str(output))
        manifest = manifest.model_copy(update={"outputs": outputs})
        with open(manifest_path(output), "w", encoding="utf-8") as f:
            f.write(manifest.model_dump_json(indent=2))

    def save_table(self, output, frame, manifest) -> Path:
        output = self._prepare(output)
        # fixed precision: reruns must be byte-identical
        frame.to_csv(output, index=False, float_format="%.10g")
        self._write_manifest(output, manifest)
        logger.info("wrote %s (%d rows)", output, len(frame))
        return output

    def save_report(self, output, report, manifest) -> Path:
        output = self._prepare(output)
        with open(output, "w", encoding="utf-8") as f:
            f.write(report.model_dump_json(indent=2))
        self._write_manifest(output, manifest)
        logger.info("wrote %s", output)
        return output

    def save_text(self, output, text: str, manifest: RunManifest) -> Path:
        output = self._prepare(output)
        output.write_text(text, encoding="utf-8")
        self._write_manifest(output, manifest)
        return output

    def list_runs(self, subcommand=None):
        if not self.base_dir.exists():
            return []
        results = []
        for path in self.base_dir.rglob("*" + MANIFEST_SUFFIX):
            try:
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
            except (OSError, json.JSONDecodeError):
                logger.warning("skipping unreadable manifest %s", path)
                continue
            if subcommand is not None and data.get("subcommand") != subcommand:
                continue
            results.append({
                "name": path.name[: -len(MANIFEST_SUFFIX)],
                "identifier": str(path.with_name(path.name[: -len(MANIFEST_SUFFIX)])),
                "timestamp": data.get("timestamp", ""),
                "subcommand": data.get("subcommand", ""),
            })
        return sorted(results, key=lambda x: (x["timestamp"], x["name"]), reverse=True)

    def load_run(self, identifier):
        output = Path(identifier)
        if not output.exists():
            raise FileNotFoundError(f"Run output not found at {identifier}")
        manifest = {}
        if manifest_path(output).exists():
            with open(manifest_path(output), "r", encoding="utf-8") as f:
                manifest = json.load(f)
        if output.suffix == ".json":
            with open(output, "r", encoding="utf-8") as f:
                return json.load(f), manifest
        return pd.read_csv(output), manifest


def write_gnuplot_script(csv_path, x: str, ys: Sequence[str], logscale: str = "") -> Path:
    """Gnuplot script plotting columns ``ys`` against ``x`` of a headed CSV."""
    csv_path = Path(csv_path)
    header = list(pd.read_csv(csv_path, nrows=0).columns)
    missing = [c for c in [x, *ys] if c not in header]
    if missing:
        raise KeyError(f"columns {missing} not in {csv_path}")
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        f"set xlabel '{x}'",
    ]
    if logscale:
        lines.append(f"set logscale {logscale}")
    plots = [f"'{csv_path.name}' using {header.index(x) + 1}:{header.index(y) + 1} with linespoints" for y in ys]
    lines.append("plot " + ", \\\n     ".join(plots))
    script = csv_path.with_suffix(".gp")
    script.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return script
