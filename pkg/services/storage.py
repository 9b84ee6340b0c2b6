"""Канонический файл образцов (JSON-lines + manifest) и CSV с прогнозами."""
import json
import logging
import os

import pandas as pd
from pydantic import ValidationError

from config import config
from services.errors import DataFormatError, SchemaVersionError
from services.records import FourChannelSample

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["sample_id", "channel", "y_hat", "y_ref", "lat", "lon", "station_id", "config_hash"]
MANIFEST_KEYS = ("schema_version", "ddm_width", "ddm_height", "k_ap", "ap_columns", "standardization",
                 "qc_tallies", "split_spec", "seed", "count", "source", "config_hash")


def manifest_path(path: str) -> str:
    return f"{path}.manifest.json"


def build_manifest(samples, *, ddm_shape, ap_columns, standardization, qc_tallies, split_spec,
                   seed: int, config_hash: str, source: str) -> dict:
    return {
        "schema_version": config.SCHEMA_VERSION,
        "ddm_width": int(ddm_shape[0]),
        "ddm_height": int(ddm_shape[1]),
        "k_ap": len(ap_columns),
        "ap_columns": list(ap_columns),
        "standardization": standardization,
        "qc_tallies": qc_tallies,
        "split_spec": split_spec,
        "seed": seed,
        "count": len(samples),
        "source": source,
        "config_hash": config_hash,
    }


def write_samples(path: str, samples, manifest: dict):
    """Образцы по одному в строке, ключи отсортированы; manifest рядом отдельным файлом"""
    if manifest["count"] != len(samples):
        raise DataFormatError(f"manifest count {manifest['count']} != {len(samples)} samples")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for sample in samples:
            f.write(json.dumps(sample.to_json_dict(), sort_keys=True) + "\n")
    with open(manifest_path(path), "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    logger.info(f"Wrote {len(samples)} samples to {path}")


def read_manifest(path: str) -> dict:
    try:
        with open(manifest_path(path), encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"Manifest for {path} is not valid JSON: {e}") from e
    if not isinstance(manifest, dict):
        raise DataFormatError(f"Manifest for {path} is not a JSON object")
    version = manifest.get("schema_version")
    if version != config.SCHEMA_VERSION:
        raise SchemaVersionError(f"{path} has schema version {version}, expected {config.SCHEMA_VERSION}")
    missing = [key for key in MANIFEST_KEYS if key not in manifest]
    if missing:
        raise DataFormatError(f"Manifest for {path} lacks key(s): {', '.join(missing)}")
    return manifest


def read_samples(path: str) -> tuple:
    manifest = read_manifest(path)
    samples = []
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if text and not text.endswith("\n"):
        raise DataFormatError(f"{path} is truncated: last line has no terminator")
    for number, line in enumerate(text.splitlines(), start=1):
        try:
            samples.append(FourChannelSample.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as e:
            raise DataFormatError(f"{path}:{number}: malformed sample: {e}") from e
    if len(samples) != manifest["count"]:
        raise DataFormatError(f"{path} holds {len(samples)} samples, manifest promises {manifest['count']}")
    logger.info(f"Read {len(samples)} samples from {path}")
    return samples, manifest


def prediction_frame(records: list) -> pd.DataFrame:
    return pd.DataFrame(records, columns=PREDICTION_COLUMNS)


def write_predictions(path: str, records: list):
    prediction_frame(records).to_csv(path, index=False, float_format="%.10g")
    logger.info(f"Wrote {len(records)} predictions to {path}")


def read_predictions(path: str) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"sample_id": str, "station_id": str, "config_hash": str})
    missing = set(PREDICTION_COLUMNS) - set(frame.columns) - {"station_id", "config_hash"}
    if missing:
        raise DataFormatError(f"Predictions file {path} lacks column(s): {', '.join(sorted(missing))}")
    return frame
