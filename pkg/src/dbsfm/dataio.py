"""On-disk dataset layout.

Per subject directory: ``signal.f32le`` (raw little-endian IEEE-754 32-bit
samples), ``meta.json`` (subject_id, fs_hz, start_unix_s, timezone_offset_s,
n_samples), ``labels.csv`` (t_unix_s,bradykinesia,dyskinesia on the 120 s
grid). A root ``manifest.json`` lists subjects and carries format_version.
All writers are byte-deterministic for a fixed dataset.
"""

import json
import os
from collections import OrderedDict

import numpy as np

from dbsfm.errors import DataFormatError
from dbsfm.tokens import LabelSeries, Recording, Sequence, tokenize

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
SIGNAL_NAME = "signal.f32le"
META_NAME = "meta.json"
LABELS_NAME = "labels.csv"


def _dump_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_subject(data_dir, recording: Recording, labels: LabelSeries) -> None:
    subject_dir = os.path.join(data_dir, recording.subject_id)
    os.makedirs(subject_dir, exist_ok=True)
    samples = np.ascontiguousarray(recording.samples, dtype="<f4")
    with open(os.path.join(subject_dir, SIGNAL_NAME), "wb") as fh:
        fh.write(samples.tobytes())
    _dump_json(
        os.path.join(subject_dir, META_NAME),
        {
            "subject_id": recording.subject_id,
            "fs_hz": recording.fs_hz,
            "start_unix_s": int(recording.start_unix_s),
            "timezone_offset_s": int(recording.timezone_offset_s),
            "n_samples": int(samples.size),
        },
    )
    with open(os.path.join(subject_dir, LABELS_NAME), "w", newline="") as fh:
        fh.write("t_unix_s,bradykinesia,dyskinesia\n")
        for t, (brady, dysk) in zip(labels.t_unix_s, labels.values):
            fh.write(f"{int(t)},{float(brady)!r},{float(dysk)!r}\n")


def write_manifest(data_dir, subject_ids, extra=None) -> None:
    payload = {"format_version": FORMAT_VERSION, "subjects": sorted(subject_ids)}
    if extra:
        payload.update(extra)
    _dump_json(os.path.join(data_dir, MANIFEST_NAME), payload)


def read_manifest(data_dir) -> dict:
    path = os.path.join(data_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataFormatError(f"missing {MANIFEST_NAME} in {data_dir}")
    with open(path) as fh:
        try:
            manifest = json.load(fh)
        except ValueError as exc:
            raise DataFormatError(f"malformed manifest: {exc}")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(
            f"unsupported format_version {manifest.get('format_version')!r}"
        )
    if "subjects" not in manifest:
        raise DataFormatError("manifest lacks a subjects list")
    return manifest


def read_subject(data_dir, subject_id: str):
    """(Recording, LabelSeries or None) for one subject directory."""
    subject_dir = os.path.join(data_dir, subject_id)
    meta_path = os.path.join(subject_dir, META_NAME)
    if not os.path.exists(meta_path):
        raise DataFormatError(f"missing {META_NAME} for subject {subject_id}")
    with open(meta_path) as fh:
        try:
            meta = json.load(fh)
        except ValueError as exc:
            raise DataFormatError(f"malformed meta.json for {subject_id}: {exc}")
    for key in ("subject_id", "fs_hz", "start_unix_s", "timezone_offset_s", "n_samples"):
        if key not in meta:
            raise DataFormatError(f"meta.json for {subject_id} lacks {key!r}")

    signal_path = os.path.join(subject_dir, SIGNAL_NAME)
    if not os.path.exists(signal_path):
        raise DataFormatError(f"missing {SIGNAL_NAME} for subject {subject_id}")
    samples = np.fromfile(signal_path, dtype="<f4")
    if samples.size != meta["n_samples"]:
        raise DataFormatError(
            f"{subject_id}: signal has {samples.size} samples, meta says {meta['n_samples']}"
        )
    recording = Recording(
        samples=samples,
        fs_hz=float(meta["fs_hz"]),
        start_unix_s=int(meta["start_unix_s"]),
        timezone_offset_s=int(meta["timezone_offset_s"]),
        subject_id=str(meta["subject_id"]),
    )

    labels = None
    labels_path = os.path.join(subject_dir, LABELS_NAME)
    if os.path.exists(labels_path):
        times, values = [], []
        with open(labels_path) as fh:
            header = fh.readline().strip()
            if header != "t_unix_s,bradykinesia,dyskinesia":
                raise DataFormatError(f"unexpected labels.csv header: {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise DataFormatError(f"malformed labels.csv row: {line!r}")
                times.append(int(parts[0]))
                values.append((float(parts[1]), float(parts[2])))
        labels = LabelSeries(
            t_unix_s=np.asarray(times, dtype=np.int64),
            values=np.asarray(values, dtype=np.float64),
        )
    return recording, labels


def write_dataset(data_dir, dataset, extra_manifest=None) -> None:
    """Materialize a synthetic cohort, one subject at a time."""
    os.makedirs(data_dir, exist_ok=True)
    for sid in dataset.subject_ids:
        write_subject(data_dir, dataset.recording(sid), dataset.labels(sid))
    write_manifest(data_dir, dataset.subject_ids, extra=extra_manifest)


def load_sequences(data_dir, welch_cfg, subjects=None, exclude=()):
    """Tokenize every (or selected) subject; returns subject -> [Sequence].

    Subjects in ``exclude`` are never read from disk at all.
    """
    manifest = read_manifest(data_dir)
    wanted = manifest["subjects"] if subjects is None else list(subjects)
    out = OrderedDict()
    for sid in wanted:
        if sid in exclude:
            continue
        recording, labels = read_subject(data_dir, sid)
        out[sid] = tokenize(recording, labels, welch_cfg)
    return out


__all__ = [
    "FORMAT_VERSION",
    "write_subject",
    "write_manifest",
    "read_manifest",
    "read_subject",
    "write_dataset",
    "load_sequences",
    "Sequence",
]
