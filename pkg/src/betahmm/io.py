"""Tab-separated count tables and versioned JSON model files.

The table format is one binned genomic position per row:

    chrom  bin_start  context  cov_1  meth_1  [cov_2  meth_2 ...]

with one (coverage, methylated) column pair per cell type. Replicates can be
merged at load time by summing consecutive column pairs two at a time, and a
context filter keeps only rows whose context matches (e.g. "CG").

Model files are JSON with an explicit schema version. Floats go through
Python's shortest-round-trip repr, so a save/load cycle reproduces every
parameter bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .model import CountSequence, HmmParams, validate_params

__all__ = [
    "MethylationRecord",
    "ModelFile",
    "SCHEMA_VERSION",
    "load_methylation_records",
    "load_methylation_tsv",
    "write_methylation_tsv",
    "save_model",
    "load_model",
    "file_digest",
]

SCHEMA_VERSION = 1
TSV_COLUMNS = ("chrom", "bin_start", "context")
DEFAULT_BIN_SIZE = 100


@dataclass(frozen=True)
class MethylationRecord:
    """One row of a count table: location, context, and per-cell counts."""

    chrom: str
    bin_start: int
    context: str
    coverage: tuple[int, ...]
    meth: tuple[int, ...]


def _parse_header(line: str) -> int:
    fields = line.rstrip("\n").split("\t")
    if tuple(fields[:3]) != TSV_COLUMNS:
        raise DataError(
            f"header must start with {' '.join(TSV_COLUMNS)}, got {fields[:3]}"
        )
    rest = fields[3:]
    if not rest or len(rest) % 2 != 0:
        raise DataError("header must carry cov_i/meth_i column pairs")
    for idx in range(0, len(rest), 2):
        cell = idx // 2 + 1
        if rest[idx] != f"cov_{cell}" or rest[idx + 1] != f"meth_{cell}":
            raise DataError(
                f"expected columns cov_{cell} meth_{cell}, got {rest[idx]} {rest[idx + 1]}"
            )
    return len(rest) // 2


def load_methylation_records(
    path, bin_size: int = DEFAULT_BIN_SIZE
) -> list[MethylationRecord]:
    """Parse a count table into records, validating counts and bin alignment."""
    records: list[MethylationRecord] = []
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise DataError(f"{path}: empty file")
        num_cells = _parse_header(header)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3 + 2 * num_cells:
                raise DataError(
                    f"{path}:{lineno}: expected {3 + 2 * num_cells} fields, got {len(fields)}"
                )
            try:
                bin_start = int(fields[1])
                counts = [int(x) for x in fields[3:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if bin_start < 0 or bin_start % bin_size != 0:
                raise DataError(
                    f"{path}:{lineno}: bin_start {bin_start} is not a multiple of {bin_size}"
                )
            cov = tuple(counts[0::2])
            meth = tuple(counts[1::2])
            for j, (c, mu) in enumerate(zip(cov, meth)):
                if c < 0 or mu < 0 or mu > c:
                    raise DataError(
                        f"{path}:{lineno}: cell {j + 1} has meth {mu} outside [0, {c}]"
                    )
            records.append(
                MethylationRecord(
                    chrom=fields[0],
                    bin_start=bin_start,
                    context=fields[2],
                    coverage=cov,
                    meth=meth,
                )
            )
    return records


def load_methylation_tsv(
    path,
    context_filter: str | None = None,
    merge_replicates: bool = False,
    bin_size: int = DEFAULT_BIN_SIZE,
) -> CountSequence:
    """Load a count table as a :class:`CountSequence`, in file order.

    ``merge_replicates`` sums consecutive column pairs two at a time, so a
    four-cell file of two replicates each becomes a two-cell sequence.
    """
    records = load_methylation_records(path, bin_size=bin_size)
    if context_filter is not None:
        records = [r for r in records if r.context == context_filter]
    if not records:
        raise DataError(f"{path}: no rows left after filtering")
    cov = np.array([r.coverage for r in records], dtype=np.int64)
    meth = np.array([r.meth for r in records], dtype=np.int64)
    if merge_replicates:
        if cov.shape[1] % 2 != 0:
            raise DataError(
                f"{path}: merging replicates needs an even number of cell columns, got {cov.shape[1]}"
            )
        cov = cov[:, 0::2] + cov[:, 1::2]
        meth = meth[:, 0::2] + meth[:, 1::2]
    return CountSequence(cov, meth)


def write_methylation_tsv(
    path,
    seq: CountSequence,
    chrom: str = "sim",
    context: str = "CG",
    bin_size: int = DEFAULT_BIN_SIZE,
) -> None:
    """Write a sequence as a count table with synthetic genomic coordinates."""
    k = seq.num_cells
    header = list(TSV_COLUMNS) + [
        col for j in range(1, k + 1) for col in (f"cov_{j}", f"meth_{j}")
    ]
    with open(path, "w") as fh:
        fh.write("\t".join(header) + "\n")
        for t in range(len(seq)):
            counts = [
                str(x)
                for j in range(k)
                for x in (int(seq.coverage[t, j]), int(seq.meth[t, j]))
            ]
            fh.write("\t".join([chrom, str(t * bin_size), context] + counts) + "\n")


@dataclass(eq=False)
class ModelFile:
    """A fitted (or planted) model plus everything needed to reproduce it."""

    num_states: int
    num_cells: int
    granularity: int | None
    initial_dist: np.ndarray
    transition: np.ndarray
    meth_probs: np.ndarray  # (num_cells, num_states)
    prior_weights: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_params(self) -> HmmParams:
        meth = self.meth_probs[0] if self.num_cells == 1 else self.meth_probs
        return validate_params(
            HmmParams(
                initial_dist=self.initial_dist,
                transition=self.transition,
                meth_probs=meth,
            )
        )


def save_model(model: ModelFile, path) -> None:
    payload = {
        "schema_version": model.schema_version,
        "num_states": model.num_states,
        "num_cells": model.num_cells,
        "granularity": model.granularity,
        "initial_dist": np.asarray(model.initial_dist, dtype=float).tolist(),
        "transition": np.asarray(model.transition, dtype=float).tolist(),
        "meth_probs": np.atleast_2d(np.asarray(model.meth_probs, dtype=float)).tolist(),
        "prior_weights": (
            None
            if model.prior_weights is None
            else np.asarray(model.prior_weights, dtype=float).tolist()
        ),
        "diagnostics": model.diagnostics,
        "provenance": model.provenance,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> ModelFile:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict) or "schema_version" not in payload:
        raise DataError(f"{path}: missing schema_version")
    version = payload["schema_version"]
    if version > SCHEMA_VERSION:
        raise DataError(
            f"{path}: schema version {version} is newer than supported {SCHEMA_VERSION}"
        )
    try:
        model = ModelFile(
            num_states=int(payload["num_states"]),
            num_cells=int(payload["num_cells"]),
            granularity=(
                None if payload["granularity"] is None else int(payload["granularity"])
            ),
            initial_dist=np.array(payload["initial_dist"], dtype=float),
            transition=np.array(payload["transition"], dtype=float),
            meth_probs=np.array(payload["meth_probs"], dtype=float),
            prior_weights=(
                None
                if payload.get("prior_weights") is None
                else np.array(payload["prior_weights"], dtype=float)
            ),
            diagnostics=payload.get("diagnostics", {}),
            provenance=payload.get("provenance", {}),
            schema_version=int(version),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model file ({exc})") from exc
    if model.meth_probs.shape != (model.num_cells, model.num_states):
        raise DataError(
            f"{path}: meth_probs shape {model.meth_probs.shape} does not match "
            f"({model.num_cells}, {model.num_states})"
        )
    return model


def file_digest(path) -> str:
    """Hex sha256 of a file's bytes, for provenance records."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
