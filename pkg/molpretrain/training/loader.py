"""Corpus preparation and the streaming text loader.

Preparation is one pass over the raw input: every row is parsed and
canonicalised (failures go to ``rejects.csv``), descriptor labels are computed
when an MTR corpus does not carry them, and rows are shuffled with a seeded
bucketed on-disk shuffle so memory stays bounded by one bucket. Unless a
separate validation file is given, the head of the shuffled stream becomes the
fixed held-out set.

The prepared files are plain CSV text (``smiles[,label...]``). The loader
reads them line by line and splits on commas, which is safe because SMILES
never contain commas.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Sequence

import hashlib
import logging
import queue
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from molpretrain.chem.canon import canonicalize
from molpretrain.chem.fragments import largest_fragment
from molpretrain.chem.io import CHUNK_ROWS, read_smiles_file
from molpretrain.chem.smiles import parse_smiles
from molpretrain.errors import DataFormatError, InputError, MolPretrainError
from molpretrain.featurize.descriptors import compute_descriptors, resolve_names
from molpretrain.seeding import make_rng

logger = logging.getLogger(__name__)


@dataclass
class PreparedCorpus:
    train_path: Path
    valid_path: Path
    n_train: int
    n_valid: int
    n_rejects: int
    label_names: tuple[str, ...] = ()


@dataclass
class Batch:
    """Rows of one batch and the loader position right after it."""

    smiles: list[str]
    labels: np.ndarray | None
    pass_index: int
    start_row: int
    end_row: int

    def __len__(self) -> int:
        return len(self.smiles)


def _format_row(smiles: str, labels: Sequence[float] | None) -> str:
    if labels is None:
        return smiles
    return ",".join([smiles, *(repr(float(v)) for v in labels)])


def _clean_rows(
    path: Path,
    label_names: tuple[str, ...],
    strip_salts: bool,
    rejects: list[dict],
    smiles_column: str = "smiles",
) -> Iterator[str]:
    """Validated, canonical rows of ``path`` formatted for the loader."""
    for line, raw, given in _raw_rows(path, label_names, smiles_column):
        try:
            mol = parse_smiles(raw)
            if strip_salts:
                mol = largest_fragment(mol)
            smiles = canonicalize(mol)
            labels = None
            if given is not None:
                labels = given
                if not np.all(np.isfinite(labels)):
                    raise DataFormatError("non-finite label", line)
            elif label_names:
                labels = compute_descriptors(mol, label_names).values
        except MolPretrainError as err:
            rejects.append({"file": path.name, "line": line, "smiles": raw, "error": str(err)})
            continue
        yield _format_row(smiles, labels)


def _raw_rows(
    path: Path, label_names: tuple[str, ...], smiles_column: str
) -> Iterator[tuple[int, str, np.ndarray | None]]:
    """Raw (line, smiles, labels) triples; labels only when a CSV carries every label column."""
    if path.suffix.lower() == ".csv" and label_names:
        header = pd.read_csv(path, nrows=0).columns
        if all(name in header for name in label_names):
            logger.info("using descriptor columns from %s", path)
            chunks = pd.read_csv(
                path,
                usecols=[smiles_column, *label_names],
                dtype={smiles_column: str},
                keep_default_na=False,
                chunksize=CHUNK_ROWS,
            )
            line = 1
            for chunk in chunks:
                labels = chunk[list(label_names)].apply(pd.to_numeric, errors="coerce").to_numpy(np.float64)
                for smiles, row in zip(chunk[smiles_column], labels):
                    line += 1
                    yield line, smiles.strip(), row
            return
    for line, smiles in read_smiles_file(path, smiles_column):
        yield line, smiles, None


def prepare_corpus(
    in_path: str | Path,
    out_dir: str | Path,
    seed: int,
    label_names: Sequence[str] | None = None,
    holdout_rows: int = 100,
    valid_path: str | Path | None = None,
    n_buckets: int = 16,
    strip_salts: bool = True,
) -> PreparedCorpus:
    """Validate, canonicalise, label and shuffle a raw corpus.

    Parameters
    ----------
    in_path : str | Path
        ``.smi``/``.txt`` file or CSV with a ``smiles`` column
    out_dir : str | Path
        Receives ``train.csv``, ``valid.csv`` and ``rejects.csv``
    seed : int
        Run seed; the shuffle uses the derived ``"shuffle"`` stream
    label_names : Sequence[str] | None
        Descriptor names for an MTR corpus, ``None`` for MLM
    holdout_rows : int
        Size of the fixed held-out set taken from the shuffled stream
    valid_path : str | Path | None
        Separate validation file; disables the hold-out
    n_buckets : int
        Number of temporary shuffle buckets
    strip_salts : bool
        Keep only the largest fragment of each molecule

    Returns
    -------
    PreparedCorpus
        Paths and row counts
    """
    in_path = Path(in_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = resolve_names(label_names) if label_names is not None else ()
    header = ",".join(["smiles", *names])
    rng = make_rng(seed, "shuffle")
    rejects: list[dict] = []

    with tempfile.TemporaryDirectory(dir=out_dir) as tmp:
        buckets = [open(Path(tmp) / f"bucket_{b:03d}.txt", "w") for b in range(n_buckets)]
        try:
            rows = _clean_rows(in_path, names, strip_salts, rejects)
            for row in tqdm(rows, desc="prepare", unit="rows", leave=False):
                buckets[int(rng.integers(n_buckets))].write(row + "\n")
        finally:
            for fh in buckets:
                fh.close()

        train_out = out_dir / "train.csv"
        valid_out = out_dir / "valid.csv"
        n_train = n_valid = 0
        holdout = 0 if valid_path is not None else holdout_rows
        with train_out.open("w") as train_fh, valid_out.open("w") as valid_fh:
            train_fh.write(header + "\n")
            valid_fh.write(header + "\n")
            for b in range(n_buckets):
                lines = (Path(tmp) / f"bucket_{b:03d}.txt").read_text().splitlines()
                for k in rng.permutation(len(lines)):
                    if n_valid < holdout:
                        valid_fh.write(lines[k] + "\n")
                        n_valid += 1
                    else:
                        train_fh.write(lines[k] + "\n")
                        n_train += 1
            if valid_path is not None:
                for row in _clean_rows(Path(valid_path), names, strip_salts, rejects):
                    valid_fh.write(row + "\n")
                    n_valid += 1

    pd.DataFrame(rejects, columns=["file", "line", "smiles", "error"]).to_csv(
        out_dir / "rejects.csv", index=False
    )
    if rejects:
        logger.warning("%d rows rejected during preparation, see rejects.csv", len(rejects))
    if n_train == 0:
        raise InputError(f"no usable training rows in {in_path}")
    if n_valid == 0:
        raise InputError("the validation set is empty; raise holdout_rows or pass a valid_path")
    logger.info("prepared %d train and %d held-out rows", n_train, n_valid)
    return PreparedCorpus(train_out, valid_out, n_train, n_valid, len(rejects), names)


@dataclass
class StreamLoader:
    """Line-by-line batch iterator over a prepared CSV file.

    Malformed rows are skipped and recorded in :attr:`rejects` with their line
    number. Memory use is one batch, independent of the file size.
    """

    path: Path
    batch_size: int
    label_names: tuple[str, ...] = ()
    rejects: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.path = Path(self.path)
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")
        if not self.path.is_file():
            raise InputError(f"no such file: {self.path}")
        with self.path.open() as fh:
            header = fh.readline().rstrip("\n").split(",")
        expected = ["smiles", *self.label_names]
        # an MLM run may read a labelled corpus and ignore the label columns
        if header[0] != "smiles" or (self.label_names and header != expected):
            raise DataFormatError(f"header {header} does not match {expected}", 1)
        self._width = len(header)
        self._rows: int | None = None

    @property
    def n_rows(self) -> int:
        if self._rows is None:
            with self.path.open() as fh:
                self._rows = sum(1 for line in fh if line.strip()) - 1
        return self._rows

    def _parse(self, line: str, number: int) -> tuple[str, list[float] | None] | None:
        fields = line.rstrip("\n").split(",")
        if len(fields) != self._width or not fields[0]:
            self.rejects.append({"line": number, "row": line.rstrip("\n"), "error": "wrong field count"})
            return None
        if not self.label_names:
            return fields[0], None
        try:
            values = [float(v) for v in fields[1:]]
        except ValueError:
            self.rejects.append({"line": number, "row": line.rstrip("\n"), "error": "non-numeric label"})
            return None
        return fields[0], values

    def batches(self, pass_index: int = 0, start_row: int = 0) -> Iterator[Batch]:
        """Yield batches of one pass, starting after ``start_row`` data rows."""
        smiles: list[str] = []
        labels: list[list[float]] = []
        row = -1
        first = start_row
        with self.path.open() as fh:
            next(fh)
            for number, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                row += 1
                if row < start_row:
                    continue
                parsed = self._parse(line, number)
                if parsed is not None:
                    smiles.append(parsed[0])
                    if parsed[1] is not None:
                        labels.append(parsed[1])
                if len(smiles) == self.batch_size:
                    yield self._batch(smiles, labels, pass_index, first, row + 1)
                    smiles, labels, first = [], [], row + 1
        if smiles:
            yield self._batch(smiles, labels, pass_index, first, row + 1)

    def _batch(self, smiles: list[str], labels: list[list[float]], pass_index: int, start: int, end: int) -> Batch:
        array = np.asarray(labels, dtype=np.float64) if self.label_names else None
        return Batch(list(smiles), array, pass_index, start, end)

    def read_labels(self) -> np.ndarray:
        """All label rows as a ``[rows, D]`` matrix (used to fit normalisation)."""
        return pd.read_csv(self.path, usecols=list(self.label_names)).to_numpy(np.float64)

    def read_smiles(self) -> Iterator[str]:
        for batch in self.batches():
            yield from batch.smiles


_DONE = object()


def prefetch(items: Iterable, depth: int = 2) -> Iterator:
    """Produce ``items`` on a background thread through a bounded queue.

    With ``depth <= 0`` the iterable is consumed synchronously. Order is
    preserved either way, and exceptions raised by the producer surface in the
    consumer.
    """
    if depth <= 0:
        yield from items
        return
    buffer: queue.Queue = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def produce() -> None:
        try:
            for item in items:
                if stop.is_set():
                    return
                buffer.put(item)
        except BaseException as err:  # noqa: BLE001
            buffer.put(err)
        buffer.put(_DONE)

    worker = threading.Thread(target=produce, daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while worker.is_alive():
            try:
                buffer.get_nowait()
            except queue.Empty:
                worker.join(timeout=0.05)


def row_hashes(path: str | Path) -> list[str]:
    """SHA-256 of every data row of a prepared file."""
    with Path(path).open() as fh:
        next(fh)
        return [hashlib.sha256(line.rstrip("\n").encode()).hexdigest() for line in fh if line.strip()]


def nested_subsets(train_path: str | Path, sizes: Sequence[int], out_dir: str | Path) -> list[Path]:
    """Write the first ``n`` rows of a shuffled training file for every ``n`` in ``sizes``.

    Because every subset is a prefix of the same shuffled stream, smaller
    subsets are contained in larger ones; containment is verified by row
    hashes.

    Returns
    -------
    list[Path]
        One file per size, in the order of ``sizes``
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with Path(train_path).open() as fh:
        header = fh.readline()
        rows = [line for line in fh if line.strip()]
    paths = []
    for size in sizes:
        if size > len(rows):
            raise InputError(f"requested subset of {size} rows but the corpus has {len(rows)}")
        path = out_dir / f"subset_{size}.csv"
        path.write_text(header + "".join(rows[:size]))
        paths.append(path)
    ordered = sorted(zip(sizes, paths))
    for (_, small), (_, large) in zip(ordered, ordered[1:]):
        if not set(row_hashes(small)) <= set(row_hashes(large)):
            raise InputError(f"{small.name} is not contained in {large.name}")
    return paths
