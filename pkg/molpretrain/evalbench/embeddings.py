"""Embedding export for external projection tools.

``cls`` mode writes the eval-mode CLS hidden state of a checkpoint for every
row, ``ecfp`` mode writes the fingerprint bits and can add the pairwise
Jaccard distance matrix. Rows are preprocessed like finetuning data (largest
fragment, canonical SMILES), and every unique canonical SMILES is embedded
once, so duplicate rows get identical vectors.
"""

from __future__ import annotations

from typing import Any

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from molpretrain.chem.canon import canonicalize
from molpretrain.chem.fragments import largest_fragment
from molpretrain.chem.smiles import parse_smiles
from molpretrain.errors import ConfigError, InputError, MolPretrainError
from molpretrain.featurize.fingerprints import ecfp, jaccard_matrix
from molpretrain.model.encoder import pool_cls
from molpretrain.splits import read_dataset
from molpretrain.tensor.tensor import no_grad
from molpretrain.tokenizer import Vocab
from molpretrain.training import checkpoint as ckpt
from molpretrain.training.objectives import encode_smiles

logger = logging.getLogger(__name__)

MODES = ("cls", "ecfp")
MAX_DISTANCE_ROWS = 5000
PROJECTION_SETTINGS = {"n_neighbors": 25, "n_components": 2, "min_dist": 0.001}


def export_embeddings(
    dataset: str | Path,
    out_dir: str | Path,
    mode: str = "cls",
    checkpoint: str | Path | None = None,
    smiles_column: str = "smiles",
    label_column: str | None = "label",
    id_column: str | None = None,
    radius: int = 2,
    n_bits: int = 2048,
    distance_matrix: bool = False,
    batch_size: int = 64,
) -> pd.DataFrame:
    """Write ``embeddings.csv`` (``id, label, e0 ...`` or ``id, label, bit0 ...``).

    Also writes ``projection.json`` with suggested projection settings,
    ``rejects.csv`` and, for ``ecfp`` with ``distance_matrix``, ``jaccard.npy``.

    Raises
    ------
    ConfigError
        Unknown mode, ``cls`` without a checkpoint, or a distance matrix
        requested for ``cls`` mode
    InputError
        Distance matrix requested for more than 5000 rows
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "cls" and checkpoint is None:
        raise ConfigError("cls embeddings need a checkpoint")
    if distance_matrix and mode != "ecfp":
        raise ConfigError("the Jaccard distance matrix is only defined for ecfp mode")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    frame = read_dataset(dataset, smiles_column)
    rejects: list[dict[str, Any]] = []
    rows: list[dict[str, Any]] = []
    mols = {}
    for pos, raw in enumerate(frame[smiles_column].astype(str)):
        try:
            mol = largest_fragment(parse_smiles(raw))
            key = canonicalize(mol)
        except MolPretrainError as err:
            rejects.append({"line": pos + 2, "smiles": raw, "error": str(err)})
            continue
        mols.setdefault(key, mol)
        label = frame[label_column].iloc[pos] if label_column and label_column in frame.columns else None
        ident = frame[id_column].iloc[pos] if id_column and id_column in frame.columns else pos
        rows.append({"id": ident, "label": label, "key": key})
    pd.DataFrame(rejects, columns=["line", "smiles", "error"]).to_csv(out_dir / "rejects.csv", index=False)
    if not rows:
        raise InputError(f"no usable rows in {dataset}")
    if distance_matrix and len(rows) > MAX_DISTANCE_ROWS:
        raise InputError(f"distance matrix limited to {MAX_DISTANCE_ROWS} rows, got {len(rows)}")

    keys = list(mols)
    if mode == "cls":
        vectors = _cls_vectors(keys, Path(checkpoint), batch_size)
        prefix = "e"
    else:
        vectors = np.stack([ecfp(mols[k], radius, n_bits).bits for k in keys]).astype(np.uint8)
        prefix = "bit"
    position = {k: i for i, k in enumerate(keys)}
    matrix = vectors[[position[r["key"]] for r in rows]]

    table = pd.DataFrame(matrix, columns=[f"{prefix}{j}" for j in range(matrix.shape[1])])
    table.insert(0, "label", [r["label"] for r in rows])
    table.insert(0, "id", [r["id"] for r in rows])
    table.to_csv(out_dir / "embeddings.csv", index=False)
    if distance_matrix:
        np.save(out_dir / "jaccard.npy", jaccard_matrix(matrix.astype(bool)))
    settings = {"mode": mode, "metric": "jaccard" if mode == "ecfp" else "euclidean", **PROJECTION_SETTINGS}
    (out_dir / "projection.json").write_text(json.dumps(settings, indent=2, sort_keys=True) + "\n")
    logger.info("exported %d %s embeddings of width %d (%d rejects)", len(rows), mode, matrix.shape[1], len(rejects))
    return table


def _cls_vectors(smiles: list[str], checkpoint: Path, batch_size: int) -> np.ndarray:
    model = ckpt.load_model(checkpoint)
    vocab = Vocab.load(checkpoint / ckpt.VOCAB_FILE)
    chunks = []
    with no_grad():
        for start in range(0, len(smiles), batch_size):
            ids, mask, _ = encode_smiles(smiles[start : start + batch_size], vocab)
            chunks.append(pool_cls(model.forward(ids, mask)).data.astype(np.float64))
    return np.concatenate(chunks, axis=0)
