"""Binary and text file formats.

Two binary containers, both little-endian with no padding so files load
identically on any host:

embeddings ("RCEM"): magic, version u32, rows u32, dim u32, then the
row-major float32 payload.

index ("RCIX"): magic, version u32, then D, M, K, n, doc_count as u32 and a
rotation flag byte; sections follow in fixed order: rotation (D x D f32,
present when the flag is 1), codebook (M x K x D/M f32), coarse centroids
(n x D f32), then n inverted lists, each a u32 length followed by that many
(docID u32 + M code bytes) entries. A CRC32 footer over everything before
it closes the file, so any single flipped byte is detected on load.

Text formats are TSV: queries as "qid<TAB>floats space-separated", and
relevance judgments as "qid<TAB>docid<TAB>grade" where duplicate pairs keep
the maximum grade.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CorruptIndexError, DataError
from .ivf import InvertedList, IvfIndex
from .opq import Rotation
from .pq import Codebook

MAGIC_EMBEDDINGS = b"RCEM"
MAGIC_INDEX = b"RCIX"
FORMAT_VERSION = 1


def write_embeddings(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise DataError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
    rows, dim = matrix.shape
    header = MAGIC_EMBEDDINGS + struct.pack("<III", FORMAT_VERSION, rows, dim)
    Path(path).write_bytes(header + matrix.tobytes())


def read_embeddings(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 16:
        raise CorruptIndexError(f"{path}: embedding header truncated")
    if blob[:4] != MAGIC_EMBEDDINGS:
        raise CorruptIndexError(f"{path}: bad embedding magic {blob[:4]!r}")
    version, rows, dim = struct.unpack("<III", blob[4:16])
    if version != FORMAT_VERSION:
        raise CorruptIndexError(f"{path}: unsupported embedding version {version}")
    expected = 16 + rows * dim * 4
    if len(blob) != expected:
        raise CorruptIndexError(
            f"{path}: embedding payload is {len(blob) - 16} bytes, expected {expected - 16}"
        )
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(rows, dim).copy()


class _Reader:
    """Sequential section reader with length accounting."""

    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, count: int, section: str) -> bytes:
        if self.offset + count > len(self.blob):
            raise CorruptIndexError(f"{self.path}: {section} section truncated")
        out = self.blob[self.offset : self.offset + count]
        self.offset += count
        return out

    def floats(self, shape: tuple[int, ...], section: str) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(n * 4, section)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

    def u32(self, section: str) -> int:
        return struct.unpack("<I", self.take(4, section))[0]

    def done(self) -> None:
        if self.offset != len(self.blob):
            raise CorruptIndexError(
                f"{self.path}: {len(self.blob) - self.offset} trailing bytes after last section"
            )


def _entry_dtype(num_blocks: int) -> np.dtype:
    return np.dtype([("id", "<u4"), ("codes", "u1", (num_blocks,))])


def write_index(index: IvfIndex, path: str | Path) -> None:
    if index.doc_count == 0:
        raise ConfigurationError("refusing to write an index over an empty corpus")
    cb = index.codebook
    dim = index.dim
    parts = [
        MAGIC_INDEX,
        struct.pack(
            "<IIIIIIB",
            FORMAT_VERSION,
            dim,
            cb.num_blocks,
            cb.num_centroids,
            index.num_lists,
            index.doc_count,
            1 if index.rotation.enabled else 0,
        ),
    ]
    if index.rotation.enabled:
        parts.append(np.ascontiguousarray(index.rotation.matrix, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(cb.centroids, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(index.coarse_centroids, dtype="<f4").tobytes())
    entry = _entry_dtype(cb.num_blocks)
    for lst in index.lists:
        parts.append(struct.pack("<I", len(lst)))
        packed = np.empty(len(lst), dtype=entry)
        packed["id"] = lst.doc_ids
        packed["codes"] = lst.codes
        parts.append(packed.tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_index(path: str | Path) -> IvfIndex:
    blob = Path(path).read_bytes()
    if len(blob) < 33:  # header + checksum
        raise CorruptIndexError(f"{path}: index header truncated")
    if blob[:4] != MAGIC_INDEX:
        raise CorruptIndexError(f"{path}: bad index magic {blob[:4]!r}")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptIndexError(f"{path}: checksum mismatch, file corrupted")

    version, dim, m, k, n, doc_count = struct.unpack("<IIIIII", body[4:28])
    rotation_flag = body[28]
    if version != FORMAT_VERSION:
        raise CorruptIndexError(f"{path}: unsupported index version {version}")
    if doc_count == 0:
        raise ConfigurationError(f"{path}: empty corpus index is forbidden")
    if m == 0 or dim == 0 or dim % m != 0:
        raise CorruptIndexError(f"{path}: header dimensions D={dim}, M={m} inconsistent")
    if k == 0 or k > 256:
        raise CorruptIndexError(f"{path}: header centroid count K={k} out of range")
    if rotation_flag not in (0, 1):
        raise CorruptIndexError(f"{path}: rotation flag {rotation_flag} not 0 or 1")

    reader = _Reader(body, path)
    reader.offset = 29
    if rotation_flag:
        rotation = Rotation(reader.floats((dim, dim), "rotation"), enabled=True)
    else:
        rotation = Rotation.identity(dim)
    codebook = Codebook(reader.floats((m, k, dim // m), "codebook"))
    coarse = reader.floats((n, dim), "coarse centroids")

    entry = _entry_dtype(m)
    lists = []
    for i in range(n):
        length = reader.u32(f"list {i}")
        raw = reader.take(length * entry.itemsize, f"list {i}")
        packed = np.frombuffer(raw, dtype=entry)
        codes = packed["codes"].copy().reshape(length, m)
        if codes.size and codes.max() >= k:
            raise CorruptIndexError(f"{path}: list {i} contains code >= K")
        lists.append(InvertedList(doc_ids=packed["id"].copy(), codes=codes))
    reader.done()

    all_ids = np.concatenate([lst.doc_ids for lst in lists]) if lists else np.empty(0)
    if len(all_ids) != doc_count or not np.array_equal(np.sort(all_ids), np.arange(doc_count)):
        raise CorruptIndexError(f"{path}: lists do not cover each docID exactly once")
    return IvfIndex(
        coarse_centroids=coarse,
        lists=lists,
        codebook=codebook,
        rotation=rotation,
        doc_count=doc_count,
    )


def write_queries(path: str | Path, ids: list[str], matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float32)
    if len(ids) != len(matrix):
        raise DataError(f"{len(ids)} query ids for {len(matrix)} vectors")
    with open(path, "w") as fh:
        for qid, row in zip(ids, matrix):
            fh.write(f"{qid}\t" + " ".join(f"{v:.9g}" for v in row) + "\n")


def read_queries(path: str | Path) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    rows: list[np.ndarray] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise DataError(f"{path}:{lineno}: expected 'qid<TAB>floats'")
            try:
                vec = np.array([float(tok) for tok in parts[1].split()], dtype=np.float32)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric embedding value") from None
            if vec.size == 0:
                raise DataError(f"{path}:{lineno}: empty embedding")
            if rows and vec.size != rows[0].size:
                raise DataError(
                    f"{path}:{lineno}: dimension {vec.size} != {rows[0].size} of first row"
                )
            ids.append(parts[0])
            rows.append(vec)
    if not rows:
        return [], np.zeros((0, 0), dtype=np.float32)
    return ids, np.vstack(rows)


def write_qrels(path: str | Path, qrels: dict[str, dict[int, int]]) -> None:
    with open(path, "w") as fh:
        for qid, docs in qrels.items():
            for docid, grade in docs.items():
                fh.write(f"{qid}\t{docid}\t{grade}\n")


def read_qrels(path: str | Path) -> dict[str, dict[int, int]]:
    qrels: dict[str, dict[int, int]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0]:
                raise DataError(f"{path}:{lineno}: expected 'qid<TAB>docid<TAB>grade'")
            try:
                docid, grade = int(parts[1]), int(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: docid and grade must be integers") from None
            per_query = qrels.setdefault(parts[0], {})
            per_query[docid] = max(per_query.get(docid, grade), grade)
    return qrels
