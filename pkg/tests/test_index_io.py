"""Tests for binary/text serialization round trips and corruption detection."""

import struct
import zlib

import numpy as np
import pytest

from conquant.errors import ConfigurationError, CorruptIndexError, DataError
from conquant.index_io import (
    read_embeddings,
    read_index,
    read_qrels,
    read_queries,
    write_embeddings,
    write_index,
    write_qrels,
    write_queries,
)
from conquant.ivf import InvertedList, IvfIndex, build_ivf, search
from conquant.opq import Rotation, train_opq
from conquant.pq import Codebook


@pytest.fixture
def small_index():
    rng = np.random.default_rng(0)
    docs = rng.standard_normal((80, 8)).astype(np.float32)
    rotation, codebook = train_opq(docs, 4, 8, outer_iters=3, seed=0)
    return docs, build_ivf(docs, codebook, rotation, n=5, seed=0)


class TestEmbeddings:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        matrix = rng.standard_normal((33, 7)).astype(np.float32)
        path = tmp_path / "e.rcem"
        write_embeddings(path, matrix)
        got = read_embeddings(path)
        assert got.dtype == np.float32
        np.testing.assert_array_equal(got, matrix)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "e.rcem"
        write_embeddings(path, np.zeros((3, 2), dtype=np.float32))
        blob = path.read_bytes()
        assert blob[:4] == b"RCEM"
        assert struct.unpack("<III", blob[4:16]) == (1, 3, 2)
        assert len(blob) == 16 + 3 * 2 * 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "e.rcem"
        path.write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(CorruptIndexError, match="magic"):
            read_embeddings(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "e.rcem"
        write_embeddings(path, np.ones((4, 4), dtype=np.float32))
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(CorruptIndexError, match="payload"):
            read_embeddings(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "e.rcem"
        path.write_bytes(b"RCEM" + struct.pack("<III", 9, 0, 0))
        with pytest.raises(CorruptIndexError, match="version"):
            read_embeddings(path)


class TestIndexRoundTrip:
    def test_fields_survive(self, small_index, tmp_path):
        docs, index = small_index
        path = tmp_path / "i.rcix"
        write_index(index, path)
        got = read_index(path)
        assert got.doc_count == index.doc_count
        assert got.num_lists == index.num_lists
        assert got.rotation.enabled == index.rotation.enabled
        np.testing.assert_array_equal(got.rotation.matrix, index.rotation.matrix)
        np.testing.assert_array_equal(got.codebook.centroids, index.codebook.centroids)
        np.testing.assert_array_equal(got.coarse_centroids, index.coarse_centroids)
        for la, lb in zip(got.lists, index.lists):
            np.testing.assert_array_equal(la.doc_ids, lb.doc_ids)
            np.testing.assert_array_equal(la.codes, lb.codes)

    def test_search_identical_after_reload(self, small_index, tmp_path):
        docs, index = small_index
        path = tmp_path / "i.rcix"
        write_index(index, path)
        got = read_index(path)
        rng = np.random.default_rng(2)
        for _ in range(100):
            q = rng.standard_normal(8)
            assert search(got, q, topk=10) == search(index, q, topk=10)

    def test_rotation_off_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        docs = rng.standard_normal((40, 6)).astype(np.float32)
        rotation, codebook = train_opq(docs, 3, 4, rotate=False, seed=3)
        index = build_ivf(docs, codebook, rotation, n=3, seed=3)
        path = tmp_path / "i.rcix"
        write_index(index, path)
        got = read_index(path)
        assert not got.rotation.enabled
        # no rotation section on disk: flag byte is 0
        assert path.read_bytes()[28] == 0

    def test_code_section_size_accounting(self, small_index, tmp_path):
        docs, index = small_index
        path = tmp_path / "i.rcix"
        write_index(index, path)
        dim, m = 8, 4
        k, n, count = index.codebook.num_centroids, index.num_lists, index.doc_count
        fixed = 29 + dim * dim * 4 + m * k * (dim // m) * 4 + n * dim * 4 + n * 4 + 4
        code_section = path.stat().st_size - fixed
        assert code_section == count * (4 + m)

    def test_write_rejects_empty_corpus(self, tmp_path):
        empty = IvfIndex(
            coarse_centroids=np.zeros((1, 4), dtype=np.float32),
            lists=[InvertedList(np.empty(0, np.uint32), np.empty((0, 2), np.uint8))],
            codebook=Codebook(np.zeros((2, 4, 2), dtype=np.float32)),
            rotation=Rotation.identity(4),
            doc_count=0,
        )
        with pytest.raises(ConfigurationError):
            write_index(empty, tmp_path / "i.rcix")


class TestIndexCorruption:
    def test_single_byte_flips_detected(self, small_index, tmp_path):
        docs, index = small_index
        path = tmp_path / "i.rcix"
        write_index(index, path)
        blob = bytearray(path.read_bytes())
        # probe positions across header, rotation, codebook, lists, footer
        positions = [0, 5, 28, 40, 300, len(blob) // 2, len(blob) - 10, len(blob) - 1]
        for pos in positions:
            mutated = bytearray(blob)
            mutated[pos] ^= 0x40
            path.write_bytes(bytes(mutated))
            with pytest.raises((CorruptIndexError, ConfigurationError)):
                read_index(path)
        path.write_bytes(bytes(blob))
        read_index(path)  # pristine bytes still load

    def test_truncation_detected(self, small_index, tmp_path):
        docs, index = small_index
        path = tmp_path / "i.rcix"
        write_index(index, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CorruptIndexError):
            read_index(path)

    def test_trailing_bytes_detected(self, small_index, tmp_path):
        docs, index = small_index
        path = tmp_path / "i.rcix"
        write_index(index, path)
        body = path.read_bytes()[:-4] + bytes(8)
        path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
        with pytest.raises(CorruptIndexError, match="trailing"):
            read_index(path)

    def test_out_of_range_code_detected(self, tmp_path):
        rng = np.random.default_rng(4)
        codebook = Codebook(rng.standard_normal((2, 4, 2)).astype(np.float32))
        bad = IvfIndex(
            coarse_centroids=np.zeros((1, 4), dtype=np.float32),
            lists=[InvertedList(np.arange(3, dtype=np.uint32),
                                np.full((3, 2), 200, dtype=np.uint8))],
            codebook=codebook,
            rotation=Rotation.identity(4),
            doc_count=3,
        )
        path = tmp_path / "i.rcix"
        write_index(bad, path)
        with pytest.raises(CorruptIndexError, match="code"):
            read_index(path)

    def test_duplicate_docid_detected(self, tmp_path):
        rng = np.random.default_rng(5)
        codebook = Codebook(rng.standard_normal((2, 4, 2)).astype(np.float32))
        dup = IvfIndex(
            coarse_centroids=np.zeros((1, 4), dtype=np.float32),
            lists=[InvertedList(np.array([0, 0, 1], dtype=np.uint32),
                                np.zeros((3, 2), dtype=np.uint8))],
            codebook=codebook,
            rotation=Rotation.identity(4),
            doc_count=3,
        )
        path = tmp_path / "i.rcix"
        write_index(dup, path)
        with pytest.raises(CorruptIndexError, match="docID"):
            read_index(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "i.rcix"
        path.write_bytes(b"WHAT" + bytes(40))
        with pytest.raises(CorruptIndexError, match="magic"):
            read_index(path)

    def test_read_rejects_empty_corpus_header(self, small_index, tmp_path):
        docs, index = small_index
        path = tmp_path / "i.rcix"
        write_index(index, path)
        blob = bytearray(path.read_bytes())
        blob[24:28] = struct.pack("<I", 0)  # doc_count field
        body = bytes(blob[:-4])
        path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
        with pytest.raises(ConfigurationError, match="empty"):
            read_index(path)


class TestQueriesAndQrels:
    def test_queries_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        ids = [f"q{i}" for i in range(5)]
        matrix = rng.standard_normal((5, 3)).astype(np.float32)
        path = tmp_path / "q.tsv"
        write_queries(path, ids, matrix)
        got_ids, got = read_queries(path)
        assert got_ids == ids
        np.testing.assert_array_equal(got, matrix)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("")
        ids, matrix = read_queries(path)
        assert ids == [] and matrix.shape == (0, 0)
        assert read_qrels(path) == {}

    def test_three_line_fixture(self, tmp_path):
        path = tmp_path / "qr.tsv"
        path.write_text("q1\t3\t1\nq1\t9\t2\nq2\t4\t1\n")
        assert read_qrels(path) == {"q1": {3: 1, 9: 2}, "q2": {4: 1}}

    def test_duplicate_keeps_max_grade(self, tmp_path):
        path = tmp_path / "qr.tsv"
        path.write_text("q1\t3\t1\nq1\t3\t2\nq1\t3\t0\n")
        assert read_qrels(path) == {"q1": {3: 2}}

    def test_malformed_query_line_number(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("q1\t1.0 2.0\nq2 no tab here\n")
        with pytest.raises(DataError, match=":2"):
            read_queries(path)

    def test_non_numeric_value(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("q1\t1.0 oops\n")
        with pytest.raises(DataError, match=":1"):
            read_queries(path)

    def test_inconsistent_dimensions(self, tmp_path):
        path = tmp_path / "q.tsv"
        path.write_text("q1\t1.0 2.0\nq2\t1.0 2.0 3.0\n")
        with pytest.raises(DataError, match="dimension"):
            read_queries(path)

    def test_malformed_qrel_line_number(self, tmp_path):
        path = tmp_path / "qr.tsv"
        path.write_text("q1\t3\t1\nq1\t3\n")
        with pytest.raises(DataError, match=":2"):
            read_qrels(path)

    def test_non_integer_grade(self, tmp_path):
        path = tmp_path / "qr.tsv"
        path.write_text("q1\tdoc\t1\n")
        with pytest.raises(DataError, match="integer"):
            read_qrels(path)
