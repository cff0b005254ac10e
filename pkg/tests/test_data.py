import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from postergenre import image
from postergenre.data import (REFERENCE_CORPUS_SIZE, REFERENCE_POSTER_COUNTS, REFERENCE_SPLIT_SIZES,
                              GenreVocabulary, ManifestError, MultiHotLabel, PosterManifest,
                              PosterRecord, compute_cooccurrence, cooccurrence_from_labels, load_manifest,
                              parse_manifest, split_dataset, split_sizes, write_manifest, write_stats_csv)
from postergenre.image import ImageFormatError, encode_ppm, load_poster_image, resize_bilinear, write_ppm

from conftest import TOY_LINES


def manifest_from_labels(y: np.ndarray) -> PosterManifest:
    vocab = GenreVocabulary(tuple(f"g{i}" for i in range(1, y.shape[1] + 1)))
    records = [PosterRecord(f"p{i}.ppm", f"m{i}", MultiHotLabel(tuple(row))) for i, row in enumerate(y)]
    return PosterManifest(records, vocab)


def reference_corpus_labels() -> np.ndarray:
    """A 13882-poster label matrix with the reference per-genre counts and 2-3 labels per poster.

    Each genre's positives occupy a run of consecutive posters that wraps
    around the corpus; no run is longer than the corpus, so no poster gets a
    genre twice.
    """
    n = REFERENCE_CORPUS_SIZE
    y = np.zeros((n, len(REFERENCE_POSTER_COUNTS)), dtype=np.int64)
    start = 0
    for g, count in enumerate(REFERENCE_POSTER_COUNTS):
        y[(start + np.arange(count)) % n, g] = 1
        start = (start + count) % n
    return y


def brute_force_counts(y):
    sets = [set(np.flatnonzero(y[:, j])) for j in range(y.shape[1])]
    d = len(sets)
    single = np.array([len(s) for s in sets])
    pair = np.array([[len(sets[j] & sets[k]) for k in range(d)] for j in range(d)])
    triple = np.array([[[len(sets[j] & sets[k] & sets[l]) for l in range(d)] for k in range(d)] for j in range(d)])
    return single, pair, triple


class TestVocabularyAndLabels:
    def test_default_has_thirteen_genres_in_order(self):
        v = GenreVocabulary()
        assert v.size == 13
        assert v.name(1) == "Action" and v.name(13) == "Thriller"
        assert v.class_id("Drama") == 7

    @pytest.mark.parametrize("labels", [("A",), ("A", "A"), ("A", "")])
    def test_invalid_vocabularies(self, labels):
        with pytest.raises(ValueError):
            GenreVocabulary(labels)

    def test_multi_hot(self):
        lab = MultiHotLabel.from_ids([2, 5], 6)
        assert lab.bits == (0, 1, 0, 0, 1, 0)
        assert lab.count == 2 and lab.ids == (2, 5)
        with pytest.raises(ValueError):
            MultiHotLabel((0, 0, 0))
        with pytest.raises(ValueError):
            MultiHotLabel.from_ids([7], 6)


class TestManifest:
    def test_drama_line(self):
        m = parse_manifest(["p1.ppm\tm1\t7"], GenreVocabulary())
        bits = m.records[0].label.bits
        assert bits[6] == 1 and sum(bits) == 1

    def test_toy_counts(self, toy_manifest):
        assert toy_manifest.n == 5
        np.testing.assert_array_equal(toy_manifest.labels_matrix().sum(axis=0), [3, 3, 3])

    def test_empty(self):
        with pytest.raises(ManifestError, match="empty manifest"):
            parse_manifest([], GenreVocabulary())
        with pytest.raises(ManifestError, match="empty manifest"):
            parse_manifest(["", "  "], GenreVocabulary())

    @pytest.mark.parametrize("line, message", [
        ("p.ppm\tm\t14", "line 2.*unknown genre id 14|:2: unknown genre id 14"),
        ("p.ppm\tm\t", ":2: poster has no genres"),
        ("p.ppm\tm\t1;1", ":2: genre id 1 repeated"),
        ("p.ppm\tm\t1;2;3;4", ":2: 4 genres exceeds"),
        ("p.ppm\tm", ":2: expected 3"),
        ("a.ppm\tm\t2", ":2: duplicate poster path"),
        ("p.ppm\tm\tx", ":2: genre id 'x'"),
    ])
    def test_errors_carry_line_number(self, line, message):
        with pytest.raises(ManifestError, match=message):
            parse_manifest(["a.ppm\tm\t1", line], GenreVocabulary())

    def test_round_trip_keeps_order(self, tmp_path, toy_manifest):
        path = tmp_path / "m.tsv"
        write_manifest(path, toy_manifest.records)
        back = load_manifest(path, toy_manifest.vocab)
        assert [r.order for r in back.records] == [r.order for r in toy_manifest.records]
        assert back.resolve(back.records[0]) == tmp_path / "p1.ppm"
        assert path.read_text().splitlines() == TOY_LINES


class TestSplit:
    def test_sizes_for_twenty(self):
        y = np.eye(4, dtype=np.int64)[np.arange(20) % 4]
        s = split_dataset(manifest_from_labels(y), seed=3)
        assert (len(s.train), len(s.val), len(s.test)) == (16, 2, 2)

    def test_reference_corpus_sizes(self):
        y = reference_corpus_labels()
        m = manifest_from_labels(y)
        s = split_dataset(m, seed=0, sizes=REFERENCE_SPLIT_SIZES)
        assert (len(s.train), len(s.val), len(s.test)) == (10942, 1470, 1470)
        for part in (s.train, s.val, s.test):
            assert np.all(y[list(part)].sum(axis=0) > 0)

    def test_ratio_sizes_for_reference_corpus(self):
        # the plain 8:1:1 rounding of 13882
        assert split_sizes(REFERENCE_CORPUS_SIZE) == (11106, 1388, 1388)

    def test_too_small(self):
        y = np.eye(3, dtype=np.int64)[np.arange(9) % 3]
        with pytest.raises(ValueError):
            split_dataset(manifest_from_labels(y))

    def test_bad_sizes(self):
        y = np.eye(3, dtype=np.int64)[np.arange(12) % 3]
        with pytest.raises(ValueError):
            split_dataset(manifest_from_labels(y), sizes=(10, 1, 0))

    def test_deterministic_cover_for_100_seeds(self):
        rng = np.random.default_rng(11)
        y = np.zeros((57, 5), dtype=np.int64)
        for i in range(57):
            y[i, rng.choice(5, size=rng.integers(1, 4), replace=False)] = 1
        m = manifest_from_labels(y)
        for seed in range(100):
            a = split_dataset(m, seed=seed)
            assert a == split_dataset(m, seed=seed)
            parts = [set(a.train), set(a.val), set(a.test)]
            assert set.union(*parts) == set(range(57))
            assert sum(len(p) for p in parts) == 57
            exact = np.array([0.8, 0.1, 0.1]) * 57
            assert np.all(np.abs(np.array([len(p) for p in parts]) - exact) <= 1)
            # every genre here has many positives, so presence is feasible
            for p in parts:
                assert np.all(y[sorted(p)].sum(axis=0) > 0)


class TestCooccurrence:
    def test_toy(self, toy_manifest):
        st_ = compute_cooccurrence(toy_manifest)
        assert st_.pair[0, 1] == 2
        assert st_.triple[0, 1, 2] == 1
        np.testing.assert_array_equal(np.diag(st_.pair), st_.single)

    def test_toy_subset(self, toy_manifest):
        st_ = compute_cooccurrence(toy_manifest, subset=[1, 3])
        np.testing.assert_array_equal(st_.single, [2, 2, 1])
        np.testing.assert_allclose(st_.imbalance, [np.inf, np.inf, 1.0])
        with pytest.raises(ValueError):
            compute_cooccurrence(toy_manifest, subset=[])

    def test_reference_corpus_counts(self):
        st_ = cooccurrence_from_labels(reference_corpus_labels())
        vocab = GenreVocabulary()
        assert st_.single[vocab.class_id("Drama") - 1] == 6609
        assert st_.single[vocab.class_id("Biography") - 1] == 1076
        np.testing.assert_array_equal(st_.single, REFERENCE_POSTER_COUNTS)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 50), st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
    def test_matches_brute_force(self, n, d, seed):
        rng = np.random.default_rng(seed)
        y = (rng.random((n, d)) < 0.4).astype(np.int64)
        y[np.arange(n), rng.integers(0, d, size=n)] = 1
        stats = cooccurrence_from_labels(y)
        single, pair, triple = brute_force_counts(y)
        np.testing.assert_array_equal(stats.single, single)
        np.testing.assert_array_equal(stats.pair, pair)
        np.testing.assert_array_equal(stats.triple, triple)
        for j, k, l in itertools.product(range(d), repeat=3):
            assert 0 <= triple[j, k, l] <= pair[j, k] <= single[j] <= n
            assert stats.triple[j, j, k] == stats.pair[j, k]
        neg = n - single
        expect = np.where(neg > 0, single / np.maximum(neg, 1), np.inf)
        np.testing.assert_allclose(stats.imbalance, expect)

    def test_stats_csv(self, tmp_path, toy_manifest):
        write_stats_csv(tmp_path, compute_cooccurrence(toy_manifest), toy_manifest.vocab)
        pair = (tmp_path / "pair.csv").read_text().splitlines()
        assert pair[0] == "genre,Action,Adventure,Animation"
        assert pair[1] == "Action,3,2,1"
        singles = (tmp_path / "singles.csv").read_text().splitlines()
        assert singles[1] == "count,3,3,3"
        assert singles[2] == "imbalance,1.5,1.5,1.5"
        assert len((tmp_path / "triple.csv").read_text().splitlines()) == 1 + 27


def bilinear_oracle(img, out):
    """Direct per-pixel evaluation of half-pixel-centred bilinear sampling."""
    h, w = img.shape[:2]
    res = np.zeros((out, out, img.shape[2]))
    for i in range(out):
        for j in range(out):
            sy = min(max((i + 0.5) * h / out - 0.5, 0.0), h - 1)
            sx = min(max((j + 0.5) * w / out - 0.5, 0.0), w - 1)
            y0, x0 = int(sy), int(sx)
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            ty, tx = sy - y0, sx - x0
            res[i, j] = ((1 - ty) * ((1 - tx) * img[y0, x0] + tx * img[y0, x1])
                         + ty * ((1 - tx) * img[y1, x0] + tx * img[y1, x1]))
    return res


class TestImage:
    def test_ppm_round_trip_exact_on_8bit_grid(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(5, 7, 3)) / 255.0
        write_ppm(tmp_path / "a.ppm", img)
        np.testing.assert_array_equal(image.read_image(tmp_path / "a.ppm"), img)

    def test_identity_resize(self, tmp_path):
        img = np.random.default_rng(1).integers(0, 256, size=(8, 8, 3)) / 255.0
        write_ppm(tmp_path / "a.ppm", img)
        np.testing.assert_array_equal(load_poster_image(tmp_path / "a.ppm", 8), img)

    def test_checkerboard_upscale(self):
        board = np.array([[0.0, 1.0], [1.0, 0.0]])[:, :, None].repeat(3, axis=2)
        out = resize_bilinear(board, 4, 4)
        assert out[0, 0, 0] == 0.0 and out[0, 3, 0] == 1.0
        assert out[3, 0, 0] == 1.0 and out[3, 3, 0] == 0.0
        np.testing.assert_allclose(out[1, 1, 0], 0.375, atol=1e-15)
        np.testing.assert_allclose(out[1, 2, 0], 0.625, atol=1e-15)
        np.testing.assert_allclose(out, bilinear_oracle(board, 4), atol=1e-15)

    def test_matches_oracle_on_random_downscale(self):
        img = np.random.default_rng(2).random((9, 13, 3))
        np.testing.assert_allclose(resize_bilinear(img, 5, 5), bilinear_oracle(img, 5), atol=1e-12)

    def test_full_scale_target(self, tmp_path):
        write_ppm(tmp_path / "a.ppm", np.full((12, 9, 3), 0.5))
        assert load_poster_image(tmp_path / "a.ppm", 1024).shape == (1024, 1024, 3)

    def test_grey_image_rejected(self, tmp_path):
        (tmp_path / "g.pgm").write_bytes(b"P5\n2 2\n255\n" + bytes([0, 1, 2, 3]))
        with pytest.raises(ImageFormatError):
            load_poster_image(tmp_path / "g.pgm", 4)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_poster_image(tmp_path / "none.ppm", 4)

    def test_decode_hook(self, tmp_path, monkeypatch):
        (tmp_path / "x.img").write_bytes(b"whatever")
        with pytest.raises(ImageFormatError):
            load_poster_image(tmp_path / "x.img", 2)
        monkeypatch.setattr(image, "decode_hook", lambda p: np.ones((3, 3, 3)))
        np.testing.assert_array_equal(load_poster_image(tmp_path / "x.img", 2), np.ones((2, 2, 3)))

    def test_truncated(self):
        with pytest.raises(ImageFormatError):
            image.decode_ppm(encode_ppm(np.zeros((2, 2, 3)))[:-1])
