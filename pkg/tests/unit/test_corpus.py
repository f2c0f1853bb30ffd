# MIT License
# Copyright (c) 2024 The semples authors

import numpy as np
import pytest

from semples._catalog import ClassCatalog, LabeledImage, multi_hot
from semples.corpus import load_corpus, read_corpus, write_corpus
from semples.errors import CorpusError


@pytest.fixture
def catalog():
    return ClassCatalog(("cat", "dog"))


@pytest.fixture
def samples(catalog):
    rng = np.random.default_rng(0)
    return [
        LabeledImage("b", rng.random((8, 8, 3)), multi_hot([0, 1], len(catalog))),
        LabeledImage("a", rng.random((8, 8, 3)), multi_hot([0], len(catalog))),
    ]


class TestClassCatalog:
    def test_text(self, catalog):
        assert catalog.text(1) == "a photo of dog"
        assert len(catalog) == 2
        assert catalog.index("dog") == 1

    @pytest.mark.parametrize(
        "names,template",
        [
            ((), "a photo of {}"),
            (("cat", "cat"), "a photo of {}"),
            (("cat", ""), "a photo of {}"),
            (("cat",), "a photo"),
            (("cat",), "{} and {}"),
        ],
    )
    def test_invalid(self, names, template):
        with pytest.raises(ValueError):
            ClassCatalog(names, template)

    def test_unknown_name(self, catalog):
        with pytest.raises(KeyError):
            catalog.index("zebra")

    def test_fingerprint(self, catalog):
        assert catalog.fingerprint() == ClassCatalog(("cat", "dog")).fingerprint()
        assert catalog.fingerprint() != ClassCatalog(("dog", "cat")).fingerprint()
        assert catalog.fingerprint() != ClassCatalog(("cat", "dog"), "an image of {}").fingerprint()

    def test_file_round_trip(self, catalog, tmp_path):
        catalog.to_file(tmp_path / "classes.txt")
        assert ClassCatalog.from_file(tmp_path / "classes.txt") == catalog


class TestLabeledImage:
    def test_present_classes(self):
        image = LabeledImage("x", np.zeros((4, 4, 3)), [0, 1, 1])
        assert image.present_classes() == (1, 2)

    def test_read_only(self):
        image = LabeledImage("x", np.zeros((4, 4, 3)), [1])
        with pytest.raises(ValueError):
            image.pixels[0, 0, 0] = 1.0

    def test_tensor_is_channels_first(self):
        pixels = np.zeros((4, 6, 3), dtype=np.float32)
        pixels[..., 2] = 0.5
        tensor = LabeledImage("x", pixels, [1]).tensor()
        assert tuple(tensor.shape) == (3, 4, 6)
        assert float(tensor[2].mean()) == 0.5

    @pytest.mark.parametrize(
        "pixels,labels",
        [
            (np.full((4, 4, 3), 1.5), [1]),
            (np.full((4, 4, 3), np.nan), [1]),
            (np.zeros((4, 4)), [1]),
            (np.zeros((4, 4, 3)), [2]),
        ],
    )
    def test_invalid(self, pixels, labels):
        with pytest.raises(ValueError):
            LabeledImage("x", pixels, labels)


class TestCorpus:
    def test_label_vectors(self, catalog, samples, tmp_path):
        write_corpus(tmp_path, samples, catalog)
        corpus = load_corpus(tmp_path, catalog)
        assert [sample.id for sample in corpus] == ["a", "b"]
        assert corpus[0].labels.tolist() == [1, 0]
        assert corpus[1].labels.tolist() == [1, 1]

    def test_round_trip_within_storage_precision(self, catalog, samples, tmp_path):
        write_corpus(tmp_path, samples, catalog)
        loaded = {sample.id: sample for sample in load_corpus(tmp_path, catalog)}
        for sample in samples:
            np.testing.assert_allclose(loaded[sample.id].pixels, sample.pixels, atol=0.5 / 255 + 1e-6)

    def test_deterministic(self, catalog, samples, tmp_path):
        write_corpus(tmp_path, samples, catalog)
        first = load_corpus(tmp_path, catalog)
        second = load_corpus(tmp_path, catalog, workers=1)
        assert [s.id for s in first] == [s.id for s in second]
        for a, b in zip(first, second):
            assert np.array_equal(a.pixels, b.pixels)
            assert np.array_equal(a.labels, b.labels)

    def test_unknown_class(self, catalog, samples, tmp_path):
        write_corpus(tmp_path, samples, catalog)
        (tmp_path / "labels.tsv").write_text("a\tcat\nb\tzebra\n")
        with pytest.raises(CorpusError, match="zebra"):
            load_corpus(tmp_path, catalog)

    def test_empty_label_row(self, catalog, samples, tmp_path):
        write_corpus(tmp_path, samples, catalog)
        (tmp_path / "labels.tsv").write_text("a\t\nb\tcat\n")
        with pytest.raises(CorpusError):
            load_corpus(tmp_path, catalog)

    def test_duplicated_id(self, catalog, samples, tmp_path):
        write_corpus(tmp_path, samples, catalog)
        (tmp_path / "labels.tsv").write_text("a\tcat\na\tdog\n")
        with pytest.raises(CorpusError):
            load_corpus(tmp_path, catalog)

    def test_missing_image_names_the_id(self, catalog, samples, tmp_path):
        write_corpus(tmp_path, samples, catalog)
        (tmp_path / "images" / "b.png").unlink()
        with pytest.raises(CorpusError, match="sample b"):
            load_corpus(tmp_path, catalog)

    def test_undecodable_image_names_the_id(self, catalog, samples, tmp_path):
        write_corpus(tmp_path, samples, catalog)
        (tmp_path / "images" / "a.png").write_bytes(b"not a png at all")
        with pytest.raises(CorpusError, match="sample a"):
            load_corpus(tmp_path, catalog)

    def test_missing_labels_file(self, catalog, tmp_path):
        with pytest.raises(CorpusError):
            load_corpus(tmp_path, catalog)

    @pytest.mark.asyncio
    async def test_read_corpus(self, catalog, samples, tmp_path):
        write_corpus(tmp_path, samples, catalog)
        corpus = await read_corpus(tmp_path, catalog, workers=2)
        assert len(corpus) == 2
