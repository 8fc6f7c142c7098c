import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spxrefine import formats
from spxrefine.classifier import TrainConfig, TrainingSet, train
from spxrefine.formats import FormatError, rle_decode, rle_encode
from spxrefine.groundtruth import GtObject

from conftest import random_partition


class TestRle:
    def test_known(self):
        m = np.array([[0, 1], [1, 1]], bool)
        # column-major: 0,1,1,1
        assert rle_encode(m) == {"size": [2, 2], "counts": [1, 3]}

    def test_starts_with_one(self):
        assert rle_encode(np.ones((2, 3), bool))["counts"] == [0, 6]

    def test_empty_mask(self):
        assert rle_encode(np.zeros((3, 3), bool))["counts"] == [9]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31))
    def test_round_trip(self, h, w, seed):
        m = np.random.default_rng(seed).uniform(size=(h, w)) < 0.5
        r = rle_encode(m)
        assert sum(r["counts"]) == h * w
        np.testing.assert_array_equal(rle_decode(r), m)

    def test_bad_counts(self):
        with pytest.raises(FormatError):
            rle_decode({"size": [2, 2], "counts": [1, 2]})


def tiny_model(seed=0):
    r = np.random.default_rng(seed)
    data = TrainingSet(r.uniform(size=60), r.normal(size=(60, 13)), r.integers(0, 2, 60).astype(float))
    return train(data, TrainConfig(lr=0.01, epochs=1, widths=(8, 6), d_out=4, seed=seed)), data


class TestModelFile:
    def test_round_trip_bitwise(self, tmp_path):
        model, data = tiny_model()
        formats.save_model(model, tmp_path / "m.spxm")
        loaded = formats.load_model(tmp_path / "m.spxm")
        np.testing.assert_array_equal(loaded.predict(data.prior, data.raw), model.predict(data.prior, data.raw))
        assert loaded.mlp.widths == (8, 6) and loaded.projection.d_out == 4
        assert loaded.stats["rows"] == 60

    def test_layout(self, tmp_path):
        model, _ = tiny_model()
        formats.save_model(model, tmp_path / "m.spxm")
        raw = (tmp_path / "m.spxm").read_bytes()
        assert raw[:4] == b"SPXM"
        hlen = int.from_bytes(raw[4:8], "little")
        blob = np.frombuffer(raw[8 + hlen :], "<f4")
        np.testing.assert_array_equal(blob[: 4 * 13].reshape(4, 13), model.projection.weight)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            formats.load_model(tmp_path / "x")

    def test_version_mismatch(self, tmp_path):
        model, _ = tiny_model()
        p = tmp_path / "m.spxm"
        formats.save_model(model, p)
        raw = p.read_bytes().replace(b'"format_version": 1', b'"format_version": 9')
        p.write_bytes(raw)
        with pytest.raises(FormatError):
            formats.load_model(p)

    def test_truncated(self, tmp_path):
        model, _ = tiny_model()
        p = tmp_path / "m.spxm"
        formats.save_model(model, p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FormatError):
            formats.load_model(p)


class TestFiles:
    def test_label_map_round_trip(self, tmp_path, rng):
        seg = random_partition(rng, 20, 30, 12)
        formats.write_label_map(seg, tmp_path / "s.png", tmp_path / "s.json")
        back = formats.read_label_map(tmp_path / "s.png", tmp_path / "s.json")
        np.testing.assert_array_equal(back.labels, seg.labels)
        assert back.count == seg.count

    def test_gts_round_trip(self, tmp_path, rng):
        gts = [GtObject(rng.uniform(size=(9, 9)) < 0.5, i) for i in range(3)]
        formats.write_gts(tmp_path, "a", gts)
        back = formats.read_gts(tmp_path, "a", (9, 9))
        assert [g.id for g in back] == [0, 1, 2]
        for g, b in zip(gts, back):
            np.testing.assert_array_equal(g.mask, b.mask)
        with pytest.raises(FormatError):
            formats.read_gts(tmp_path, "a", (8, 9))

    def test_missing_images_dir(self, tmp_path):
        with pytest.raises(FormatError):
            formats.list_images(tmp_path)

    def test_unreadable_image(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not a png")
        with pytest.raises(FormatError):
            formats.read_image(tmp_path / "bad.png")
