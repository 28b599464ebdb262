import numpy as np
import pytest

from nldm.autodiff import ParamStore, ShapeError, sum_
from nldm.encoder import (Vocab, encode, init_encoder,
                          load_pretrained_embeddings)


@pytest.fixture
def store():
    s = ParamStore()
    init_encoder(s, 7, 4, 3, np.random.default_rng(0))
    return s


class TestVocab:
    def test_build_ordering(self):
        v = Vocab.build(["b", "a", "b", "c", "a", "b"])
        # reserved entries first, then by descending count, ties alphabetical
        assert v.itos == ["<pad>", "<unk>", "b", "a", "c"]
        assert v.pad_id == 0 and v.unk_id == 1

    def test_min_count(self):
        v = Vocab.build(["a", "a", "b"], min_count=2)
        assert "b" not in v.stoi
        assert v.id("b") == v.unk_id

    def test_unknown_maps_to_unk(self):
        v = Vocab.build(["x"])
        assert v.ids(["x", "zzz"]) == [v.stoi["x"], v.unk_id]

    def test_requires_unk(self):
        with pytest.raises(ValueError):
            Vocab(["a", "b"])

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError):
            Vocab(["<unk>", "a", "a"])


class TestEncode:
    def test_shape_and_root_row(self, store):
        H = encode([2, 3, 4], store)
        assert H.shape == (4, 6)
        np.testing.assert_array_equal(H.value[0], store["enc.root"].value[0])

    def test_deterministic(self, store):
        a = encode([1, 2, 3], store).value
        b = encode([1, 2, 3], store).value
        np.testing.assert_array_equal(a, b)

    def test_context_sensitivity(self, store):
        # changing a later token must change earlier rows via the
        # right-to-left pass
        a = encode([2, 3, 4], store).value
        b = encode([2, 3, 5], store).value
        assert not np.allclose(a[1], b[1])

    def test_forward_rows_ignore_future_in_first_half(self, store):
        # the first d_h columns come from the left-to-right LSTM only
        a = encode([2, 3, 4], store).value
        b = encode([2, 3, 5], store).value
        np.testing.assert_array_equal(a[1, :3], b[1, :3])
        np.testing.assert_array_equal(a[2, :3], b[2, :3])
        assert not np.allclose(a[2, 3:], b[2, 3:])

    def test_empty_rejected(self, store):
        with pytest.raises(ValueError):
            encode([], store)

    def test_out_of_range_token(self, store):
        with pytest.raises(ShapeError):
            encode([0, 99], store)

    def test_gradients_reach_all_encoder_params(self, store):
        store.zero_grad()
        sum_(encode([1, 2, 3], store)).backward()
        for name in ("enc.emb", "enc.root", "enc.fw.Wx", "enc.fw.Wh",
                     "enc.fw.b", "enc.bw.Wx", "enc.bw.Wh", "enc.bw.b"):
            g = store[name].grad
            assert g is not None and np.any(g != 0), name


class TestPretrainedEmbeddings:
    def test_load_overwrites_known_rows(self, tmp_path, store):
        v = Vocab.build(["cat", "dog"])
        assert len(v) <= 7
        p = tmp_path / "emb.txt"
        p.write_text("cat 1 2 3 4\nmouse 9 9 9 9\n")
        n = load_pretrained_embeddings(p, v, store)
        assert n == 1
        np.testing.assert_array_equal(store["enc.emb"].value[v.stoi["cat"]],
                                      [1, 2, 3, 4])

    def test_bad_width(self, tmp_path, store):
        p = tmp_path / "emb.txt"
        p.write_text("cat 1 2\n")
        with pytest.raises(ValueError, match="emb.txt:1"):
            load_pretrained_embeddings(p, Vocab.build(["cat"]), store)

    def test_non_numeric(self, tmp_path, store):
        p = tmp_path / "emb.txt"
        p.write_text("cat a b c d\n")
        with pytest.raises(ValueError, match="non-numeric"):
            load_pretrained_embeddings(p, Vocab.build(["cat"]), store)
