import numpy as np
import pytest

from nldm.data import (Corpus, DataError, Sentence, SynthConfig, build_vocab,
                       generate_synthetic, load_conllu, load_tsv, split_corpus,
                       write_tsv)

CONLLU = """\
# sent_id = 1
1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_
2\tcat\tcat\tNOUN\tNN\t_\t3\tnsubj\t_\t_
3\tsleeps\tsleep\tVERB\tVBZ\t_\t0\troot\t_\t_

1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_
1\tdel\tdel\tX\t_\t_\t_\t_\t_\t_
1.1\tnull\t_\t_\t_\t_\t_\t_\t_\t_
2\tok\tok\tY\t_\t_\t1\t_\t_\t_
"""


class TestSentence:
    def test_length_mismatch(self):
        with pytest.raises(DataError):
            Sentence(["a", "b"], ["X"])

    def test_bad_heads(self):
        with pytest.raises(DataError):
            Sentence(["a", "b"], ["X", "Y"], heads=[0, 5])


class TestConllu:
    def test_parse(self, tmp_path):
        p = tmp_path / "x.conllu"
        p.write_text(CONLLU)
        corpus = load_conllu(p)
        assert len(corpus) == 2
        assert corpus[0].tokens == ["The", "cat", "sleeps"]
        assert corpus[0].labels == ["DET", "NOUN", "VERB"]
        assert corpus[0].heads == [2, 3, 0]
        # ranges and empty nodes skipped; missing head -> heads dropped
        assert corpus[1].tokens == ["del", "ok"]
        assert corpus[1].heads is None

    def test_column_count_error_cites_location(self, tmp_path):
        p = tmp_path / "bad.conllu"
        p.write_text("1\tonly\tthree\n")
        with pytest.raises(DataError, match=r"bad\.conllu:1"):
            load_conllu(p)

    def test_bad_token_id(self, tmp_path):
        p = tmp_path / "bad.conllu"
        p.write_text("x\t" + "\t".join(["_"] * 9) + "\n")
        with pytest.raises(DataError, match="bad token id"):
            load_conllu(p)


class TestTsv:
    def test_round_trip(self, tmp_path):
        corpus = Corpus([Sentence(["a", "b"], ["X", "Y"]),
                         Sentence(["c"], ["Z"])])
        p = tmp_path / "c.tsv"
        write_tsv(corpus, p)
        back = load_tsv(p)
        assert [s.tokens for s in back] == [["a", "b"], ["c"]]
        assert [s.labels for s in back] == [["X", "Y"], ["Z"]]

    def test_missing_trailing_blank_line(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("a\tX\nb\tY")
        assert len(load_tsv(p)) == 1

    def test_field_count_error(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("a\tX\tZ\n")
        with pytest.raises(DataError, match=r"c\.tsv:1"):
            load_tsv(p)


class TestVocabAndSplit:
    def test_build_vocab(self):
        corpus = Corpus([Sentence(["a", "b", "a"], ["X", "Y", "X"])])
        vocab, labels = build_vocab(corpus)
        assert vocab.itos == ["<pad>", "<unk>", "a", "b"]
        assert labels.labels == ["X", "Y"]

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            build_vocab(Corpus([]))

    def test_split_sizes_and_determinism(self):
        corpus = Corpus([Sentence([f"w{i}"], ["X"]) for i in range(100)])
        tr, dv, te = split_corpus(corpus, seed=3)
        assert (len(tr), len(dv), len(te)) == (80, 10, 10)
        assert {s.tokens[0] for c in (tr, dv, te) for s in c} \
            == {f"w{i}" for i in range(100)}
        tr2, _, _ = split_corpus(corpus, seed=3)
        assert [s.tokens for s in tr] == [s.tokens for s in tr2]
        tr3, _, _ = split_corpus(corpus, seed=4)
        assert [s.tokens for s in tr] != [s.tokens for s in tr3]


class TestSyntheticGenerator:
    def test_shapes_and_alphabets(self):
        cfg = SynthConfig(n_samples=50, seed=0)
        tr, dv, te = generate_synthetic(cfg)
        assert (len(tr), len(dv), len(te)) == (40, 5, 5)
        for sent in list(tr) + list(dv) + list(te):
            assert 1 <= len(sent) <= cfg.max_len
            assert all(lab in {f"t{y}" for y in range(cfg.n_labels)}
                       for lab in sent.labels)
            assert all(tok.startswith("w") and len(tok) == 5
                       for tok in sent.tokens)

    def test_reproducible(self):
        a = generate_synthetic(SynthConfig(n_samples=20, seed=5))
        b = generate_synthetic(SynthConfig(n_samples=20, seed=5))
        for ca, cb in zip(a, b):
            assert [s.tokens for s in ca] == [s.tokens for s in cb]
            assert [s.labels for s in ca] == [s.labels for s in cb]

    def test_seed_changes_output(self):
        a, _, _ = generate_synthetic(SynthConfig(n_samples=20, seed=5))
        b, _, _ = generate_synthetic(SynthConfig(n_samples=20, seed=6))
        assert [s.tokens for s in a] != [s.tokens for s in b]

    def test_labels_are_word_dependent(self):
        # words carry information about labels: the modal label given a
        # frequent word should beat the global modal label on average
        tr, _, _ = generate_synthetic(SynthConfig(n_samples=300, seed=1))
        pairs = [(t, l) for s in tr for t, l in zip(s.tokens, s.labels)]
        from collections import Counter
        by_word: dict[str, Counter] = {}
        for t, l in pairs:
            by_word.setdefault(t, Counter())[l] += 1
        global_top = Counter(l for _, l in pairs).most_common(1)[0][1]
        per_word_top = sum(c.most_common(1)[0][1] for c in by_word.values())
        assert per_word_top > global_top
