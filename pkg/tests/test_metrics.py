import json

import oracles
import pytest

from nanoadapt import UndefinedMetricError
from nanoadapt.metrics import (
    Corpus,
    bleu_n,
    caption_scores,
    cider,
    clipped_matches,
    corpus_stats,
    cwr,
    lcs_length,
    rouge,
    tgc,
    tokenize,
)

SEEDS = range(50)


# ---------------------------------------------------------------- tokenizer


@pytest.mark.parametrize("text,tokens", [
    ("The boat, a barge.", ["the", "boat", "a", "barge"]),
    ("", []),
    ("USV-mounted", ["usv", "mounted"]),
    ("  3 buoys\tnear\nPier-7 ", ["3", "buoys", "near", "pier", "7"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens == oracles.tokenize(text)


# ---------------------------------------------------------------- hand cases


def test_tgc_hand_case():
    assert tgc(Corpus.from_texts(["a b c a b c"])) == 0.75


def test_tgc_all_distinct_and_no_cross_caption_trigrams():
    assert tgc(Corpus.from_texts(["a b c d", "a b"])) == 1.0
    with pytest.raises(UndefinedMetricError):
        tgc(Corpus.from_texts(["a b", "c d"]))


def test_cwr_cases():
    assert cwr(Corpus.from_texts(["waterway boat"])) == 0.5
    assert cwr(Corpus.from_texts(["sevench boat"])) == 0.0
    with pytest.raises(UndefinedMetricError):
        cwr(Corpus.from_texts([""]))


def test_bleu_clipping_hand_case():
    cand, ref = "the the the the the the the".split(), "the cat is on the mat".split()
    assert clipped_matches(cand, [ref], 1) == (2, 7)
    # candidate longer than the reference, so no brevity penalty
    assert bleu_n(cand, [ref], n=1) == 2 / 7


def test_bleu_identity_and_disjoint():
    x = "a boat near the harbour".split()
    assert bleu_n(x, [x]) == 1.0
    assert bleu_n(["x", "y"], [["a", "b"]], n=1) == 0.0


def test_bleu_empty_candidate_warns():
    with pytest.warns(RuntimeWarning):
        assert bleu_n([], [["a"]]) == 0.0


def test_bleu_smoothing_flag():
    cand, ref = "a b c d".split(), "a b x d".split()
    assert bleu_n(cand, [ref]) == 0.0
    assert bleu_n(cand, [ref], smoothing=True) > 0.0


def test_rouge_l_hand_case():
    assert lcs_length(list("abcd"), list("acbd")) == 3
    assert rouge(list("abcd"), list("acbd"), "L")["f1"] == 0.75


def test_rouge_identity_disjoint_empty():
    x = "a boat near the harbour".split()
    for v in ("1", "2", "L"):
        assert rouge(x, x, v)["f1"] == 1.0
        assert rouge(x, ["zz", "yy"], v)["f1"] == 0.0
    with pytest.raises(UndefinedMetricError):
        rouge([], x)


def test_cider_identity_single_image():
    assert cider([["a", "boat", "near", "the", "harbour"]], [[["a", "boat", "near", "the", "harbour"]]]) == 10.0


def test_cider_disjoint_and_empty_refs():
    assert cider([["x", "y"]], [[["a", "b"]]]) == 0.0
    with pytest.raises(UndefinedMetricError):
        cider([["a"]], [[]])


def test_cider_mean_vector_variant_matches_on_single_reference():
    cands, refs = [["a", "b", "c"]], [[["a", "b", "d"]]]
    assert cider(cands, refs, aggregate="mean_vector") == cider(cands, refs)


# ---------------------------------------------------------------- oracle agreement


@pytest.mark.parametrize("seed", SEEDS)
def test_metrics_equal_bruteforce_oracle(seed):
    cands, refs = oracles.micro_corpus(seed)
    captions = [r for rs in refs for r in rs] + cands
    corpus = Corpus.from_texts([" ".join(c) for c in captions])
    if any(len(c) >= 3 for c in captions):
        assert tgc(corpus) == oracles.tgc(captions)
    assert cwr(corpus) == oracles.cwr(captions)
    for cand, rs in zip(cands, refs):
        for n in (1, 2, 3, 4):
            assert bleu_n(cand, rs, n) == oracles.bleu(cand, rs, n)
        for r in rs:
            for v in ("1", "2", "L"):
                assert rouge(cand, r, v)["f1"] == oracles.rouge_f1(cand, r, v)
    assert cider(cands, refs) == oracles.cider(cands, refs)


# ---------------------------------------------------------------- invariances


@pytest.mark.parametrize("seed", range(10))
def test_order_and_duplication_invariances(seed):
    cands, refs = oracles.micro_corpus(seed)
    texts = [" ".join(r) for rs in refs for r in rs]
    if any(len(r) >= 3 for rs in refs for r in rs):
        assert tgc(Corpus.from_texts(texts)) == tgc(Corpus.from_texts(texts[::-1]))
    assert cwr(Corpus.from_texts(texts)) == cwr(Corpus.from_texts(texts[::-1]))
    base = cider(cands, refs)
    assert cider(cands, [rs[::-1] for rs in refs]) == base
    assert cider(cands, [rs + rs for rs in refs]) == pytest.approx(base, abs=1e-12)
    for c in cands:
        assert bleu_n(c, [c], min(4, len(c))) == 1.0


# ---------------------------------------------------------------- corpus statistics and files


def test_corpus_stats_histogram_and_matrix():
    caps = Corpus.from_texts(["w " * 88, "w " * 92])
    stats = corpus_stats(caps)
    assert stats["length_histogram"] == {85: 1, 90: 1}
    assert stats["env_cooccurrence"] == [] and stats["labels"] == []


def test_cooccurrence_is_symmetric_with_zero_within_variable(tmp_path):
    rows = [
        {"image_id": "1", "caption": "a", "tags": {"weather": "fog", "scene": "port"}},
        {"image_id": "2", "caption": "b", "tags": {"weather": "sun", "scene": "port"}},
        {"image_id": "3", "caption": "c", "tags": {"weather": "fog", "scene": "river"}},
    ]
    path = tmp_path / "c.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows))
    stats = corpus_stats(Corpus.from_jsonl(path))
    labels, m = stats["labels"], stats["env_cooccurrence"]
    assert labels == ["scene=port", "scene=river", "weather=fog", "weather=sun"]
    assert all(m[i][j] == m[j][i] for i in range(4) for j in range(4))
    assert all(m[i][i] == 0 for i in range(4))
    assert m[0][1] == 0 and m[2][3] == 0
    assert m[0][2] == 1 and m[0][3] == 1 and m[1][2] == 1 and m[1][3] == 0


def test_caption_scores_perfect_predictions():
    refs = {"1": ["a boat near the harbour"], "2": ["the lighthouse of the waterway"]}
    scores = caption_scores({k: v[0] for k, v in refs.items()}, refs)
    assert set(scores) == {"bleu_1", "bleu_2", "bleu_3", "bleu_4", "rouge_1", "rouge_2", "rouge_l", "cider"}
    assert all(scores[k] == 1.0 for k in scores if k != "cider")
    assert scores["cider"] == pytest.approx(10.0)
