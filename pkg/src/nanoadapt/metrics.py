"""Caption corpus complexity (TGC, CWR) and caption evaluation metrics.

Every metric consumes the output of the single :func:`tokenize` rule.
"""

import json
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations

from .exceptions import ContractError, UndefinedMetricError

_SPLIT = re.compile(r"[^0-9a-z]+")

ENV_VARIABLES = ("waterway", "weather", "lighting", "time_of_day")


def tokenize(text):
    """Lowercase, split on runs of non-alphanumerics, drop empties."""
    return [t for t in _SPLIT.split(text.lower()) if t]


@dataclass
class Caption:
    raw: str
    tokens: list = field(init=False)
    image_id: str = ""
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = tokenize(self.raw)


@dataclass
class Corpus:
    captions: list

    @classmethod
    def from_texts(cls, texts):
        return cls([Caption(t) for t in texts])

    @classmethod
    def from_jsonl(cls, path):
        caps = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ContractError(f"{path}:{lineno}: {exc}") from None
                if "caption" not in obj:
                    raise ContractError(f"{path}:{lineno}: missing 'caption'")
                caps.append(Caption(obj["caption"], image_id=str(obj.get("image_id", "")),
                                    tags=dict(obj.get("tags") or {})))
        return cls(caps)

    def token_lists(self):
        return [c.tokens for c in self.captions]


@dataclass
class NGramTable:
    n: int
    counts: Counter

    @property
    def total(self):
        return sum(self.counts.values())


def ngrams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def ngram_table(token_lists, n):
    """n-gram counts pooled over sequences; n-grams never span two sequences."""
    counts = Counter()
    for toks in token_lists:
        counts.update(ngrams(toks, n))
    return NGramTable(n, counts)


def _token_lists(corpus):
    if isinstance(corpus, Corpus):
        return corpus.token_lists()
    return [tokenize(c) if isinstance(c, str) else list(c) for c in corpus]


# ---------------------------------------------------------------- corpus complexity


def tgc(corpus):
    """Unique trigrams over total trigrams, counted within captions."""
    table = ngram_table(_token_lists(corpus), 3)
    if table.total == 0:
        raise UndefinedMetricError("TGC undefined: corpus has no trigrams")
    return len(table.counts) / table.total


def cwr(corpus, min_len=8):
    """Share of tokens longer than seven characters."""
    tokens = [t for toks in _token_lists(corpus) for t in toks]
    if not tokens:
        raise UndefinedMetricError("CWR undefined: corpus has no tokens")
    return sum(len(t) >= min_len for t in tokens) / len(tokens)


# ---------------------------------------------------------------- BLEU / ROUGE


def _as_tokens(x):
    return tokenize(x) if isinstance(x, str) else list(x)


def bleu_n(candidate, references, n=4, smoothing=False):
    """Sentence BLEU: clipped n-gram precisions (1..n), geometric mean, brevity penalty.

    Without smoothing any zero precision gives 0. An empty candidate scores 0
    and emits a warning.
    """
    cand = _as_tokens(candidate)
    refs = [_as_tokens(r) for r in references]
    if not refs:
        raise UndefinedMetricError("BLEU needs at least one reference")
    if not cand:
        warnings.warn("empty candidate: BLEU is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        matched, total = clipped_matches(cand, refs, k)
        if smoothing and matched == 0:
            matched, total = 1, total + 1
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c = len(cand)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / n)


def clipped_matches(cand, refs, k):
    """(clipped matched k-gram count, candidate k-gram count)."""
    counts = Counter(ngrams(cand, k))
    max_ref = Counter()
    for ref in refs:
        for g, c in Counter(ngrams(ref, k)).items():
            max_ref[g] = max(max_ref[g], c)
    return sum(min(c, max_ref[g]) for g, c in counts.items()), sum(counts.values())


def lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _prf(overlap, n_cand, n_ref):
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return {"precision": p, "recall": r, "f1": f}


def rouge(candidate, reference, variant="L"):
    """ROUGE-1/2 (clipped n-gram overlap) or ROUGE-L (LCS), as P/R/F1."""
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    if not cand or not ref:
        raise UndefinedMetricError("ROUGE undefined for empty input")
    variant = str(variant).upper()
    if variant == "L":
        return _prf(lcs_length(cand, ref), len(cand), len(ref))
    if variant not in ("1", "2"):
        raise ContractError(f"unknown ROUGE variant {variant!r}")
    k = int(variant)
    cc, rc = Counter(ngrams(cand, k)), Counter(ngrams(ref, k))
    overlap = sum((cc & rc).values())
    return _prf(overlap, sum(cc.values()), sum(rc.values()))


# ---------------------------------------------------------------- CIDEr


def document_frequencies(reference_sets, max_n=4):
    """Per n-gram, the number of images whose references contain it."""
    df = Counter()
    for refs in reference_sets:
        seen = set()
        for ref in refs:
            toks = _as_tokens(ref)
            for k in range(1, max_n + 1):
                seen.update(ngrams(toks, k))
        df.update(seen)
    return df


def _tfidf(tokens, k, df, n_docs):
    counts = Counter(ngrams(tokens, k))
    total = sum(counts.values())
    return {g: (c / total) * (math.log((1.0 + n_docs) / (1.0 + df[g])) + 1.0) for g, c in counts.items()}


def _cosine(a, b):
    # exactly rounded sums keep the score independent of n-gram order
    na = math.sqrt(math.fsum(v * v for v in a.values()))
    nb = math.sqrt(math.fsum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = math.fsum(v * b[g] for g, v in a.items() if g in b)
    return dot / (na * nb)


def _mean_vector(vectors):
    keys = {g for v in vectors for g in v}
    return {g: math.fsum(v.get(g, 0.0) for v in vectors) / len(vectors) for g in keys}


def cider(candidates, references, corpus=None, max_n=4, aggregate="per_reference"):
    """Mean CIDEr over images, x10.

    With ``aggregate="per_reference"`` (standard) the TF-IDF cosine between
    the candidate and each reference is averaged over references; with
    ``"mean_vector"`` the candidate is compared once against the mean
    reference vector. Either way the result is then averaged over
    n = 1..max_n. Document frequencies come from ``corpus`` (reference sets),
    defaulting to ``references``; IDF is ``log((1 + D) / (1 + df)) + 1``.
    """
    if aggregate not in ("per_reference", "mean_vector"):
        raise ContractError(f"unknown CIDEr aggregate {aggregate!r}")
    if len(candidates) != len(references):
        raise ContractError("one reference set per candidate is required")
    if not candidates:
        raise UndefinedMetricError("CIDEr needs at least one candidate")
    if any(len(refs) == 0 for refs in references):
        raise UndefinedMetricError("every image needs at least one reference")
    corpus = references if corpus is None else corpus
    df = document_frequencies(corpus, max_n)
    n_docs = len(corpus)
    scores = []
    for cand, refs in zip(candidates, references):
        cand = _as_tokens(cand)
        refs = [_as_tokens(r) for r in refs]
        per_n = []
        for k in range(1, max_n + 1):
            cv = _tfidf(cand, k, df, n_docs)
            rvs = [_tfidf(r, k, df, n_docs) for r in refs]
            if aggregate == "mean_vector":
                per_n.append(_cosine(cv, _mean_vector(rvs)))
            else:
                per_n.append(math.fsum(_cosine(cv, rv) for rv in rvs) / len(rvs))
        scores.append(10.0 * math.fsum(per_n) / max_n)
    return math.fsum(scores) / len(scores)


# ---------------------------------------------------------------- dataset statistics


def corpus_stats(corpus, bin_width=5):
    """Caption-length histogram and environment-tag co-occurrence counts.

    The histogram maps each bin start to a count. The co-occurrence matrix is
    indexed by ``variable=value`` labels; two values of the same variable
    never co-occur, so those cells (and the diagonal) stay zero.
    """
    hist = Counter((len(c.tokens) // bin_width) * bin_width for c in corpus.captions)
    labels = sorted({f"{k}={v}" for c in corpus.captions for k, v in c.tags.items()})
    index = {lab: i for i, lab in enumerate(labels)}
    matrix = [[0] * len(labels) for _ in labels]
    for c in corpus.captions:
        present = sorted(f"{k}={v}" for k, v in c.tags.items())
        for a, b in combinations(present, 2):
            if a.split("=", 1)[0] == b.split("=", 1)[0]:
                continue
            matrix[index[a]][index[b]] += 1
            matrix[index[b]][index[a]] += 1
    return {
        "bin_width": bin_width,
        "length_histogram": {int(k): hist[k] for k in sorted(hist)},
        "labels": labels,
        "env_cooccurrence": matrix,
    }


def load_references(path):
    """JSON-lines {image_id, caption} -> {image_id: [captions...]} in file order."""
    refs = {}
    for cap in Corpus.from_jsonl(path).captions:
        refs.setdefault(cap.image_id, []).append(cap.raw)
    return refs


def caption_scores(predictions, references):
    """Corpus-averaged BLEU-1..4, ROUGE-1/2/L F1 and CIDEr.

    ``predictions`` maps image id to one caption, ``references`` to a list.
    """
    ids = [i for i in predictions if i in references]
    if not ids:
        raise UndefinedMetricError("no prediction has a matching reference")
    cands = [tokenize(predictions[i]) for i in ids]
    refs = [[tokenize(r) for r in references[i]] for i in ids]
    rows = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for n in range(1, 5):
            rows[f"bleu_{n}"] = sum(bleu_n(c, r, n) for c, r in zip(cands, refs)) / len(ids)
    for v in ("1", "2", "L"):
        # multiple references: best F1 per image
        rows[f"rouge_{v.lower()}"] = sum(
            max(rouge(c, r, v)["f1"] for r in rs) if c else 0.0 for c, rs in zip(cands, refs)) / len(ids)
    rows["cider"] = cider(cands, refs)
    return rows
