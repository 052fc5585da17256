"""Brute-force reference implementations used to check metrics and cost models.

Every statistic is recomputed by direct enumeration (positional scans,
subsequence enumeration, dense vectors over an explicit n-gram vocabulary).
Only the final closed-form score expressions are shared with the library,
so matching integer statistics must give identical floats.
"""

import math
from itertools import combinations

from nanoadapt.tensor import SplitMix64

WORDS = ["a", "boat", "buoy", "near", "the", "harbour", "waterway", "lighthouse", "of", "cargo"]


def tokenize(text):
    out, cur = [], ""
    for ch in text.lower():
        if ("a" <= ch <= "z") or ("0" <= ch <= "9"):
            cur += ch
        elif cur:
            out.append(cur)
            cur = ""
    if cur:
        out.append(cur)
    return out


def grams(tokens, n):
    return [tuple(tokens[i + j] for j in range(n)) for i in range(len(tokens) - n + 1)]


def occurrences(seq, item):
    return sum(1 for x in seq if x == item)


def distinct(seq):
    out = []
    for x in seq:
        if x not in out:
            out.append(x)
    return out


def tgc(captions):
    all_tri = [g for c in captions for g in grams(c, 3)]
    return len(distinct(all_tri)) / len(all_tri)


def cwr(captions):
    toks = [t for c in captions for t in c]
    return sum(1 for t in toks if len(t) > 7) / len(toks)


def bleu(cand, refs, n):
    log_sum = 0.0
    for k in range(1, n + 1):
        cg = grams(cand, k)
        matched = 0
        for g in distinct(cg):
            matched += min(occurrences(cg, g), max(occurrences(grams(r, k), g) for r in refs))
        if matched == 0 or not cg:
            return 0.0
        log_sum += math.log(matched / len(cg))
    c = len(cand)
    best = None
    for r in refs:
        key = (abs(len(r) - c), len(r))
        if best is None or key < best:
            best = key
    r = best[1]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / n)


def _is_subsequence(sub, seq):
    i = 0
    for x in seq:
        if i < len(sub) and sub[i] == x:
            i += 1
    return i == len(sub)


def lcs(a, b):
    for size in range(len(a), 0, -1):
        for idx in combinations(range(len(a)), size):
            if _is_subsequence([a[i] for i in idx], b):
                return size
    return 0


def _f1(overlap, nc, nr):
    p = overlap / nc if nc else 0.0
    r = overlap / nr if nr else 0.0
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def rouge_f1(cand, ref, variant):
    if variant == "L":
        return _f1(lcs(cand, ref), len(cand), len(ref))
    k = int(variant)
    cg, rg = grams(cand, k), grams(ref, k)
    overlap = sum(min(occurrences(cg, g), occurrences(rg, g)) for g in distinct(cg))
    return _f1(overlap, len(cg), len(rg))


def cider(cands, ref_sets, max_n=4):
    n_docs = len(ref_sets)
    scores = []
    for cand, refs in zip(cands, ref_sets):
        per_n = []
        for k in range(1, max_n + 1):
            vocab = sorted({g for s in ref_sets for r in s for g in grams(r, k)} | set(grams(cand, k)))

            def df(g):
                return sum(1 for s in ref_sets if any(g in grams(r, k) for r in s))

            def vec(tokens):
                gs = grams(tokens, k)
                return [(occurrences(gs, g) / len(gs)) * (math.log((1.0 + n_docs) / (1.0 + df(g))) + 1.0)
                        if occurrences(gs, g) else 0.0 for g in vocab]

            cv = vec(cand)
            cos = []
            for r in refs:
                rv = vec(r)
                na = math.sqrt(math.fsum(x * x for x in cv))
                nb = math.sqrt(math.fsum(x * x for x in rv))
                cos.append(0.0 if na == 0.0 or nb == 0.0 else math.fsum(x * y for x, y in zip(cv, rv)) / (na * nb))
            per_n.append(math.fsum(cos) / len(cos))
        scores.append(10.0 * math.fsum(per_n) / max_n)
    return math.fsum(scores) / len(scores)


def micro_corpus(seed):
    """Seeded corpus: 1-4 images, 1-3 references each, plus one candidate per image."""
    rng = SplitMix64(seed)
    vocab = WORDS[: rng.integers(3, len(WORDS) + 1)]

    def sentence():
        return [rng.choice(vocab) for _ in range(rng.integers(1, 13))]

    images = rng.integers(1, 5)
    refs = [[sentence() for _ in range(rng.integers(1, 4))] for _ in range(images)]
    cands = [sentence() for _ in range(images)]
    return cands, refs


# ---------------------------------------------------------------- cost hand sums


def _bin_total(size, out):
    """Input elements touched by adaptive pooling along one axis (bins may overlap)."""
    return sum(math.ceil((i + 1) * size / out) - math.floor(i * size / out) for i in range(out))


def hand_nta_flops(h, w, d=64, dl=96, n_side=12, heads=4, k=3):
    N, n, dh = h * w, n_side * n_side, d // heads
    ho, wo = h // 2, w // 2
    stem = 5 * N * d + 2 * N * d * 3 * d + 3 * N * d
    pool = heads * dh * (_bin_total(h, n_side) * _bin_total(w, n_side) + n)
    attn = 4 * heads * 2 * N * n * dh + 2 * heads * N * n + 2 * heads * 5 * N * n
    gdc = 2 * d * N * k * k + d * N + 2 * 5 * d * N + d * N
    resid = N * d
    down = 2 * dl * ho * wo * d * 4 + dl * ho * wo + 5 * ho * wo * dl
    rpool = d * (h * w + ho * wo)
    rconv = 2 * dl * ho * wo * d + dl * ho * wo
    return stem + pool + attn + gdc + resid + down + rpool + rconv + ho * wo * dl


def hand_vanilla_flops(h, w, d=64, dl=96, heads=4):
    N, dh = h * w, d // heads
    ho, wo = h // 2, w // 2
    stem = 5 * N * d + 2 * N * d * 3 * d + 3 * N * d
    attn = heads * (2 * N * dh * N + N * N + 5 * N * N + 2 * N * N * dh)
    out = 2 * N * d * d + N * d
    down = 2 * dl * ho * wo * d * 4 + dl * ho * wo + 5 * ho * wo * dl
    rpool = d * (h * w + ho * wo)
    rconv = 2 * dl * ho * wo * d + dl * ho * wo
    return stem + attn + out + N * d + down + rpool + rconv + ho * wo * dl
