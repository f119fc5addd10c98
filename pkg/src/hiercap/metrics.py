"""Corpus caption metrics computed from scratch: BLEU-1..4, ROUGE-L, CIDEr.

Tokenization is the training pipeline's normalization, so metric and
model vocabularies always agree. METEOR needs external synonym
resources and is reported as null.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter, defaultdict

from .errors import ContractError
from .vocab import normalize_text


def _ngrams(words: list, n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def bleu(candidates: list, references: list, n_max: int = 4) -> list:
    """Corpus-level BLEU-1..BLEU-n_max.

    ``candidates`` is a list of token lists; ``references`` a parallel
    list of lists of token lists. Clipped n-gram precision, geometric
    mean with uniform weights, corpus brevity penalty with
    closest-length effective reference (ties to the shorter). No
    smoothing: a zero precision zeroes BLEU-n for that and higher n.
    """
    if not candidates:
        raise ContractError("bleu needs at least one candidate")
    if len(candidates) != len(references) or any(not r for r in references):
        raise ContractError("every candidate needs at least one reference")
    match = [0] * n_max
    guess = [0] * n_max
    cand_len = 0
    eff_ref_len = 0
    for cand, refs in zip(candidates, references):
        cand_len += len(cand)
        eff_ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, n_max + 1):
            counts = _ngrams(cand, n)
            if not counts:
                continue
            best = Counter()
            for ref in refs:
                for gram, c in _ngrams(ref, n).items():
                    best[gram] = max(best[gram], c)
            guess[n - 1] += sum(counts.values())
            match[n - 1] += sum(min(c, best[gram]) for gram, c in counts.items())
    if cand_len == 0:
        return [0.0] * n_max
    bp = 1.0 if cand_len > eff_ref_len else math.exp(1.0 - eff_ref_len / cand_len)
    out = []
    log_sum = 0.0
    dead = False
    for n in range(1, n_max + 1):
        p = match[n - 1] / guess[n - 1] if guess[n - 1] else 0.0
        if p == 0.0:
            dead = True
        if dead:
            out.append(0.0)
            continue
        log_sum += math.log(p)
        out.append(bp * math.exp(log_sum / n))
    return out


def _lcs_len(a: list, b: list) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list, references: list, beta: float = 1.2) -> float:
    """Longest-common-subsequence F-measure, max over references."""
    if not candidate or not references or any(not r for r in references):
        raise ContractError("rouge_l needs non-empty candidate and references")
    best = 0.0
    b2 = beta * beta
    for ref in references:
        lcs = _lcs_len(candidate, ref)
        if lcs == 0:
            continue
        prec = lcs / len(candidate)
        rec = lcs / len(ref)
        score = ((1 + b2) * prec * rec) / (rec + b2 * prec)
        best = max(best, score)
    return best


def cider(candidates: list, references: list, n_max: int = 4) -> float:
    """Consensus score: mean over n of the average cosine similarity
    between tf-idf n-gram vectors of the candidate and each reference,
    scaled by 10. Document frequency counts each scene's reference set
    once, over the reference corpus only.
    """
    if not candidates or len(candidates) != len(references):
        raise ContractError("cider needs parallel candidates and references")
    corpus = len(references)
    distinct = {tuple(r) for refs in references for r in refs}
    if len(distinct) < 2:
        warnings.warn("degenerate single-document corpus; df falls back to 1")
    df = [defaultdict(int) for _ in range(n_max)]
    for refs in references:
        for n in range(1, n_max + 1):
            grams = set()
            for ref in refs:
                grams.update(_ngrams(ref, n))
            for g in grams:
                df[n - 1][g] += 1

    def tfidf(words, n):
        vec = {}
        for gram, c in _ngrams(words, n).items():
            idf = math.log(corpus / max(1.0, df[n - 1][gram]))
            vec[gram] = c * idf
        norm = math.sqrt(sum(v * v for v in vec.values()))
        return vec, norm

    total = 0.0
    for cand, refs in zip(candidates, references):
        per_n = 0.0
        for n in range(1, n_max + 1):
            cv, cn = tfidf(cand, n)
            sim = 0.0
            for ref in refs:
                rv, rn = tfidf(ref, n)
                if cn == 0.0 or rn == 0.0:
                    continue
                dot = sum(v * rv.get(g, 0.0) for g, v in cv.items())
                sim += dot / (cn * rn)
            per_n += sim / len(refs)
        total += per_n / n_max
    return 10.0 * total / len(candidates)


def score_captions(candidates: list, references: list) -> dict:
    """Full report over raw caption strings.

    Returns the seven-column layout {bleu_1..4, meteor: None, cider,
    rouge_l}; inputs are normalized with the shared tokenizer.
    """
    # an empty generation still gets scored (harshly): placeholder token
    cands = [normalize_text(c) or ["<empty>"] for c in candidates]
    refs = [[normalize_text(r) for r in rs] for rs in references]
    b = bleu(cands, refs)
    r = sum(rouge_l(c, rs) for c, rs in zip(cands, refs)) / len(cands)
    return {
        "bleu_1": b[0], "bleu_2": b[1], "bleu_3": b[2], "bleu_4": b[3],
        "meteor": None,
        "cider": cider(cands, refs),
        "rouge_l": r,
    }
