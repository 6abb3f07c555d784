"""Text-overlap metrics implemented from scratch, plus the mixed RL reward.

All functions operate on token sequences (lists of strings).  Sentence-level
BLEU applies add-one smoothing to the n >= 2 precisions so short candidates
still earn graded rewards; corpus-level BLEU aggregates raw counts without
smoothing.  METEOR is the exact-match variant ("METEOR-lite"): unigram
alignment, recall-weighted harmonic mean (9:1), and a fragmentation penalty of
0.5 * (chunks / matches) ** 3.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

DEFAULT_REWARD_WEIGHTS = (2.0, 2.0, 1.0, 1.0, 2.0, 2.0)
ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0

METRIC_HEADERS = ("B-1", "B-2", "B-3", "B-4", "ME", "RO")


@dataclass
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float

    def as_row(self) -> list[float]:
        return [self.bleu1, self.bleu2, self.bleu3, self.bleu4, self.meteor, self.rouge_l]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(METRIC_HEADERS, self.as_row()))


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(candidate: list[str], references: list[list[str]], n: int) -> tuple[int, int]:
    """Clipped n-gram matches and total candidate n-grams."""
    cand_counts = _ngram_counts(candidate, n)
    if not cand_counts:
        return 0, 0
    max_ref: Counter = Counter()
    for ref in references:
        for gram, count in _ngram_counts(ref, n).items():
            max_ref[gram] = max(max_ref[gram], count)
    clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
    return clipped, sum(cand_counts.values())


def _closest_ref_len(cand_len: int, references: list[list[str]]) -> int:
    return min((abs(len(r) - cand_len), len(r)) for r in references)[1]


def _brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    if cand_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / cand_len)


def bleu_n(candidate: list[str], references: list[list[str]], n: int, smooth: bool = True) -> float:
    """Sentence-level BLEU-n: geometric mean of modified 1..n-gram precisions
    times the brevity penalty."""
    if not 1 <= n <= 4:
        raise ValueError(f"n must be in 1..4, got {n}")
    if not candidate:
        return 0.0
    log_sum = 0.0
    for i in range(1, n + 1):
        clipped, total = modified_precision(candidate, references, i)
        if i == 1 or not smooth:
            if clipped == 0:
                return 0.0
            p = clipped / total
        else:
            p = (clipped + 1) / (total + 1) if total > 0 else 1.0
        log_sum += math.log(p) / n
    bp = _brevity_penalty(len(candidate), _closest_ref_len(len(candidate), references))
    return bp * math.exp(log_sum)


def corpus_bleu(candidates: list[list[str]], references: list[list[list[str]]], n: int) -> float:
    """Corpus-level BLEU-n from pooled raw n-gram count tables (no smoothing)."""
    if not 1 <= n <= 4:
        raise ValueError(f"n must be in 1..4, got {n}")
    clipped = [0] * n
    totals = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        for i in range(1, n + 1):
            c, t = modified_precision(cand, refs, i)
            clipped[i - 1] += c
            totals[i - 1] += t
        cand_len += len(cand)
        if refs:
            ref_len += _closest_ref_len(len(cand), refs)
    if any(t == 0 or c == 0 for c, t in zip(clipped, totals)):
        return 0.0
    log_sum = sum(math.log(c / t) for c, t in zip(clipped, totals)) / n
    return _brevity_penalty(cand_len, ref_len) * math.exp(log_sum)


def lcs_length(a: list[str], b: list[str]) -> int:
    """Classic O(len(a) * len(b)) longest-common-subsequence table."""
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], references: list[list[str]], beta: float = ROUGE_BETA) -> float:
    """LCS F-measure, max over references."""
    if not candidate:
        return 0.0
    best = 0.0
    for ref in references:
        if not ref:
            continue
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p = lcs / len(candidate)
        r = lcs / len(ref)
        best = max(best, (1 + beta**2) * p * r / (r + beta**2 * p))
    return best


def _align_unigrams(candidate: list[str], reference: list[str]) -> list[tuple[int, int]]:
    """Exact-match alignment of candidate positions to reference positions.

    Greedy left-to-right: prefer the reference slot that continues the current
    chunk, otherwise take the leftmost unused slot.
    """
    slots: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        slots.setdefault(tok, []).append(j)
    used: set[int] = set()
    pairs: list[tuple[int, int]] = []
    prev_ref = None
    for i, tok in enumerate(candidate):
        free = [j for j in slots.get(tok, []) if j not in used]
        if not free:
            continue
        if prev_ref is not None and prev_ref + 1 in free:
            j = prev_ref + 1
        else:
            j = free[0]
        used.add(j)
        pairs.append((i, j))
        prev_ref = j
    return pairs


def _chunk_count(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(candidate: list[str], references: list[list[str]]) -> float:
    """Exact-match METEOR: F-mean weighted toward recall, chunk penalty."""
    if not candidate:
        return 0.0
    best = 0.0
    for ref in references:
        if not ref:
            continue
        pairs = _align_unigrams(candidate, ref)
        m = len(pairs)
        if m == 0:
            continue
        p = m / len(candidate)
        r = m / len(ref)
        f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
        penalty = METEOR_GAMMA * (_chunk_count(pairs) / m) ** METEOR_BETA
        best = max(best, f_mean * (1 - penalty))
    return best


def sentence_scores(candidate: list[str], references: list[list[str]]) -> list[float]:
    """The six per-sentence scores in table order: B-1..B-4, METEOR, ROUGE-L."""
    return [
        bleu_n(candidate, references, 1),
        bleu_n(candidate, references, 2),
        bleu_n(candidate, references, 3),
        bleu_n(candidate, references, 4),
        meteor_lite(candidate, references),
        rouge_l(candidate, references),
    ]


def mixed_reward(candidate: list[str], reference: list[str],
                 weights=DEFAULT_REWARD_WEIGHTS) -> float:
    """Weighted sum of the six sentence-level scores against one reference."""
    weights = tuple(weights)
    if len(weights) != 6:
        raise ValueError(f"expected 6 weights, got {len(weights)}")
    scores = sentence_scores(candidate, [reference])
    return sum(w * s for w, s in zip(weights, scores))


def evaluate_corpus(candidates: list[list[str]], references: list[list[str]]) -> MetricReport:
    """Corpus MetricReport: pooled BLEU, mean METEOR and ROUGE-L."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references must be aligned")
    if not candidates:
        raise ValueError("cannot score an empty corpus")
    refs_wrapped = [[r] for r in references]
    n = len(candidates)
    return MetricReport(
        bleu1=corpus_bleu(candidates, refs_wrapped, 1),
        bleu2=corpus_bleu(candidates, refs_wrapped, 2),
        bleu3=corpus_bleu(candidates, refs_wrapped, 3),
        bleu4=corpus_bleu(candidates, refs_wrapped, 4),
        meteor=sum(meteor_lite(c, r) for c, r in zip(candidates, refs_wrapped)) / n,
        rouge_l=sum(rouge_l(c, r) for c, r in zip(candidates, refs_wrapped)) / n,
    )
