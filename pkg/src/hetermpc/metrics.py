"""Corpus-level BLEU and ROUGE-L.

BLEU pools clipped n-gram counts over the whole corpus (the convention of
the widely used captioning evaluation package): geometric mean of modified
precisions for orders 1..max_n with uniform weights, no smoothing (any zero
precision gives score 0), brevity penalty exp(1 - ref_len/cand_len) applied
when the total candidate length is below the total reference length.

ROUGE-L is the mean over pairs of the LCS F-measure with beta = 1.2:
F = (1 + b^2) P R / (R + b^2 P), P = LCS/|cand|, R = LCS/|ref|.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass

ROUGE_BETA = 1.2


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rougeL: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_pairs(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(
            f"{len(candidates)} candidates vs {len(references)} references"
        )
    if not candidates:
        raise ValueError("empty candidate list")


def bleu(candidates, references, max_n: int = 4) -> float:
    """Corpus-level BLEU over token lists, one reference per candidate."""
    if not 1 <= max_n <= 4:
        raise ValueError(f"max_n must be in 1..4, got {max_n}")
    _check_pairs(candidates, references)
    matched = [0] * max_n
    total = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cgrams = _ngrams(cand, n)
            rgrams = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, rgrams[g]) for g, c in cgrams.items())
            total[n - 1] += max(0, len(cand) - n + 1)
    if cand_len == 0:
        return 0.0
    log_prec = 0.0
    for n in range(max_n):
        if total[n] == 0 or matched[n] == 0:
            return 0.0
        log_prec += math.log(matched[n] / total[n]) / max_n
    bp = math.exp(1.0 - ref_len / cand_len) if cand_len < ref_len else 1.0
    return bp * math.exp(log_prec)


def lcs_length(a, b) -> int:
    """Length of the longest common subsequence (quadratic DP)."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidates, references) -> float:
    """Mean LCS F-measure (beta = 1.2) over candidate/reference pairs."""
    _check_pairs(candidates, references)
    scores = []
    b2 = ROUGE_BETA * ROUGE_BETA
    for cand, ref in zip(candidates, references):
        lcs = lcs_length(cand, ref)
        if lcs == 0 or not cand or not ref:
            scores.append(0.0)
            continue
        p = lcs / len(cand)
        r = lcs / len(ref)
        scores.append((1 + b2) * p * r / (r + b2 * p))
    return sum(scores) / len(scores)


def evaluate(candidates, references) -> EvalReport:
    """All BLEU orders plus ROUGE-L in one report (scores as fractions)."""
    return EvalReport(
        bleu1=bleu(candidates, references, 1),
        bleu2=bleu(candidates, references, 2),
        bleu3=bleu(candidates, references, 3),
        bleu4=bleu(candidates, references, 4),
        rougeL=rouge_l(candidates, references),
        n_samples=len(candidates),
    )
