"""Metric oracles: hand-counted fixtures plus brute-force recomputations."""

import itertools
import math
import random

import pytest

from mvreport.metrics import (DEFAULT_REWARD_WEIGHTS, METEOR_ALPHA, METEOR_BETA,
                              METEOR_GAMMA, ROUGE_BETA, bleu_n, corpus_bleu,
                              evaluate_corpus, lcs_length, meteor_lite,
                              mixed_reward, modified_precision, rouge_l,
                              sentence_scores)


def brute_force_lcs(a, b):
    """Longest common subsequence by enumerating all subsequences of a."""
    best = 0
    for r in range(len(a), best, -1):
        for combo in itertools.combinations(range(len(a)), r):
            sub = [a[i] for i in combo]
            it = iter(b)
            if all(tok in it for tok in sub):
                return r
    return best


class TestBleu:
    def test_identity_is_one_for_all_n(self):
        sent = "opacity seen in apex . no acute findings .".split()
        for n in range(1, 5):
            assert bleu_n(sent, [sent], n) == pytest.approx(1.0)

    def test_clipped_unigram_precision(self):
        clipped, total = modified_precision(["a", "a", "a"], [["a", "b"]], 1)
        assert (clipped, total) == (1, 3)
        assert clipped / total == pytest.approx(1 / 3)

    def test_disjoint_vocabulary_scores_zero(self):
        assert bleu_n(["x", "y"], [["a", "b"]], 4) == 0.0

    def test_empty_candidate(self):
        assert bleu_n([], [["a"]], 1) == 0.0

    def test_bleu1_hand_value(self):
        # 2 of 3 unigrams match, candidate shorter than reference
        cand, ref = ["a", "b", "z"], ["a", "b", "c", "d"]
        expected = math.exp(1 - 4 / 3) * (2 / 3)
        assert bleu_n(cand, [ref], 1) == pytest.approx(expected)

    def test_smoothing_only_above_unigram(self):
        # shared unigrams but no shared bigram: smoothed BLEU-2 stays positive
        cand, ref = ["a", "c", "b"], ["a", "b", "c"]
        assert bleu_n(cand, [ref], 2) > 0
        assert bleu_n(cand, [ref], 2, smooth=False) == 0.0

    def test_corpus_bleu_matches_count_table_rederivation(self):
        rng = random.Random(0)
        vocab = list("abcdefg")
        cands = [[rng.choice(vocab) for _ in range(rng.randint(3, 9))] for _ in range(5)]
        refs = [[[rng.choice(vocab) for _ in range(rng.randint(3, 9))]] for _ in range(5)]
        for n in range(1, 5):
            # independent rederivation straight from pooled n-gram count tables
            log_sum, ok = 0.0, True
            for i in range(1, n + 1):
                clipped = total = 0
                for cand, rs in zip(cands, refs):
                    grams = {}
                    for j in range(len(cand) - i + 1):
                        grams[tuple(cand[j:j + i])] = grams.get(tuple(cand[j:j + i]), 0) + 1
                    ref_grams = {}
                    for ref in rs:
                        counts = {}
                        for j in range(len(ref) - i + 1):
                            counts[tuple(ref[j:j + i])] = counts.get(tuple(ref[j:j + i]), 0) + 1
                        for g, c in counts.items():
                            ref_grams[g] = max(ref_grams.get(g, 0), c)
                    clipped += sum(min(c, ref_grams.get(g, 0)) for g, c in grams.items())
                    total += sum(grams.values())
                if clipped == 0:
                    ok = False
                    break
                log_sum += math.log(clipped / total) / n
            c_len = sum(len(c) for c in cands)
            r_len = sum(min((abs(len(r) - len(c)), len(r)) for r in rs)[1]
                        for c, rs in zip(cands, refs))
            if not ok:
                expected = 0.0
            else:
                bp = 1.0 if c_len >= r_len else math.exp(1 - r_len / c_len)
                expected = bp * math.exp(log_sum)
            assert corpus_bleu(cands, refs, n) == pytest.approx(expected)


class TestRougeL:
    def test_identity(self):
        sent = "a b c d".split()
        assert rouge_l(sent, [sent]) == pytest.approx(1.0)

    def test_hand_lcs_fixture(self):
        # LCS("a c", "a b c") = 2, P = 1, R = 2/3
        p, r, b = 1.0, 2 / 3, ROUGE_BETA
        expected = (1 + b * b) * p * r / (r + b * b * p)
        assert rouge_l(["a", "c"], [["a", "b", "c"]]) == pytest.approx(expected)

    def test_empty_candidate(self):
        assert rouge_l([], [["a"]]) == 0.0

    def test_matches_brute_force_subsequence_enumeration(self):
        rng = random.Random(1)
        for _ in range(300):
            a = [rng.choice("abc") for _ in range(rng.randint(0, 8))]
            b = [rng.choice("abc") for _ in range(rng.randint(0, 8))]
            assert lcs_length(a, b) == brute_force_lcs(a, b)

    def test_multi_reference_takes_max(self):
        cand = ["a", "b"]
        weak, strong = ["x", "y"], ["a", "b"]
        assert rouge_l(cand, [weak, strong]) == pytest.approx(1.0)


class TestMeteorLite:
    def test_identity_hand_value(self):
        sent = ["a", "b", "c"]
        expected = 1.0 * (1 - METEOR_GAMMA * (1 / 3) ** METEOR_BETA)
        assert meteor_lite(sent, [sent]) == pytest.approx(expected)

    def test_no_overlap(self):
        assert meteor_lite(["x"], [["a", "b"]]) == 0.0

    def test_reordering_penalized(self):
        ref = ["a", "b", "c", "d"]
        assert meteor_lite(list(reversed(ref)), [ref]) < meteor_lite(ref, [ref])

    def test_hand_closed_partial_match(self):
        # cand "a b x", ref "a b c": m=2 in one chunk, P=2/3, R=2/3
        p = r = 2 / 3
        f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
        expected = f_mean * (1 - METEOR_GAMMA * (1 / 2) ** METEOR_BETA)
        assert meteor_lite(["a", "b", "x"], [["a", "b", "c"]]) == pytest.approx(expected)


class TestMixedReward:
    def test_identity_reward_combines_per_metric_identities(self):
        sent = "opacity seen in apex .".split()
        per_metric = [bleu_n(sent, [sent], n) for n in range(1, 5)]
        per_metric += [meteor_lite(sent, [sent]), rouge_l(sent, [sent])]
        expected = sum(w * s for w, s in zip(DEFAULT_REWARD_WEIGHTS, per_metric))
        assert mixed_reward(sent, sent) == pytest.approx(expected)
        # BLEU and ROUGE hit 1 exactly at identity
        assert expected == pytest.approx(2 + 2 + 1 + 1 + 2 * meteor_lite(sent, [sent]) + 2)

    def test_zero_weights(self):
        assert mixed_reward(["a"], ["a"], weights=(0,) * 6) == 0.0

    def test_weight_scaling_linearity(self):
        cand, ref = ["a", "b", "c"], ["a", "c", "b"]
        base = mixed_reward(cand, ref)
        scaled = mixed_reward(cand, ref, weights=tuple(3 * w for w in DEFAULT_REWARD_WEIGHTS))
        assert scaled == pytest.approx(3 * base)

    def test_dot_product_on_random_fixtures(self):
        rng = random.Random(2)
        for _ in range(20):
            cand = [rng.choice("abcde") for _ in range(rng.randint(1, 10))]
            ref = [rng.choice("abcde") for _ in range(rng.randint(1, 10))]
            expected = sum(w * s for w, s in
                           zip(DEFAULT_REWARD_WEIGHTS, sentence_scores(cand, [ref])))
            assert mixed_reward(cand, ref) == pytest.approx(expected)
            assert 0.0 <= mixed_reward(cand, ref) <= sum(DEFAULT_REWARD_WEIGHTS)


class TestInvariances:
    def test_scores_in_unit_interval(self):
        rng = random.Random(3)
        for _ in range(200):
            cand = [rng.choice("abcd") for _ in range(rng.randint(0, 12))]
            ref = [rng.choice("abcd") for _ in range(rng.randint(1, 12))]
            for s in sentence_scores(cand, [ref]):
                assert 0.0 <= s <= 1.0

    def test_token_bijection_invariance(self):
        rng = random.Random(4)
        mapping = {"a": "q", "b": "r", "c": "s", "d": "t"}
        for _ in range(50):
            cand = [rng.choice("abcd") for _ in range(rng.randint(1, 10))]
            ref = [rng.choice("abcd") for _ in range(rng.randint(1, 10))]
            mapped = sentence_scores([mapping[t] for t in cand], [[mapping[t] for t in ref]])
            assert sentence_scores(cand, [ref]) == pytest.approx(mapped)

    def test_corpus_report_fields_in_range(self):
        cands = [["a", "b"], ["c"], ["a", "c", "d"]]
        refs = [["a", "b"], ["c", "d"], ["a", "b", "c", "d"]]
        report = evaluate_corpus(cands, refs)
        for value in report.as_row():
            assert 0.0 <= value <= 1.0
