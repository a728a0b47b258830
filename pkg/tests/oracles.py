"""Independent reference implementations used by the tests.

Everything here works directly on Python sets and ``fractions.Fraction`` and
shares no code with the package beyond the data types.
"""

from __future__ import annotations

import itertools
import math
import random
from fractions import Fraction

from cirplan.model import AtomicRetrieval, CandidateSet, Instance, Polarity


# -- instance builders ------------------------------------------------------


def random_instance(
    rng: random.Random,
    pos_families: int,
    levels: tuple[int, ...],
    neg_families: int = 0,
    gallery: int = 40,
    n_gt: int = 3,
    n_tools: int = 2,
    instance_id: str = "fixture",
) -> Instance:
    """Rankings over a small gallery, ground truth over-represented near the top."""
    gt = rng.sample(range(gallery), n_gt)
    pool = []
    k_max = levels[-1]
    for fam in range(pos_families + neg_families):
        polarity = Polarity.POSITIVE if fam < pos_families else Polarity.NEGATIVE
        weights = {i: (3.0 if i in gt and polarity is Polarity.POSITIVE else 1.0) * rng.random() for i in range(gallery)}
        ranking = sorted(range(gallery), key=lambda i: -weights[i])[: rng.randint(0, k_max)]
        tool = f"tool{fam % n_tools}"
        for k in levels:
            pool.append(AtomicRetrieval(len(pool), tool, f"q{fam}", polarity, k, tuple(ranking[:k])))
    return Instance(instance_id, gallery, CandidateSet(gt), tuple(pool))


def make_instance(gt, positives, negatives=(), gallery=None, tools=None) -> Instance:
    """Instance from explicit result lists, one family per retrieval."""
    pool = []
    for n, res in enumerate(positives):
        tool = tools[n] if tools else f"tool{n}"
        pool.append(AtomicRetrieval(len(pool), tool, f"p{n}", Polarity.POSITIVE, max(1, len(res)), tuple(res)))
    for n, res in enumerate(negatives):
        pool.append(AtomicRetrieval(len(pool), f"neg{n}", f"n{n}", Polarity.NEGATIVE, max(1, len(res)), tuple(res)))
    ids = set(gt).union(*map(set, positives), *map(set, negatives))
    size = gallery if gallery is not None else max(ids) + 2
    return Instance("explicit", size, CandidateSet(gt), tuple(pool))


# -- selection ----------------------------------------------------------------


def stage1_value(instance: Instance, selection, w_r, w_p, lam) -> Fraction:
    by_id = {r.id: r for r in instance.pool}
    covered = set()
    tools = set()
    for r in selection:
        covered |= set(by_id[r].ranking)
        tools.add(by_id[r].tool)
    gt = set(instance.ground_truth)
    n_neg = instance.gallery_size - len(gt)
    return (Fraction(w_r) * Fraction(len(covered & gt), len(gt))
            - Fraction(w_p) * Fraction(len(covered - gt), n_neg)
            + Fraction(lam) * len(tools))


def stage1_oracle(instance: Instance, w_r=1, w_p=Fraction(1, 2), lam=Fraction(1, 100)) -> Fraction:
    """Best objective over all selections with at most one member per family."""
    families: dict[tuple, list[int]] = {}
    for r in instance.pool:
        if r.polarity is Polarity.POSITIVE:
            families.setdefault((r.tool, r.query), []).append(r.id)
    options = [[None, *members] for members in families.values()]
    best = None
    for combo in itertools.product(*options):
        sel = [r for r in combo if r is not None]
        v = stage1_value(instance, sel, w_r, w_p, lam)
        if best is None or v > best:
            best = v
    return best


# -- composition --------------------------------------------------------------


def two_clause_final(pos_sets, neg_sets) -> set:
    union = set().union(*pos_sets) if pos_sets else set()
    inter = set.intersection(*map(set, neg_sets)) if neg_sets else set()
    return union - inter


def stage2_oracle(universe, positives, negatives, gt, lam=Fraction(1, 10)):
    """Max of ``tp - lam * fp`` over every non-empty positive subset and every negative subset."""
    universe, gt = set(universe), set(gt)
    pos = [set(p) & universe for p in positives]
    neg = [set(n) & universe for n in negatives]
    best = None
    for pmask in range(1, 2 ** len(pos)):
        psets = [pos[j] for j in range(len(pos)) if pmask >> j & 1]
        for nmask in range(2 ** len(neg)):
            nsets = [neg[j] for j in range(len(neg)) if nmask >> j & 1]
            final = two_clause_final(psets, nsets)
            tp = len(final & gt)
            v = tp - Fraction(lam) * (len(final) - tp)
            if best is None or v > best:
                best = v
    return best


# -- DNF ----------------------------------------------------------------------


def f1(result, gt) -> Fraction:
    result, gt = set(result), set(gt)
    tp = len(result & gt)
    if tp == 0:
        return Fraction(0)
    precision = Fraction(tp, len(result))
    recall = Fraction(tp, len(gt))
    return 2 * precision * recall / (precision + recall)


def dnf_oracle(extensions, gt, budget) -> Fraction:
    best = Fraction(0)
    for size in range(1, budget + 1):
        for combo in itertools.combinations(extensions, size):
            best = max(best, f1(set().union(*combo), gt))
    return best


def clause_extension(universe, literals, sets) -> set:
    """Per-element predicate evaluation of one clause."""
    out = set()
    for i in universe:
        if all((i in sets[r]) == (sign == "+") for r, sign in literals):
            out.add(i)
    return out


# -- metrics ------------------------------------------------------------------


def naive_recall(ranking, gt, k):
    return sum(1 for x in ranking[:k] if x in gt) / len(gt)


def naive_ap(ranking, gt, k):
    score, hits = 0.0, 0
    for n, x in enumerate(ranking[:k]):
        if x in gt:
            hits += 1
            score += hits / (n + 1)
    return score / min(len(gt), k)


def naive_ndcg(ranking, gt, k):
    dcg = 0.0
    for n, x in enumerate(ranking[:k]):
        if x in gt:
            dcg += 1 / math.log(n + 2, 2)
    ideal = sum(1 / math.log(n + 2, 2) for n in range(min(len(gt), k)))
    return dcg / ideal


# -- library ------------------------------------------------------------------


class LinearIndex:
    """Exact cosine top-n over sparse dict vectors; scores equal to 12
    decimals tie by ascending index."""

    def __init__(self, embeddings):
        self.rows = []
        for emb in embeddings:
            e = {j: x for j, x in enumerate(emb) if x}
            self.rows.append((e, math.sqrt(math.fsum(x * x for x in e.values()))))

    def top(self, query_vec, n):
        q = {j: x for j, x in enumerate(query_vec) if x}
        qn = math.sqrt(math.fsum(x * x for x in q.values()))
        scored = []
        for idx, (e, en) in enumerate(self.rows):
            small, big = (q, e) if len(q) < len(e) else (e, q)
            dot = math.fsum(x * big[j] for j, x in small.items() if j in big)
            scored.append((dot / (qn * en), idx))
        scored.sort(key=lambda t: (-round(t[0], 12), t[1]))
        return scored[:n]


def linear_scan(query_vec, embeddings, n):
    return LinearIndex(embeddings).top(query_vec, n)


# -- external LP solver ----------------------------------------------------------


def highs_objective(path) -> float | None:
    import highspy

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(str(path))
    h.run()
    if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
        return None
    return h.getInfo().objective_function_value
