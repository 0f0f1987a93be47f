"""Slow, direct reference implementations used to cross-check the library.

They deliberately share no code with the package.
"""
import math


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def ranked(scores, excluded):
    """Items by descending score, lower index first on ties, excluded removed."""
    items = [i for i in range(len(scores)) if i not in excluded]
    return sorted(items, key=lambda i: (-scores[i], i))


def metrics_for_user(scores, excluded, holdout, popularity, k):
    top = ranked(scores, excluded)[:k]
    hits = [1 if i in holdout else 0 for i in top]
    if holdout:
        recall = sum(hits) / len(holdout)
        dcg = sum(h / math.log2(r + 2) for r, h in enumerate(hits))
        idcg = sum(1 / math.log2(r + 2) for r in range(min(k, len(holdout))))
        ndcg = dcg / idcg
    else:
        recall = ndcg = 0.0
    arp = sum(popularity[i] for i in top) / len(top)
    return recall, ndcg, arp


def macro_metrics(score_rows, train_rows, holdouts, popularity, k, only_with_holdout=True, exclude_train=True):
    users = [u for u in range(len(holdouts)) if holdouts[u] or not only_with_holdout]
    acc = [0.0, 0.0, 0.0]
    for u in users:
        excl = set(train_rows[u]) if exclude_train else set()
        for n, v in enumerate(metrics_for_user(score_rows[u], excl, set(holdouts[u]), popularity, k)):
            acc[n] += v
    return {"recall": acc[0] / len(users), "ndcg": acc[1] / len(users), "arp": acc[2] / len(users)}


def k_core(pairs, k):
    """Iterative k-core by repeated full scans over a set of distinct pairs."""
    alive = set(pairs)
    while True:
        udeg, ideg = {}, {}
        for u, i in alive:
            udeg[u] = udeg.get(u, 0) + 1
            ideg[i] = ideg.get(i, 0) + 1
        keep = {(u, i) for u, i in alive if udeg[u] >= k and ideg[i] >= k}
        if keep == alive:
            return keep
        alive = keep
