"""Shared test utilities: synthetic rating logs and acceptance reporting."""
import numpy as np

ACCEPTANCE_LINES: list[str] = []


def record(number, title, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
    if detail:
        line += f" -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def rating_log(n_users=150, n_items=120, per_user=45, seed=0, header=False, sep="\t"):
    """A text rating log with string keys, ratings 1..5 and timestamps.

    Items follow a Zipf-like preference so popularity is skewed, like a
    real catalog.
    """
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, n_items + 1) ** 0.8
    weights /= weights.sum()
    lines = ["user,item,rating,ts".replace(",", sep)] if header else []
    for u in range(n_users):
        items = rng.choice(n_items, size=per_user, replace=False, p=weights)
        for i in items:
            rating = int(rng.integers(1, 6))
            lines.append(sep.join([f"u{u:04d}", f"item-{i}", str(rating), str(int(rng.integers(1e9, 2e9)))]))
    return "\n".join(lines) + "\n"
