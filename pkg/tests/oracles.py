"""Exhaustive reference scorers written without the package's helpers.

They loop over every candidate in plain Python with exact rational
arithmetic and apply the same tie rules, so any disagreement points at
the vectorised implementation.
"""

from fractions import Fraction


def occurrences(tokens):
    t = len(tokens)
    return [j for j in range(1, t) if tokens[j - 1] == tokens[t - 1]]


def attention_choice(store, candidates, heads, agg, query):
    best, best_score = None, None
    for j in candidates:
        vals = [float(store.attn_row(h.layer, h.head, query)[j - 1]) for h in heads]
        score = max(vals) if agg == "max" else sum(Fraction(v) for v in vals)
        if best_score is None or score > best_score:
            best, best_score = j, score
    return best


def _mean_vec(store, layer, end, m):
    lo = max(1, end - m + 1)
    vecs = [[Fraction(float(x)) for x in store.hidden(layer, p)] for p in range(lo, end + 1)]
    return [sum(col) / len(vecs) for col in zip(*vecs)]


def _signed_sq(x):
    return x * x if x >= 0 else -x * x


def _cos_key(a, q):
    """sign(cos) * cos**2 as an exact rational; monotone in the cosine."""
    aa = sum(x * x for x in a)
    qq = sum(x * x for x in q)
    if aa == 0 or qq == 0:
        return None
    dot = sum(x * y for x, y in zip(a, q))
    return _signed_sq(dot) / (aa * qq)


def hidden_choice(store, candidates, layer, theta, m, query):
    """Exact-arithmetic cosine ranking: no rounding can split a true tie."""
    q = _mean_vec(store, layer, query, m)
    floor = None if theta is None else _signed_sq(Fraction(theta))
    best, best_key = None, None
    for j in candidates:
        if j < 2:
            continue
        key = _cos_key(_mean_vec(store, layer, j - 1, m), q)
        if key is None or (floor is not None and key <= floor):
            continue
        if best_key is None or key > best_key:
            best, best_key = j, key
    return best


def ngram_choice(tokens, ngram_max):
    t = len(tokens)
    best, best_len = None, 0
    for end in range(1, t):
        n = 0
        while n < ngram_max and n < end and tokens[end - 1 - n] == tokens[t - 1 - n]:
            n += 1
        if n > 0 and n >= best_len:
            best, best_len = end, n
    return best


def copy_source(ctx, generated, t):
    target = generated[t - 1]
    lengths = {}
    for r in range(1, len(ctx) + 1):
        if ctx[r - 1] != target:
            continue
        n = 0
        while r + n < len(ctx) and t + n < len(generated) and ctx[r + n] == generated[t + n]:
            n += 1
        lengths[r] = n
    if not lengths:
        return None
    top = max(lengths.values())
    return min(r for r, n in lengths.items() if n == top)
