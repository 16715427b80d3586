"""Independent reference implementations used only by the tests.

They are deliberately naive (recursion, enumeration, loops) so they share no
code paths with the package.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def levenshtein_recursive(a, b) -> int:
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def levenshtein_plain_recursion(a, b) -> int:
    """Exponential textbook recursion, no memo; only for very short inputs."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(levenshtein_plain_recursion(a[1:], b) + 1,
               levenshtein_plain_recursion(a, b[1:]) + 1,
               levenshtein_plain_recursion(a[1:], b[1:]) + (a[0] != b[0]))


def wilcoxon_enumeration(diffs):
    """Exact two-sided p by listing all 2^n sign assignments of the average ranks."""
    d = [x for x in diffs if x != 0]
    n = len(d)
    if n == 0:
        return 0.0, 1.0
    absd = [abs(x) for x in d]
    order = sorted(range(n), key=lambda i: absd[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and absd[order[j + 1]] == absd[order[i]]:
            j += 1
        avg = (i + j + 2) / 2
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    w_obs = sum(r for r, x in zip(ranks, d) if x > 0)
    ge = le = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        ge += w >= w_obs - 1e-9
        le += w <= w_obs + 1e-9
    total = 2 ** n
    return w_obs, min(1.0, 2 * min(ge, le) / total)


def macro_f1_loops(pred, true) -> float:
    classes = sorted(set(pred) | set(true))
    scores = []
    for c in classes:
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, true) if p != c and t == c)
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(scores) / len(scores)


def mean_pop_std(values):
    n = len(values)
    mean = sum(values) / n
    return mean, math.sqrt(sum((v - mean) ** 2 for v in values) / n)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def lstm_reference_step(params, cfg, x, hs, cs, elapsed_norm=0.0):
    """Scalar-loop LSTM step written from the gate equations, one unit at a time."""
    H = cfg.hidden_size
    new_h, new_c = [], []
    inp = list(x)
    for layer in range(cfg.num_recurrent_layers):
        W = params[f"lstm{layer}.W"]
        b = params[f"lstm{layer}.b"]
        z = inp + list(hs[layer])
        h_out, c_out = [], []
        for u in range(H):
            def pre(row):
                return b[row] + sum(W[row, k] * z[k] for k in range(len(z)))
            i = sigmoid(pre(u))
            f = sigmoid(pre(H + u))
            g = math.tanh(pre(2 * H + u))
            o = sigmoid(pre(3 * H + u))
            c = f * cs[layer][u] + i * g
            c_out.append(c)
            h_out.append(o * math.tanh(c))
        new_h.append(h_out)
        new_c.append(c_out)
        inp = h_out
    top = inp
    logits = [params["step.b"][k] + sum(params["step.W"][k, j] * top[j] for j in range(H))
              for k in range(cfg.num_steps)]
    mx = max(logits)
    e = [math.exp(v - mx) for v in logits]
    probs = [v / sum(e) for v in e]
    head = top + ([elapsed_norm] if cfg.elapsed_at_output else [])
    rsd = params["rsd.b"][0] + sum(params["rsd.W"][0, j] * head[j] for j in range(len(head)))
    return np.array(probs), rsd, new_h, new_c


def edit_distance_all_alignments(a, b) -> int:
    """Edit distance by searching all operation scripts breadth-first (tiny inputs only)."""
    from collections import deque

    a, b = tuple(a), tuple(b)
    seen = {a: 0}
    q = deque([a])
    alphabet = set(a) | set(b)
    while q:
        s = q.popleft()
        if s == b:
            return seen[s]
        nxt = []
        for i in range(len(s) + 1):
            for c in alphabet:
                nxt.append(s[:i] + (c,) + s[i:])
        for i in range(len(s)):
            nxt.append(s[:i] + s[i + 1:])
            for c in alphabet:
                nxt.append(s[:i] + (c,) + s[i + 1:])
        for t in nxt:
            if t not in seen and len(t) <= max(len(a), len(b)) + 1:
                seen[t] = seen[s] + 1
                q.append(t)
    raise AssertionError("unreachable")
