"""Independent reference implementations used by the tests.

Each oracle is written the slow, obvious way and shares no code with the package.
"""

import math

import numpy as np


def naive_glcm(q, dx, dy, g):
    """Double loop over every pixel; pairs whose partner falls off the map are skipped."""
    h, w = len(q), len(q[0])
    m = [[0] * g for _ in range(g)]
    for y in range(h):
        for x in range(w):
            x2, y2 = x + dx, y + dy
            if 0 <= x2 < w and 0 <= y2 < h:
                m[q[y][x]][q[y2][x2]] += 1
    return np.array(m, dtype=np.int64)


def grid_by_enumeration(ct, img, stride):
    """Every centre on the stride lattice whose centre row chord admits the window,
    found by scanning all lattice positions rather than solving for j."""
    r = ct / 2
    half = img // 2
    pts = set()
    for y in range(half, ct - half + 1, stride):
        hp = abs(y - r)
        if hp > r:
            continue
        w = 2 * math.floor(math.sqrt(r * r - hp * hp))
        for x in range(0, ct + 1):
            if (x - ct // 2) % stride:
                continue
            if 2 * abs(x - ct // 2) <= w - img:
                pts.add((x, y))
    return pts


def inside_circle(x, y, ct):
    r = ct / 2
    return (x - r) ** 2 + (y - r) ** 2 <= r * r


def window_in_frame(x, y, img, ct):
    half = img // 2
    return x - half >= 0 and y - half >= 0 and x + half <= ct and y + half <= ct


def dct_matrix(n):
    """Orthonormal DCT-II basis as an explicit n x n matrix."""
    c = np.zeros((n, n))
    for k in range(n):
        a = math.sqrt(1 / n) if k == 0 else math.sqrt(2 / n)
        for i in range(n):
            c[k, i] = a * math.cos(math.pi * (2 * i + 1) * k / (2 * n))
    return c


def any_window_at_least(flags, m, k, must_contain=None):
    """True when some m-window (optionally containing index ``must_contain``) has >= k positives."""
    n = len(flags)
    for s in range(0, n - m + 1):
        if must_contain is not None and not s <= must_contain < s + m:
            continue
        if sum(1 for v in flags[s:s + m] if v) >= k:
            return True
    return False


def fp_areas_bruteforce(flags, m, k):
    """Mark every index covered by a qualifying window or run, then count connected
    stretches of marks whose underlying qualifying spans overlap."""
    n = len(flags)
    spans = []
    for s in range(0, n - m + 1):
        if sum(1 for v in flags[s:s + m] if v) >= k:
            spans.append((s, s + m))
    i = 0
    while i < n:
        if flags[i]:
            j = i
            while j < n and flags[j]:
                j += 1
            if j - i >= k:
                spans.append((i, j))
            i = j
        else:
            i += 1
    # union-find over spans that share at least one index
    parent = list(range(len(spans)))

    def find(a):
        while parent[a] != a:
            a = parent[a]
        return a

    for a in range(len(spans)):
        for b in range(a + 1, len(spans)):
            if spans[a][0] < spans[b][1] and spans[b][0] < spans[a][1]:
                parent[find(a)] = find(b)
    return len({find(a) for a in range(len(spans))})


def central_difference(f, x, eps):
    """Gradient of scalar f at array x by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * eps)
    return g
