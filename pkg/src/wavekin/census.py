"""Exact-arithmetic census of lattice resonances.

Modes are integer pairs ``(i, j)`` standing for ``(i/N, j/N)``. Every exact
test clears denominators and runs in integers; floats are used only to rank
candidates and for histograms.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .grid import FrequencyGrid

MAX_TUPLES = 10 ** 9


class BudgetExceeded(RuntimeError):
    pass


class StructureMismatch(AssertionError):
    pass


@dataclass(frozen=True)
class ExactEta:
    """``u + v sqrt(d)`` with rational ``u, v`` and square-free ``d >= 2`` (``v = 0``: rational)."""

    u: Fraction
    v: Fraction = Fraction(0)
    d: int = 0

    @property
    def is_rational(self) -> bool:
        return self.v == 0

    def __float__(self):
        return float(self.u) + float(self.v) * math.sqrt(self.d) if self.d else float(self.u)

    def __str__(self):
        if self.is_rational:
            return str(self.u)
        head = f"{self.u}+" if self.u else ""
        coef = "" if self.v == 1 else f"{self.v}*"
        return f"{head}{coef}sqrt{self.d}"


def _squarefree_split(n):
    out, k = 1, 2
    inner = n
    while k * k <= inner:
        while inner % (k * k) == 0:
            inner //= k * k
            out *= k
        k += 1
    return out, inner


def parse_eta(text) -> ExactEta:
    """Accepts ``"1"``, ``"2.7"``, ``"3/2"``, ``"sqrt2"``, ``"sqrt(2)"``, ``"2*sqrt3"``, ``"1+sqrt5"``."""
    if isinstance(text, ExactEta):
        return text
    if isinstance(text, (int, Fraction)):
        return ExactEta(Fraction(text))
    if isinstance(text, float):
        return ExactEta(Fraction(str(text)))
    s = str(text).replace(" ", "").lower()
    m = re.fullmatch(r"(?:([0-9./]+)\+)?(?:([0-9./]+)\*?)?sqrt\(?(\d+)\)?", s)
    if m:
        u = Fraction(m.group(1)) if m.group(1) else Fraction(0)
        v = Fraction(m.group(2)) if m.group(2) else Fraction(1)
        outer, d = _squarefree_split(int(m.group(3)))
        if d == 1:
            return ExactEta(u + v * outer)
        return ExactEta(u, v * outer, d)
    try:
        return ExactEta(Fraction(s))
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"cannot parse eta {text!r}; use a rational like 2.7 or 3/2, or sqrtD") from None


def _abs_value(A: Fraction, B: Fraction, d: int) -> float:
    """``|A + B sqrt(d)|`` accurate to relative roundoff even under cancellation."""
    if B == 0 or d == 0:
        return abs(float(A))
    num = A * A - B * B * d
    if num == 0:
        return 0.0
    far = abs(float(A) - float(B) * math.sqrt(d))
    near = abs(float(A) + float(B) * math.sqrt(d))
    if far >= near:
        return abs(float(num)) / far
    return near


def _rational_parts(X, Y, N, eta: ExactEta, Xden, Yden):
    """Denominator ``X / (Xden N^3) + eta Y / (Yden N)`` as ``A + B sqrt(d)``."""
    x = Fraction(int(X), int(Xden) * N ** 3)
    y = Fraction(int(Y), int(Yden) * N)
    return x + eta.u * y, eta.v * y


@dataclass
class ResonanceReport:
    eta: str
    N: int
    order: str
    n_tuples: int
    min_denominator: float
    argmin: tuple
    exact_zeros: int
    histogram: tuple = ()           # (counts, log10 bin edges)
    nu_hat: float | None = None
    c_hat: float | None = None
    fit_residual: float | None = None
    series: list = field(default_factory=list)

    def as_dict(self):
        out = {k: v for k, v in self.__dict__.items() if k not in ("histogram",)}
        if self.histogram:
            out["histogram"] = {"counts": [int(c) for c in self.histogram[0]],
                                "log10_edges": [float(e) for e in self.histogram[1]]}
        return out


def _sum_triads(index):
    """All ``(a, b)`` with ``a <= b`` and ``index[a] + index[b]`` on the grid."""
    lut = {(int(i), int(j)): s for s, (i, j) in enumerate(index)}
    M = len(index)
    a, b = np.triu_indices(M)
    si = index[a, 0] + index[b, 0]
    sj = index[a, 1] + index[b, 1]
    l = np.array([lut.get((int(x), int(y)), -1) for x, y in zip(si, sj)], dtype=np.int64)
    ok = l >= 0
    return a[ok], b[ok], l[ok]


def _refine_min(cands, exact_fn):
    best, arg = math.inf, None
    for c in cands:
        val = exact_fn(c)
        if 0 < val < best:
            best, arg = val, c
    return best, arg


def _three_wave(index, N, eta: ExactEta, bins):
    M = len(index)
    if M * M > MAX_TUPLES:
        raise BudgetExceeded(f"three-wave scan needs {M * M} pair evaluations (> {MAX_TUPLES})")
    a, b, l = _sum_triads(index)
    ia, ja = index[a, 0], index[a, 1]
    ib, jb = index[b, 0], index[b, 1]
    s = ia + ib
    X = 3 * ia * ib * s                                    # over N^3
    Delta = ja * ib - jb * ia
    Yden = ia * ib * s
    Ynum = -(Delta * Delta)                                # over Yden * N
    # exact zeros: rational part and sqrt part vanish separately
    q = eta.u.denominator
    p = eta.u.numerator
    rat = X * Yden * q + p * N * N * Ynum                  # times q Yden N^3
    zero = (rat == 0) & ((eta.v == 0) | (Ynum == 0))
    vals = np.abs(X / N ** 3 + float(eta) * Ynum / (Yden * N))
    return _finish(vals, zero, a, b, l, index,
                   lambda t: _abs_value(*_rational_parts(X[t], Ynum[t], N, eta, 1, Yden[t]), eta.d),
                   bins, len(a))


def _finish(vals, zero, a, b, l, index, exact_fn, bins, n, extra=None):
    nz = ~zero
    if not np.any(nz):
        return math.inf, None, int(zero.sum()), ((), ()), n
    order = np.argsort(np.where(nz, vals, np.inf), kind="stable")[:64]
    best, t = _refine_min([int(o) for o in order if nz[o]], exact_fn)
    legs = [a, b, l] + ([extra] if extra is not None else [])
    arg = tuple(tuple(int(v) for v in index[x[t]]) for x in legs) if t is not None else None
    logs = np.log10(np.maximum(vals[nz], 1e-300))
    hist = np.histogram(logs, bins=bins)
    return best, arg, int(zero.sum()), hist, n


def _four_wave(index, N, eta: ExactEta, bins):
    """``|omega_m + omega_j - omega_k - omega_l|`` over ``m + j = k + l`` and
    ``|omega_n - omega_a - omega_b - omega_c|`` over ``n = a + b + c`` (the mixed-sign
    reductions), all legs in ``D_N+``."""
    M = len(index)
    if M ** 3 > MAX_TUPLES:
        raise BudgetExceeded(f"four-wave scan needs {M ** 3} triple evaluations (> {MAX_TUPLES})")
    lut = {(int(i), int(j)): s for s, (i, j) in enumerate(index)}
    I = index[:, 0].astype(np.int64)
    J = index[:, 1].astype(np.int64)
    q, p = eta.u.denominator, eta.u.numerator
    feta = float(eta)
    best_vals, best_zero, tuples = [], [], []
    n_total = 0
    # (2,2): m + j = k + l with m <= j, k <= l, (m, j) != (k, l) as multisets
    for m in range(M):
        j = np.arange(m, M)
        for k in range(M):
            li = I[m] + I[j] - I[k]
            lj = J[m] + J[j] - J[k]
            l = np.array([lut.get((int(x), int(y)), -1) for x, y in zip(li, lj)], dtype=np.int64)
            ok = (l >= k)
            if not np.any(ok):
                continue
            jj, ll = j[ok], l[ok]
            n_total += len(jj)
            legs = (np.full(len(jj), m), jj, np.full(len(jj), k), ll)
            X, Y, P = _four_parts(I, J, legs, (1, 1, -1, -1))
            best_vals.append(np.abs(X / N ** 3 + feta * Y / (P * N)))
            rat = X * P * q + p * N * N * Y
            best_zero.append((rat == 0) & ((eta.v == 0) | (Y == 0)))
            tuples.append(np.stack(legs + (np.zeros(len(jj), np.int64),), axis=1))
    # (1,3): n = a + b + c with a <= b <= c
    for a in range(M):
        for b in range(a, M):
            c = np.arange(b, M)
            ni = I[a] + I[b] + I[c]
            nj = J[a] + J[b] + J[c]
            n = np.array([lut.get((int(x), int(y)), -1) for x, y in zip(ni, nj)], dtype=np.int64)
            ok = n >= 0
            if not np.any(ok):
                continue
            cc, nn = c[ok], n[ok]
            n_total += len(cc)
            legs = (nn, np.full(len(cc), a), np.full(len(cc), b), cc)
            X, Y, P = _four_parts(I, J, legs, (1, -1, -1, -1))
            best_vals.append(np.abs(X / N ** 3 + feta * Y / (P * N)))
            rat = X * P * q + p * N * N * Y
            best_zero.append((rat == 0) & ((eta.v == 0) | (Y == 0)))
            tuples.append(np.stack(legs + (np.ones(len(cc), np.int64),), axis=1))
    if not best_vals:
        return math.inf, None, 0, ((), ()), 0
    vals = np.concatenate(best_vals)
    zero = np.concatenate(best_zero)
    tup = np.concatenate(tuples)

    def exact(t):
        row = tup[t]
        signs = (1, 1, -1, -1) if row[4] == 0 else (1, -1, -1, -1)
        legs = tuple(np.array([row[x]]) for x in range(4))
        X, Y, P = _four_parts(I, J, legs, signs)
        return _abs_value(*_rational_parts(X[0], Y[0], N, eta, 1, P[0]), eta.d)

    nz = ~zero
    if not np.any(nz):
        return math.inf, None, int(zero.sum()), ((), ()), n_total
    order = np.argsort(np.where(nz, vals, np.inf), kind="stable")[:64]
    best, t = _refine_min([int(o) for o in order if nz[o]], exact)
    arg = tuple(tuple(int(v) for v in index[x]) for x in tup[t, :4]) if t is not None else None
    hist = np.histogram(np.log10(np.maximum(vals[nz], 1e-300)), bins=bins)
    return best, arg, int(zero.sum()), hist, n_total


def _four_parts(I, J, legs, signs):
    """Integer x-part ``sum s i^3`` and y-part ``sum s j^2 prod_{other} i`` with ``P = prod i``."""
    ii = [I[x] for x in legs]
    jj = [J[x] for x in legs]
    X = sum(s * i ** 3 for s, i in zip(signs, ii))
    P = ii[0] * ii[1] * ii[2] * ii[3]
    Y = 0
    for t, (s, i, j) in enumerate(zip(signs, ii, jj)):
        others = 1
        for u in range(4):
            if u != t:
                others = others * ii[u]
        Y = Y + s * j * j * others
    return X, Y, P


def scan_small_denominators(grid: FrequencyGrid, eta=None, order="three_wave", bins=40):
    """Minimal nonzero denominator and exact-zero count over all tuples of ``grid``."""
    if order not in ("three_wave", "four_wave_offres"):
        raise ValueError(f"unknown order {order!r}")
    ex = parse_eta(eta if eta is not None else repr(grid.eta))
    idx = np.asarray(grid.index, dtype=np.int64)
    if len(idx) == 0:
        return ResonanceReport(str(ex), grid.N, order, 0, math.inf, None, 0)
    fn = _three_wave if order == "three_wave" else _four_wave
    best, arg, zeros, hist, n = fn(idx, grid.N, ex, bins)
    return ResonanceReport(eta=str(ex), N=grid.N, order=order, n_tuples=int(n),
                           min_denominator=float(best), argmin=arg, exact_zeros=zeros,
                           histogram=hist if len(hist[0]) else ())


def fit_decay(Ns, minima):
    """Least-squares ``log min = log c - nu log N``; returns ``(nu, c, rms residual)``."""
    x = np.log(np.asarray(Ns, dtype=float))
    y = np.log(np.asarray(minima, dtype=float))
    A = np.stack([np.ones_like(x), -x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return float(coef[1]), float(math.exp(coef[0])), float(np.sqrt(np.mean(res ** 2)))


def denominator_series(spec, Ns, eta, order="three_wave", params=None):
    from .grid import DispersionParams, build_grid
    ex = parse_eta(eta)
    reports = []
    for N in Ns:
        g = build_grid(spec, N, params or DispersionParams(float(ex)))
        reports.append(scan_small_denominators(g, ex, order))
    finite = [(r.N, r.min_denominator) for r in reports if math.isfinite(r.min_denominator)]
    if len(finite) >= 2:
        nu, c, res = fit_decay(*zip(*finite))
        for r in reports:
            r.nu_hat, r.c_hat, r.fit_residual = nu, c, res
    return reports


# ---------------------------------------------------------------------------
# four-wave resonant modulus


@dataclass
class ResonantModulus:
    m: tuple                     # integer index of the base mode
    N: int
    triples: list                # [(j, k, l)] integer index pairs, sorted
    classes: dict                # triple -> "trivial-pairing" | "x-swap-family"

    def __len__(self):
        return len(self.triples)

    def count(self, cls):
        return sum(1 for c in self.classes.values() if c == cls)


def _classify(m, j, k, l):
    return "trivial-pairing" if (k, l) in ((m, j), (j, m)) else "x-swap-family"


def brute_force_modulus(grid: FrequencyGrid, m_index, eta=None):
    """All exact resonant triples by scanning ``(j, k)`` with ``l = m + j - k``."""
    ex = parse_eta(eta if eta is not None else repr(grid.eta))
    idx = np.asarray(grid.index, dtype=np.int64)
    M = len(idx)
    if M * M > MAX_TUPLES:
        raise BudgetExceeded(f"modulus scan needs {M * M} pairs (> {MAX_TUPLES})")
    I, J = (int(v) for v in m_index)
    if grid.lookup(I, J) < 0:
        raise ValueError(f"base mode {m_index} is not on the grid")
    lut = -np.ones((idx[:, 0].max() + 1, 2 * np.abs(idx[:, 1]).max() + 1), dtype=np.int64)
    off = np.abs(idx[:, 1]).max()
    lut[idx[:, 0], idx[:, 1] + off] = np.arange(M)
    jj, kk = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
    jj, kk = jj.ravel(), kk.ravel()
    li = I + idx[jj, 0] - idx[kk, 0]
    lj = J + idx[jj, 1] - idx[kk, 1]
    ok = (li >= 0) & (li < lut.shape[0]) & (lj + off >= 0) & (lj + off < lut.shape[1])
    l = np.full(jj.shape, -1)
    l[ok] = lut[li[ok], lj[ok] + off]
    keep = l >= 0
    jj, kk, l = jj[keep], kk[keep], l[keep]
    Ij, Jj = idx[jj, 0], idx[jj, 1]
    Ik, Jk = idx[kk, 0], idx[kk, 1]
    Il, Jl = idx[l, 0], idx[l, 1]
    X = I ** 3 + Ij ** 3 - Ik ** 3 - Il ** 3
    Y = J * J * Ij * Ik * Il + Jj * Jj * I * Ik * Il - Jk * Jk * I * Ij * Il - Jl * Jl * I * Ij * Ik
    if ex.is_rational:
        P = I * Ij * Ik * Il
        N = grid.N
        hit = X * P * ex.u.denominator + ex.u.numerator * N * N * Y == 0
    else:
        hit = (X == 0) & (Y == 0)
    m = (I, J)
    triples = sorted((tuple(map(int, idx[a])), tuple(map(int, idx[b])), tuple(map(int, idx[c])))
                     for a, b, c in zip(jj[hit], kk[hit], l[hit]))
    return ResonantModulus(m=m, N=grid.N, triples=triples,
                           classes={t: _classify(m, *t) for t in triples})


def structural_modulus(grid: FrequencyGrid, m_index, eta=None):
    """Triples from ``{m_x, j_x} = {k_x, l_x}`` and the one-parameter y-families."""
    ex = parse_eta(eta if eta is not None else repr(grid.eta))
    if ex.is_rational:
        raise ValueError("structural reduction needs an irrational eta (rational and eta parts "
                         "must vanish separately)")
    I, J = (int(v) for v in m_index)
    if grid.lookup(I, J) < 0:
        raise ValueError(f"base mode {m_index} is not on the grid")
    on = grid.slot
    xs = sorted({int(i) for i in grid.index[:, 0]})
    ys = sorted({int(j) for j in grid.index[:, 1]})
    found = set()
    m = (I, J)
    for (jx, jy) in on:
        # trivial pairings
        found.add(((jx, jy), m, (jx, jy)))
        found.add(((jx, jy), (jx, jy), m))
    for jx in xs:
        for ky in ys:
            # k_x = m_x, l_x = j_x:  2 I l_y = jx (J + ky) + I (J - ky),  2 I j_y = jx (J + ky) - I (J - ky)
            num_l = jx * (J + ky) + I * (J - ky)
            num_j = jx * (J + ky) - I * (J - ky)
            if num_l % (2 * I) or num_j % (2 * I):
                continue
            ly, jy = num_l // (2 * I), num_j // (2 * I)
            j, k, l = (jx, jy), (I, ky), (jx, ly)
            if j in on and k in on and l in on:
                found.add((j, k, l))
                # k_x = j_x, l_x = m_x: the same family with k and l exchanged
                found.add((j, l, k))
    triples = sorted(found)
    for t in triples:
        if not _check_exact(m, *t):
            raise StructureMismatch(f"structural triple {t} fails the exact test")
    return ResonantModulus(m=m, N=grid.N, triples=triples,
                           classes={t: _classify(m, *t) for t in triples})


def _check_exact(m, j, k, l):
    (I, J), (ji, jj), (ki, kj), (li, lj) = m, j, k, l
    if (ki - ji + li, kj - jj + lj) != (I, J):
        return False
    X = I ** 3 + ji ** 3 - ki ** 3 - li ** 3
    Y = J * J * ji * ki * li + jj * jj * I * ki * li - kj * kj * I * ji * li - lj * lj * I * ji * ki
    return X == 0 and Y == 0


def enumerate_resonant_modulus(grid: FrequencyGrid, m_index, eta=None, cross_check=True):
    """Structural enumeration, cross-validated against brute force as sets."""
    s = structural_modulus(grid, m_index, eta)
    if cross_check:
        b = brute_force_modulus(grid, m_index, eta)
        if set(s.triples) != set(b.triples):
            extra = sorted(set(s.triples) - set(b.triples))[:3]
            missing = sorted(set(b.triples) - set(s.triples))[:3]
            raise StructureMismatch(f"structural/brute-force mismatch at m={m_index}, N={grid.N}: "
                                    f"only structural {extra}, only brute force {missing}")
    return s


def cardinality_slope(Ns, counts):
    x = np.log(np.asarray(Ns, dtype=float))
    y = np.log(np.asarray(counts, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
