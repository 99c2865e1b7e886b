"""Independent reference computations used by several test modules."""

import math

import mpmath

# Two-sided 95% Student t critical values, as printed in standard tables.
T_TABLE_975 = {1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 10: 2.228, 20: 2.086, 30: 2.042}


def t_quantile(p, df, dps=40):
    """Quantile of Student's t by root-finding on its incomplete-beta CDF."""
    mpmath.mp.dps = dps
    p = mpmath.mpf(p)
    nu = mpmath.mpf(df)

    def cdf(t):
        x = nu / (nu + t * t)
        tail = mpmath.betainc(nu / 2, mpmath.mpf(1) / 2, 0, x, regularized=True) / 2
        return 1 - tail if t >= 0 else tail

    start = mpmath.mpf(T_TABLE_975.get(df, 2.0))
    return float(mpmath.findroot(lambda t: cdf(t) - p, start))


def t_interval(diffs, level=0.95):
    n = len(diffs)
    mean = math.fsum(diffs) / n
    sd = math.sqrt(math.fsum((d - mean) ** 2 for d in diffs) / (n - 1))
    half = t_quantile((1 + level) / 2, n - 1) * sd / math.sqrt(n)
    return mean - half, mean + half


def scalar_prox_grid(v, lam, lo=-math.inf, hi=math.inf, rounds=8, points=1001):
    """Minimize 0.5*(z - v)^2 + lam*|z| over [lo, hi] by repeated grid bracketing.

    Objective values are too flat near the optimum to locate it to 1e-9 in
    floating point, so each round brackets the point where the right
    derivative first becomes nonnegative and zooms into that cell.
    """
    def right_derivative(z):
        return (z - v) + (lam if z >= 0 else -lam)

    a = max(lo, -abs(v) - lam - 1.0)
    b = min(hi, abs(v) + lam + 1.0)
    for _ in range(rounds):
        step = (b - a) / (points - 1)
        grid = [a + i * step for i in range(points)]
        first = next((i for i, z in enumerate(grid) if right_derivative(z) >= 0), None)
        if first is None:
            a = grid[-1]
        elif first == 0:
            b = grid[0]
        else:
            a, b = grid[first - 1], grid[first]
        if b - a <= 0:
            break
    return b
