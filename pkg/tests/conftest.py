import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_convolve(img, kernel, boundary="reflect"):
    """Triple loop, index-by-index convolution with explicit boundary folding."""
    h, w = img.shape
    r = kernel.shape[0] // 2
    out = np.zeros((h, w))

    def fold(i, n):
        if n == 1:
            return 0
        period = 2 * (n - 1)
        i = i % period
        return i if i < n else period - i

    for y in range(h):
        for x in range(w):
            acc = 0.0
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    yy, xx = y - a, x - b
                    if boundary == "zero":
                        if not (0 <= yy < h and 0 <= xx < w):
                            continue
                        v = img[yy, xx]
                    else:
                        v = img[fold(yy, h), fold(xx, w)]
                    acc += kernel[a + r, b + r] * v
            out[y, x] = acc
    return out


def sum_dft(x):
    """Defining sum, one coefficient at a time."""
    import cmath

    n = len(x)
    return np.array([sum(x[k] * cmath.exp(-2j * cmath.pi * m * k / n) for k in range(n))
                     for m in range(n)])


_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, title, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} [{number:>2}] {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
