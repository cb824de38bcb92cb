import numpy as np
import pytest

from lpcvt.rvd import Domain


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cube():
    return Domain.box()


@pytest.fixture(scope="session")
def sphere():
    """Convex triangulated sphere with 120 vertices."""
    from scipy.spatial import ConvexHull

    r = np.random.default_rng(3)
    pts = r.normal(size=(120, 3))
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    return Domain.from_mesh(pts, ConvexHull(pts).simplices)


def random_spd(rng):
    r = rng.normal(size=(3, 3))
    return r.T @ r + np.eye(3)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion and assert it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def report(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
