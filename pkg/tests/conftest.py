import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from msfrac.assembly import single_system
from msfrac.grid import Domain, build_hierarchy, embed_fractures


@pytest.fixture(scope="session")
def unit_2x2_s2():
    """2x2 coarse grid on the unit square, s = 2 (4x4 fine cells)."""
    return build_hierarchy(Domain(1.0, 1.0), 2, 2, 2)


@pytest.fixture(scope="session")
def unit_2x2_s4():
    """Center neighborhood is a 8x8-cell patch (4x4 cells per quadrant)."""
    return build_hierarchy(Domain(1.0, 1.0), 2, 2, 4)


@pytest.fixture(scope="session")
def comb_case():
    """Three disjoint comb-shaped networks crossing the center patch boundary.

    Contrast kappa_f / kappa_m = 1e7 puts the three network eigenvalues below
    1e-6 in absolute terms while the fourth stays O(10).
    """
    hier = build_hierarchy(Domain(1.0, 1.0), 2, 2, 8)

    def comb(y, up):
        segs = [[(0.0, y), (0.75, y)]]
        for tx in (0.125, 0.375, 0.625):
            segs.append([(tx, y), (tx, y + 0.125 if up else y - 0.125)])
        return segs

    polys = comb(0.125, True) + comb(0.5, True) + comb(0.875, False)
    props = [{"kappa": 1e5, "porosity": 0.01}] * len(polys)
    fm = embed_fractures(hier.fine, polys, props)
    sys1 = single_system(hier.fine, 1e-2, 0.1)
    return hier, fm, sys1


def assert_rel(a, b, tol, msg=""):
    denom = max(abs(a), abs(b), 1e-300)
    assert abs(a - b) / denom <= tol, f"{msg}: {a} vs {b} (rel {abs(a-b)/denom:.2e})"
