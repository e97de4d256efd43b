"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Run standalone with ``python3 tests/test_acceptance.py`` or through pytest.
"""
import subprocess
import sys
import time

import numpy as np
import pytest

from fpstar import fdgraph as fd
from fpstar.kkt import newton_solve
from fpstar.problem import builtin_example, normalize
from fpstar.report import run_example, table_sweep
from fpstar.state import Discretization
from fpstar.verify import (bound_active_example, fd_self_convergence, gradient_summary, measure_basis,
                           measure_gradient_fd, measure_gradient_wavelet, measure_tangent_fd,
                           measure_tangent_wavelet, observed_orders, superposition_error,
                           smooth_control, vi_sign_margin, wavelet_fd_agreement)

EX2_REFERENCE = {2: 1.5e-2, 3: 8.5e-4, 4: 5.7e-5}


def criterion_1():
    parts = []
    ok = True
    for J in (2, 3):
        t0 = time.perf_counter()
        _, rep = run_example(1, J, J, 4, 4)
        wall = time.perf_counter() - t0
        e_rho, e_u = max(rep.e_rho), max(rep.e_u)
        ok &= rep.converged and e_rho <= 1e-7 and e_u <= 1e-4 and rep.sigma <= 1e-10 and wall <= 60
        parts.append(f"J={J}: e_rho={e_rho:.2e} e_u={e_u:.2e} sigma={rep.sigma:.2e} {wall:.1f}s")
    return ok, "; ".join(parts)


def criterion_2():
    t0 = time.perf_counter()
    rows = table_sweep(2, [2, 3, 4], 4)
    wall = time.perf_counter() - t0
    diag = {r.J1: r for r in rows if r.J1 == r.J2}
    ok = len(rows) == 9 and all(r.converged for r in rows) and wall <= 300
    parts = []
    for J, ref in EX2_REFERENCE.items():
        e = diag[J].e_rho[0]
        ok &= ref / 10 <= e <= ref * 10
        parts.append(f"J={J}: e_rho1={e:.2e} sigma={diag[J].sigma:.2e}")
    sig = [diag[J].sigma for J in (2, 3, 4)]
    ok &= sig[0] > sig[1] > sig[2] and sig[2] <= 1e-6
    return ok, "; ".join(parts) + f"; 9 rows in {wall:.1f}s"


def criterion_3():
    eps, errs, dirs, mismatch = measure_gradient_wavelet(n_dirs=5)
    wb, wo = gradient_summary(eps, errs, dirs)
    eps_f, errs_f, dirs_f = measure_gradient_fd(n_dirs=5)
    fb, fo = gradient_summary(eps_f, errs_f, dirs_f)
    ok = wb.max() <= 1e-4 and wo.min() >= 1.8 and fb.max() <= 1e-4 and fo.min() >= 1.8
    return ok, (f"wavelet: rel={wb.max():.1e} order={wo.min():.2f}; FD: rel={fb.max():.1e} "
                f"order={fo.min():.2f}; info: continuous-gradient mismatch {mismatch.max():.1e}")


def criterion_4():
    ow = min(observed_orders(*measure_tangent_wavelet(example=k)).min() for k in (1, 2))
    of = observed_orders(*measure_tangent_fd()).min()
    return ow >= 1.8 and of >= 1.8, f"wavelet order={ow:.2f}; FD order={of:.2f}"


def criterion_5():
    margins = []
    for id in (1, 2):
        sol, rep = newton_solve(builtin_example(id), Discretization.make(2, 2))
        margins.append(vi_sign_margin(sol)[0] if rep.converged else -np.inf)
    sol, rep = bound_active_example()
    m, frac = vi_sign_margin(sol)
    ok = min(margins) >= -1e-10 and rep.converged and m >= -1e-10 and frac >= 0.10
    return ok, f"margins Ex1={margins[0]:.1e} Ex2={margins[1]:.1e}; bound-active margin={m:.1e} clamped={frac:.0%}"


def criterion_6():
    pn = normalize(builtin_example(2))
    disc = Discretization.make(2, 2)
    from fpstar.state import Grid

    sup = superposition_error(pn, disc, smooth_control(Grid.collocation(pn, disc)))
    order = fd_self_convergence().min()
    agree = wavelet_fd_agreement()
    ok = sup <= 1e-9 and order >= 1.9 and agree <= 1e-4
    return ok, f"superposition={sup:.1e}; FD order={order:.2f}; wavelet-FD gap={agree:.1e}"


def criterion_7():
    bp = fd.bump_problem()
    refl = fd.mass_balance(bp, None, fd.FdGrid(100, 200, outer="reflecting"))
    drift = refl.drift / (1 + abs(refl.mass[0]))
    dirichlet = fd.mass_balance(bp, ["0.3*x", "-0.2", "0.1*t"], fd.FdGrid(100, 200))
    ok = drift <= 1e-8 and dirichlet.identity_error <= 1e-6
    return ok, f"reflecting drift={drift:.1e}; Dirichlet flux identity={dirichlet.identity_error:.1e}"


def criterion_8():
    worst_id, worst_poly = 0.0, 0.0
    for J, M in ((1, 4), (3, 4), (2, 6)):
        m = measure_basis(J, M)
        worst_id = max(worst_id, *(m[k] for k in ("orthonormality", "left_plus_right", "left_integral",
                                                  "double_integral")))
        worst_poly = max(worst_poly, m["poly_reproduction"])
    return worst_id <= 1e-12 and worst_poly <= 1e-13, f"identities={worst_id:.1e}; reproduction={worst_poly:.1e}"


def criterion_9():
    cmd = [sys.executable, "-m", "fpstar", "example", "--id", "1"]
    runs = [subprocess.run(cmd, capture_output=True) for _ in range(2)]
    ok = all(r.returncode == 0 for r in runs) and runs[0].stdout == runs[1].stdout and runs[0].stdout
    return bool(ok), f"{len(runs[0].stdout)} bytes, identical={runs[0].stdout == runs[1].stdout}"


CRITERIA = {
    1: ("Example 1 reproduction", criterion_1),
    2: ("Example 2 trend", criterion_2),
    3: ("gradient consistency", criterion_3),
    4: ("tangent consistency", criterion_4),
    5: ("VI sign conditions", criterion_5),
    6: ("well-posedness surrogates", criterion_6),
    7: ("mass conservation", criterion_7),
    8: ("basis exactness", criterion_8),
    9: ("determinism", criterion_9),
}


def run_criterion(k):
    name, fn = CRITERIA[k]
    ok, detail = fn()
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {k} {name}: {detail}"
    return ok, line


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_criterion(k, capsys):
    ok, line = run_criterion(k)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [run_criterion(k) for k in sorted(CRITERIA)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
