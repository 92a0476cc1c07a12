"""Regenerate src/stokesbd/_alpert_tables.py.

Solves the moment equations that define the hybrid Gauss-trapezoidal
quadrature corrections for a logarithmic endpoint singularity (B. Alpert,
SIAM J. Sci. Comput. 20 (1999) 1551-1584, log-singular family): find
auxiliary nodes chi_k > 0 and weights w_k with, for q = 0 .. j-1,

    sum_k w_k chi_k^q            = -zeta(-q, a)
    sum_k w_k chi_k^q log(chi_k) =  zeta'(-q, a)

where zeta(s, a) is the Hurwitz zeta function and a is the offset of the
first retained trapezoidal node. The order-l rule uses j = l - 1 nodes;
l = 4 pairs with a = 2 and l = 8 with a = 5 (the smallest offsets for
which all nodes and weights come out positive).

Weights are eliminated through the Vandermonde system of the first
moment family and Newton runs on the nodes alone, at 60 digits. The
solved rules are written as 25-digit literals; nothing here executes at
import time in the package.

Run:  python3 scripts/generate_alpert_tables.py
"""

import pathlib

import mpmath as mp

mp.mp.dps = 60

TARGETS = {4: (3, 2), 8: (7, 5)}  # order -> (j nodes, offset a)
OUT = pathlib.Path(__file__).resolve().parent.parent / "src" / "stokesbd" / "_alpert_tables.py"


def weights_for(chi, j, a):
    V = mp.matrix(j, j)
    b = mp.matrix(j, 1)
    for q in range(j):
        for k in range(j):
            V[q, k] = chi[k] ** q
        b[q] = -mp.zeta(-q, a)
    return mp.lu_solve(V, b)


def reduced_residual(chi, j, a):
    w = weights_for(chi, j, a)
    R = mp.matrix(j, 1)
    for q in range(j):
        R[q] = sum(w[k] * chi[k] ** q * mp.log(chi[k]) for k in range(j)) - mp.zeta(-q, a, 1)
    return R, w


def reduced_jacobian(chi, j, a, w):
    V = mp.matrix(j, j)
    for q in range(j):
        for k in range(j):
            V[q, k] = chi[k] ** q
    J = mp.matrix(j, j)
    for k in range(j):
        c = mp.matrix(j, 1)
        for q in range(j):
            c[q] = (q * chi[k] ** (q - 1) if q > 0 else mp.mpf(0)) * w[k]
        dw = mp.lu_solve(V, c)
        for q in range(j):
            direct = w[k] * chi[k] ** (q - 1) * (q * mp.log(chi[k]) + 1)
            via_w = -sum(dw[i] * chi[i] ** q * mp.log(chi[i]) for i in range(j))
            J[q, k] = direct + via_w
    return J


def solve_rule(j, a):
    last = None
    for p in [mp.mpf("0.8"), mp.mpf(1), mp.mpf("1.3"), mp.mpf("1.7"), mp.mpf(2), mp.mpf("2.5")]:
        chi = [a * ((k + mp.mpf("0.5")) / j) ** p for k in range(j)]
        out = _newton(chi, j, a)
        if out is not None:
            return out
        last = p
    raise RuntimeError(f"no convergence for (j={j}, a={a}); last exponent {last}")


def _newton(chi, j, a, maxit=150):
    for _ in range(maxit):
        try:
            R, w = reduced_residual(chi, j, a)
        except ZeroDivisionError:
            return None
        if max(abs(R[q]) for q in range(j)) < mp.mpf(10) ** (-45):
            return chi, w
        try:
            d = mp.lu_solve(reduced_jacobian(chi, j, a, w), R)
        except ZeroDivisionError:
            return None
        nrm = max(abs(R[q]) for q in range(j))
        lam = mp.mpf(1)
        while lam > mp.mpf(10) ** (-20):
            cand = [chi[k] - lam * d[k] for k in range(j)]
            ordered = all(cand[k] > 0 for k in range(j)) and all(
                cand[k + 1] > cand[k] for k in range(j - 1))
            if ordered:
                try:
                    Rn, _ = reduced_residual(cand, j, a)
                    if max(abs(Rn[q]) for q in range(j)) < nrm:
                        chi = cand
                        break
                except ZeroDivisionError:
                    pass
            lam /= 2
        else:
            return None
    return None


def main():
    blocks = []
    for order, (j, a) in sorted(TARGETS.items()):
        chi, w = solve_rule(j, a)
        resid, _ = reduced_residual(chi, j, a)
        worst = max(abs(resid[q]) for q in range(j))
        print(f"order {order}: j={j}, a={a}, worst residual {mp.nstr(worst, 3)}")
        nodes = ",\n        ".join(mp.nstr(c, 25) for c in chi)
        weights = ",\n        ".join(mp.nstr(x, 25) for x in w)
        blocks.append(
            f"    {order}: dict(\n"
            f"        offset={a},\n"
            f"        nodes=(\n        {nodes},\n        ),\n"
            f"        weights=(\n        {weights},\n        ),\n"
            f"    ),"
        )
    body = "\n".join(blocks)
    OUT.write_text(
        '"""Auxiliary nodes and weights for the log-singular quadrature '
        "corrections.\n\nGenerated by scripts/generate_alpert_tables.py; do "
        "not edit by hand.\nKeys are convergence orders; `offset` is the "
        "index of the first retained\ntrapezoidal node.\n\"\"\"\n\n"
        f"LOG_RULES = {{\n{body}\n}}\n"
    )
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
