"""Auxiliary nodes and weights for the log-singular quadrature corrections.

Generated by scripts/generate_alpert_tables.py; do not edit by hand.
Keys are convergence orders; `offset` is the index of the first retained
trapezoidal node.
"""

LOG_RULES = {
    4: dict(
        offset=2,
        nodes=(
        0.02379647284118973696785817,
        0.2935370741501914567962317,
        1.023715124251890253013905,
        ),
        weights=(
        0.08795942675593886625687369,
        0.4989017152913699103467137,
        0.9131388579526912233964126,
        ),
    ),
    8: dict(
        offset=5,
        nodes=(
        0.006531815708567918290235986,
        0.09086744584657728648511714,
        0.3967966533375877679508279,
        1.027856640525645700626922,
        1.945288592909266013404492,
        2.980147933889639651583716,
        3.998861349951123044203731,
        ),
        weights=(
        0.02462194198995203157808208,
        0.1701315866854178098335762,
        0.4609256358650077235927185,
        0.7947291148621894268169417,
        1.008710414337932589256139,
        1.036093649726215581418507,
        1.004787656533284837504036,
        ),
    ),
}
