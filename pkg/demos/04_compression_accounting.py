"""
Counting parameters and what dropping units removes
===================================================

Two accountings are reported. The first charges a dropped unit its
outgoing weights and its own bias. The strict one charges every weight
with either endpoint dropped.
"""
from isingdrop import param_count, total_dropout_rate
from isingdrop.harness import counts_from_percent

archs = [(784, 100, 100, 10), (784, 100, 50, 50, 10), (784, 100, 50, 50, 25, 10)]
for a in archs:
    print(a, "P =", f"{param_count(a):,}")

# per-layer drop percentages (input first) of a few trained models
rows = [
    ((784, 100, 100, 10), [0, 38.62, 42.43]),
    ((784, 100, 100, 10), [38.60, 32.18, 25.15]),
    ((784, 100, 50, 50, 25, 10), [42.18, 31.78, 33.18, 37.00, 25.37]),
]
print()
for arch, pct in rows:
    headline, strict = total_dropout_rate(arch, counts_from_percent(arch, pct))
    print(f"{str(arch):<28} {pct}  -> {headline:5.2f}% outgoing+bias, {strict:5.2f}% strict")
