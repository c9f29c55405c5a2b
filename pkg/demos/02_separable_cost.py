"""
What a depthwise separable convolution saves
============================================

A regular 1-d convolution with kernel S maps C_in channels to N channels at
L * S * C_in * N multiply-accumulates. Splitting it into a per-channel
(depthwise) filter and a 1x1 (pointwise) mix costs L * S * C_in + L * C_in * N,
so the ratio is 1/N + 1/S. The counts below come from the kernels themselves.
"""

from xception1d import layers as L

for length, kernel, c_in, n in [(100, 9, 64, 64), (63, 9, 128, 128), (1000, 3, 16, 32)]:
    formula = L.opcount(length, kernel, c_in, n)
    regular, separable = L.measure_macs(length, kernel, c_in, n)
    print(f"L={length:5d} S={kernel} C_in={c_in:3d} N={n:3d}  "
          f"regular={regular:>10,d}  separable={separable:>9,d}  "
          f"ratio={separable / regular:.4f}  1/N+1/S={1 / n + 1 / kernel:.4f}")
    assert (regular, separable) == (formula.regular, formula.separable)
