"""Unit conventions shared across the package.

All rates are angular frequencies in rad/us and all times are in
microseconds.  A parameter quoted as "x MHz" in the ordinary-frequency
sense (x = rate / 2 pi) is entered as ``x * MHz``.
"""

import math

HZ = 2.0 * math.pi * 1e-6
KHZ = 2.0 * math.pi * 1e-3
MHZ = 2.0 * math.pi

NS = 1e-3
US = 1.0
MS = 1e3
