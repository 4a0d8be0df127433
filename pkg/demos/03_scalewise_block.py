import warnings

import numpy as np

from scn import tensor as T
from scn.pyramid import BlockWeights, Conv, FeaturePyramid, build_pyramid, scalewise_residual_block

rng = np.random.default_rng(0)
width, mult = 4, 2


def conv(cout, cin, k):
    return Conv(T.Tensor(rng.standard_normal((cout, cin, k, k)) * 0.3), None)


# one shared expand/reduce pair and one 1x1 q per scale offset
block = BlockWeights(conv(width * mult, width, 3), conv(width, width * mult, 3), {i: conv(width, width, 1) for i in (-1, 0, 1)})

feat = T.Tensor(rng.standard_normal((1, width, 32, 32)))
pyr = build_pyramid(feat, 4, "1/2")
print("pyramid sizes", pyr.sizes)

out = scalewise_residual_block(pyr, block, k=1)
print("block keeps sizes", out.sizes == pyr.sizes)

# context grows across scales: zero out scale m and watch when the top scale notices
for m in (2, 3, 4):
    poked = FeaturePyramid(list(pyr.scales), pyr.ratio, pyr.n)
    poked.scales[m - 1] = T.zeros(pyr.scales[m - 1].shape, dtype=np.float64)
    a, b = pyr, poked
    for depth in range(1, 5):
        a = scalewise_residual_block(a, block, k=1)
        b = scalewise_residual_block(b, block, k=1)
        if not np.array_equal(a.scales[0].data, b.scales[0].data):
            print(f"scale {m} reaches the top scale after {depth} block(s)")
            break

# a 1x1 pyramid level stops construction early with a warning
with warnings.catch_warnings(record=True) as caught:
    warnings.simplefilter("always")
    short = build_pyramid(T.Tensor(rng.standard_normal((1, width, 4, 4))), 6, "1/2")
print(short.sizes, caught[0].message if caught else "")
