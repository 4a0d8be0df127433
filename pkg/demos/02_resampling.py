import numpy as np

from scn import tensor as T
from scn.resample import as_ratio, bicubic_resize, bilinear_resize, box_kernel, resample, scaled_size

x = T.Tensor(np.arange(36, dtype=np.float64).reshape(1, 1, 6, 6))

# half-pixel centres: 6 -> 3 averages neighbouring pairs along each axis
print(bilinear_resize(x, 3, 3).data[0, 0])
print(bicubic_resize(x, 12, 12).shape)

# ratios are exact fractions; sizes round half up and never drop below 1
for r in ("1/2", "2/3", 0.75):
    print(r, as_ratio(r), [scaled_size(n, r) for n in (48, 9, 1)])

# the three cross-scale operators, down then back up
target = (3, 3)
kd = T.Tensor(box_kernel(1, 2, "down", dtype=np.float64))
ku = T.Tensor(box_kernel(1, 2, "up", dtype=np.float64))
for kind in ("bilinear", "avgpool_nearest", "strided_conv_deconv"):
    down = resample(kind, "down", x, "1/2", target, kd)
    up = resample(kind, "up", down, "1/2", (6, 6), ku)
    print(kind, down.shape, up.shape, "round-trip error %.3f" % np.abs(up.data - x.data).mean())

# with box kernels the learned strided pair starts out as avgpool/nearest
a = resample("strided_conv_deconv", "down", x, "1/2", target, kd)
b = resample("avgpool_nearest", "down", x, "1/2", target)
print("strided == avgpool at init:", np.allclose(a.data, b.data))
