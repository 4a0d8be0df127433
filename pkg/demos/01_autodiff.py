import numpy as np

from scn import tensor as T

rng = np.random.default_rng(0)

# a tiny conv net: conv -> relu -> conv, scored against a random target
x = T.Tensor(rng.uniform(0, 1, (1, 3, 8, 8)).astype(np.float32))
w1 = T.create((8, 3, 3, 3), "he_normal", fan_in=27, seed=1, requires_grad=True)
w2 = T.create((3, 8, 3, 3), "he_normal", fan_in=72, seed=2, requires_grad=True)
target = T.Tensor(rng.uniform(0, 1, (1, 3, 8, 8)).astype(np.float32))

y = T.conv2d(T.relu(T.conv2d(x, w1, pad=1)), w2, pad=1)
loss = T.l1_loss(y, target)
loss.backward()
print("loss", loss.item())
print("grad shapes", w1.grad.shape, w2.grad.shape)
print("params", T.param_count({"w1": w1, "w2": w2}))

# pixel shuffle moves channels into space: (1, 12, 4, 4) -> (1, 3, 8, 8)
z = T.Tensor(np.arange(12 * 16, dtype=np.float32).reshape(1, 12, 4, 4))
print("pixel_shuffle", T.pixel_shuffle(z, 2).shape)

# finite differences in float64 against the analytic gradient
m = T.Tensor(rng.standard_normal((1, 2, 3, 3)))
report = T.grad_check(
    lambda x, w: T.sum_all(T.mul(T.conv2d(x, w, stride=2, pad=1), m)),
    [T.Tensor(rng.standard_normal((1, 2, 6, 6))), T.Tensor(rng.standard_normal((2, 2, 3, 3)))],
)
print("grad_check passed", report.passed, "max rel err %.2e" % report.max_rel_error)

with T.no_grad():
    y = T.conv2d(x, w1, pad=1)
print("no_grad output requires grad:", y.requires_grad)
