import numpy as np

from scn import tensor as T
from scn.models import ModelConfig, count_params, forward, init_model, match_budget, scn_to_single_scale

cfg = ModelConfig()  # SR x2, 8 blocks, width 32, two scales at ratio 1/2
print(cfg)
print("scn_shared params", count_params(cfg))

# sharing keeps the count fixed however many scales are used
print("by scale count", [count_params(cfg.replace(n_scales=n)) for n in (1, 2, 4, 6)])
print("unshared at the same width", count_params(cfg.replace(variant="scn_unshared")))

# baselines get their width tuned to the SCN budget
for variant in ("single_scale", "unet_style", "pspnet_style", "scn_unshared"):
    n = 1 if variant == "single_scale" else 2
    m = match_budget(cfg.replace(variant=variant, n_scales=n), count_params(cfg))
    print(f"{variant:<14} width {m.width:>3} mult {m.width_mult} params {count_params(m)}")

# output shapes for every task
x = T.Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 12, 12)).astype(np.float32))
for factor in (2, 3, 4):
    c = cfg.replace(factor=factor, n_blocks=2, width=8)
    print("SR x%d" % factor, forward(c, init_model(c), x).shape)
d = ModelConfig(task="denoise", n_blocks=2, width=8)
print("denoise", forward(d, init_model(d), T.Tensor(x.data[:, :1])).shape)

# with one scale and k = 0, SCN is exactly the plain residual network
small = ModelConfig(n_scales=1, k=0, n_blocks=2, width=8)
plain = ModelConfig(variant="single_scale", n_scales=1, n_blocks=2, width=8)
w = init_model(small).copy(np.float64)
diff = forward(small, w, x).data - forward(plain, scn_to_single_scale(w, 2), x).data
print("max |scn - single_scale|", np.abs(diff).max())
