"""The quadratic noise schedule and exact inversion of one forward step.

Noising a signal to step t and running the reverse update with the true
noise recovers the signal exactly at t = 1, where no fresh noise is added.
"""

import numpy as np

from stimpute.diffusion import build_schedule, forward_sample, reverse_step

sched = build_schedule(50, 1e-4, 0.2)
for t in (1, 10, 25, 40, 50):
    print(f"t={t:2d}  beta={sched.beta[t - 1]:.6f}  alpha_bar={sched.alpha_bar[t - 1]:.6f}")

rng = np.random.default_rng(0)
x0 = np.sin(np.linspace(0, 2 * np.pi, 24))[None].repeat(4, 0)
eps = rng.standard_normal(x0.shape)
for t in (1, 25, 50):
    xt = forward_sample(x0, t, eps, sched)
    print(f"t={t:2d}  signal-to-noise {np.sqrt(sched.alpha_bar[t - 1] / (1 - sched.alpha_bar[t - 1])):7.3f}  std(xt)={xt.std():.3f}")

back = reverse_step(forward_sample(x0, 1, eps, sched), eps, 1, sched, np.zeros_like(x0))
print("max |x0 - reverse(forward(x0))| at t=1:", np.abs(back - x0).max())
