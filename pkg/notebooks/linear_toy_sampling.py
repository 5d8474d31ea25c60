"""
Sampling the Gibbs Gaussian with a particle system
===================================================

The linear-feature toy has an exact minimiser, so the particle cloud can be
compared with a closed form at every step.
"""

# %%
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mfld import IntegratorConfig, InitLaw, kl_knn, run_mfld, toys

spec = toys.make_toy("linear")
target = toys.linear_toy_target(spec)
print("target variance", target.var)

# %%
# 2000 particles, step 0.01, started from N(0, 1)
cfg = IntegratorConfig(n_particles=2000, eta=0.01, steps=800, seed=0, init=InitLaw(0.0, 1.0),
                       snapshot_every=40)
traj = run_mfld(spec, cfg)
ref = target.sample(np.random.default_rng(1), 50_000)

kl = [kl_knn(ens, ref) for ens in traj.ensembles()]
var = [ens.var() for ens in traj.ensembles()]
print("KL at start and end:", kl[0], kl[-1])

# %%
fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
ax[0].plot(traj.steps, kl, "o-")
ax[0].set_xlabel("step")
ax[0].set_ylabel("kNN KL to target")
ax[1].plot(traj.steps, var, "o-")
ax[1].axhline(target.var[0], color="k", ls="--")
ax[1].set_xlabel("step")
ax[1].set_ylabel("particle variance")
fig.tight_layout()
fig.savefig("linear_toy_sampling.png", dpi=120)
