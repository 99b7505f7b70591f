# # Privacy accounting for the subsampled Gaussian
#
# This walks through the accountant: per-step Renyi DP, composition over
# training steps, conversion to (epsilon, delta), and calibrating a noise
# multiplier for a target budget.

# In[1]:

import numpy as np

from maskdp.accountant import (
    PrivacyBudget,
    SubsampledGaussianParams,
    calibrate_noise,
    per_step_rdp,
    rdp_curve,
    total_epsilon,
)

# With a full batch (q = 1) the mechanism is a plain Gaussian and the RDP curve
# is a straight line in the order alpha.

# In[2]:

alphas = np.arange(2, 9)
print(rdp_curve(1.0, 2.0, alphas))
print(alphas / 8)

# Subsampling shrinks the per-step cost a lot. Here is alpha = 16 at a 1% rate.

# In[3]:

for q in (1.0, 0.1, 0.01):
    print(f"q={q:<5} eps_16={per_step_rdp(16, q, 1.0):.6g}")

# A realistic run: 40000 records, batches of 128, 150 epochs.

# In[4]:

n, batch, epochs = 40_000, 128, 150
q, steps = batch / n, epochs * n // batch
report = total_epsilon(SubsampledGaussianParams(q, 1.0, steps), delta=1e-5)
print(report.to_dict() | {"per_step_rdp": None, "composed_rdp": None})

# Going the other way: which noise multiplier buys a given epsilon?

# In[5]:

for eps in (0.1, 0.5, 1.0, 5.0):
    z = calibrate_noise(PrivacyBudget(eps, 1e-5), q, steps)
    realized = total_epsilon(SubsampledGaussianParams(q, z, steps), 1e-5).epsilon
    print(f"target {eps:<4} z={z:.4f} realized {realized:.5f}")
