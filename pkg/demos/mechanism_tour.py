# # The randomized pieces
#
# Clipping, noise and Poisson batches, all driven by seeded streams so every
# run can be replayed.

# In[1]:

import numpy as np

from maskdp.mechanism import RandomStreams, clip_to_norm, gaussian_noise, poisson_sample

streams = RandomStreams(seed=7)

# Clipping only touches vectors outside the ball.

# In[2]:

g = np.array([3.0, 4.0])
print(clip_to_norm(g, 1.0), np.linalg.norm(clip_to_norm(g, 1.0)))
print(clip_to_norm(g, 10.0) is g)

# Noise with sigma = 0 is exactly zero and draws nothing from the stream.

# In[3]:

print(gaussian_noise(3, 0.0, streams.noise))
x = gaussian_noise(100_000, 2.0, streams.noise)
print(round(x.mean(), 4), round(x.std(), 4))

# Poisson batches vary in size around q * n.

# In[4]:

sizes = [len(poisson_sample(1000, 0.128, streams.sampling)) for _ in range(2000)]
print(np.mean(sizes), np.std(sizes), np.sqrt(1000 * 0.128 * 0.872))

# Same seed, same batches.

# In[5]:

a = poisson_sample(20, 0.3, RandomStreams(1).sampling)
b = poisson_sample(20, 0.3, RandomStreams(1).sampling)
print(a, np.array_equal(a, b))
