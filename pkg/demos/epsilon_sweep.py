# # Masked DP against plain DP
#
# Only the masked tokens of each record are protected. The public tokens get
# their gradient untouched, so at a tight budget the masked trainer keeps most
# of the non-private accuracy while plain DP loses a good share of it.
#
# Each run takes a couple of seconds on one CPU.

# In[1]:

from maskdp.data import GeneratorConfig, generate_split
from maskdp.trainer import TrainConfig, evaluate, parse_cell, sweep, train, write_table

train_data, test_data = generate_split(GeneratorConfig(), seed=0, n_test=1000)
print(len(train_data), len(test_data), train_data.masks.mean())

# A single non-private run, scored with all tokens and with each half alone.

# In[2]:

report = train(TrainConfig(mode="sgd"), train_data)
for policy in ("all", "public_only", "private_only"):
    print(policy, evaluate(report.params, test_data, policy))

# The sweep. Each cell is a mode and a target epsilon; "inf" means no noise and
# no clipping.

# In[3]:

cells = [parse_cell(c) for c in ("maskdp:0.5", "dp:0.5", "maskdp:1", "dp:1", "sgd", "dp:inf")]
rows = sweep(cells, TrainConfig(), train_data, test_data, seeds=range(3))
write_table(rows, "sweep.csv")
print(open("sweep.csv").read())
