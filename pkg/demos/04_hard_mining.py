# coding: utf-8

# # Picking the hardest source batch
#
# Every adversarial iteration sums each discriminator's loss over its
# source batch and the target batch. The extractor step then uses only the
# source whose sum is largest. Ties go to the lowest index.

# In[1]:

import numpy as np

from dctn import DctnModel, TrainConfig, gen_synthetic_domains, make_batches
from dctn import select_hard_source, source_target_losses, update_discriminator


# In[2]:

sources, target, _ = gen_synthetic_domains(3, 4, 200, 0.5, seed=1)
model = DctnModel.build(2, [s.class_set for s in sources], rng=np.random.default_rng(1))
stream = make_batches(sources, target, batch_size=32, seed=1, epochs=None)
cfg = TrainConfig()


# The printed sums move as the discriminators train, and the chosen index
# follows whichever source the target currently resembles most.

# In[3]:

for step in range(30):
    batch = next(stream)
    update_discriminator(model, batch, cfg)
    if step % 5 == 4:
        print(step + 1, np.round(source_target_losses(model, batch), 2), "->", select_hard_source(model, batch))
