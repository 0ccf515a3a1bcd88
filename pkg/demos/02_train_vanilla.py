# coding: utf-8

# # Adapting two shifted sources to a target
#
# Three Gaussian-blob domains: each source is the target rotated and
# translated by a different amount. We pretrain on the sources, then
# alternate adversarial alignment with pseudo-label training.

# In[1]:

import numpy as np

from dctn import DctnModel, TrainConfig, gen_synthetic_domains, predict_target, train


# A larger rotation than the default task, so source-only training leaves room to improve.

# In[2]:

sources, target, y_target = gen_synthetic_domains(n_sources=2, n_classes=4, samples_per_domain=300,
                                                  shift_strength=1.2, seed=0)
[s.name for s in sources], target.n, target.labeled


# In[3]:

cfg = TrainConfig(lr_f=0.002, momentum=0.5, pretrain_epochs=15, max_rounds=6)
model = DctnModel.build(2, [s.class_set for s in sources], rng=np.random.default_rng(0))
model, trace = train(model, sources, target, cfg, eval_labels=y_target)


# The trace has one record per iteration. Target labels only feed the
# logged accuracies.

# In[4]:

for r in trace.records:
    if r.phase == "discriminative":
        print(f"round {r.round}: {r.n_pseudo:4d} pseudo labels, "
              f"pseudo acc {r.pseudo_acc:.1f}, target acc {r.test_acc:.1f}")


# In[5]:

pred = predict_target(model, target)
print("final target accuracy", np.mean(pred.labels == y_target) * 100)
print("concentration constants", model.alphas)
