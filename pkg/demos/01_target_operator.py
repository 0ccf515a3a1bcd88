# coding: utf-8

# # Combining source classifiers on a target sample
#
# Each source j has a classifier over its own class set and a discriminator
# telling its samples apart from the target. The perplexity score of a
# target sample w.r.t. source j grows as the sample looks more like source j.
# The target prediction for class c averages the classifiers that know c,
# weighted by those scores.

# In[1]:

import numpy as np

from dctn import combine_confidence, source_weights


# Two sources that share classes 0 and 1; class 2 is known only to source 2.

# In[2]:

class_sets = [(0, 1), (0, 1, 2)]
classes = (0, 1, 2)
softmax_1 = np.array([[0.8, 0.2]])
softmax_2 = np.array([[0.1, 0.3, 0.6]])


# With equal scores the shared classes get a plain average. The private
# class is copied over from the only source that has it.

# In[3]:

print(combine_confidence(np.array([[1.0, 1.0]]), [softmax_1, softmax_2], class_sets, classes))


# Make the sample look three times more like source 1.

# In[4]:

scores = np.array([[3.0, 1.0]])
print(source_weights(scores, class_sets, classes)[0])
print(combine_confidence(scores, [softmax_1, softmax_2], class_sets, classes))


# Only the ratio of scores matters: scaling a row leaves the output alone.

# In[5]:

print(np.abs(combine_confidence(scores * 100, [softmax_1, softmax_2], class_sets, classes)
             - combine_confidence(scores, [softmax_1, softmax_2], class_sets, classes)).max())
