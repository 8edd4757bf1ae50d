"""Inductive knowledge-graph embedding via attention-weighted neighborhood aggregation.

Entities unseen during training are embedded on the fly from the facts
that mention them, so link prediction and triplet classification extend
to a growing graph without retraining.  See the README for the pipeline
walkthrough: corpus -> unseen-entity bundle -> mined rules -> training
-> evaluation.
"""

__version__ = "0.1.0"
