"""teachtrace: learn how to teach.

The package trains a teaching policy that decides, step by step, which
samples a student model should see next.  A key-value memory traces the
student's mastery of latent concepts, gated attention pools those traces
into a compact state, and a deterministic actor-critic agent turns the
state into per-class sampling proportions.  Classic baselines (random
teaching, self-paced learning, a scalar-state teacher) live alongside the
full model for ablations.
"""

__version__ = "0.1.0"
