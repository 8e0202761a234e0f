"""Planar quadruped locomotion with an unknown sliding load.

Subpackages cover the physics core (sim, sliding_load, terrain), the
learning stack (nets, rewards, ppo, policy, env, training), and the
comparison harness (evaluation, cli), glued by config and checkpoint I/O.
"""

__version__ = "0.1.0"
