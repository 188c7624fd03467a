"""Adaptive video understanding agent.

A ReAct-style planner that decides which frames to look at, guided by a
generated sampling policy, a frame sampler, an evaluator/refiner retry loop
and an episodic long-term memory.
"""

__version__ = "0.1.0"
