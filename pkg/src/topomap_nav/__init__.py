"""Map-guided hierarchical navigation on synthetic grid mazes.

A rough occupancy map seeds a dynamic topological graph whose nodes become
generated landmark observations. A goal-conditioned controller drives between
landmarks, and failed edges are deleted before replanning.
"""

__version__ = "0.1.0"
