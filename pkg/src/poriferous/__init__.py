"""Coverage control on surfaces with holes.

The surface is mapped conformally onto a disk with circular holes; agents
split it into sectors with balanced workloads and descend a coverage cost
under a metric that repels them from obstacles and from each other.
"""

__version__ = "0.1.0"
