"""spars: deterministic power-aware HPC job-scheduling simulator.

Continuous-time discrete-event simulation of batch scheduling over nodes
with explicit power states and transition delays, exact integer energy
accounting, FCFS/EASY schedulers with pluggable power-state management, and
a line-protocol environment for external reinforcement-learning agents.
"""

__version__ = "0.1.0"
