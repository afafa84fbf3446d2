"""Collaborative multi-agent tool planning for long-video question answering.

Agents draft tool plans, execute them one step per round, read each other's
memory entries to revise their plans, answer, and reach a consensus. A toy
group-relative policy optimisation loop trains plan-template policies against
the same sessions.
"""

from __future__ import annotations

__version__ = "0.1.0"
