"""Qubit-channel compiler: representations, decomposition, circuits, synthesis."""

from qchan.channels import *  # noqa: F401,F403
