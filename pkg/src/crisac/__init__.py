"""Simulator for a cognitive cell where an RIS-aided base station senses a
primary transmitter and, in the free slots, serves communication users while
localizing mobile stations with the same downlink signal.

Subpackages:
    scenario     configuration, node placement, (de)serialization
    channels     static channel realizations and RIS composition
    sensing      energy detection statistics and thresholds
    metrics      SINRs, rates, interference, Fisher information, PEB
    convex_core  dense barrier solver for the lifted subproblems
    bcd          joint sensing-time / beamformer / RIS-phase design
    cli          batch experiment runner
"""

__version__ = "0.1.0"
