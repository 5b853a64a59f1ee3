"""
Consensus Lab
=============

Simulator and limit-law engine for two-opinion majority-type consensus
protocols on the complete graph.

Subcommands:
------------
1. simulate: seeded Monte Carlo batches, optionally under an adversary
2. theory: f tables, the density of Z, the correction g and predicted runtime laws
3. oracle: exact Markov-chain runtime laws and dominance checks for n <= 5000
4. compare: sup-distance, winner and mean-runtime verdicts as JSON

Version: 1.0
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
