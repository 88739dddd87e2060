"""Multi-player bandit channel allocation: protocol simulator and analysis."""
