"""Real-time receding-horizon parameter estimation for chaotic systems."""
