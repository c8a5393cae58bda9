"""Certificate-guided pruning for noisy Lipschitz black-box maximization."""
