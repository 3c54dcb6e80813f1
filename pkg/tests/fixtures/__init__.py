# Synthetic data builders
