# Data module: experiment configs and artifact persistence
