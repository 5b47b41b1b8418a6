# Numerical core: impact model, face-lift, HJB and DP solvers, hedge simulation, functional calculus

__version__ = '0.3.0'
