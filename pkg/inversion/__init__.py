# Inversion package for saddle-point operators and Gauss-Newton step strategies
