# Solvers package for sparse/dense kernels, MINRES and algebraic multigrid
