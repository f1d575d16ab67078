# Finite element package for mixed regularization and forward resistivity assembly
