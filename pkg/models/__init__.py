"""Model vectors and run reports"""
