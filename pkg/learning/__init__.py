"""
Losses, importance reweighting, training and the synthetic benchmark.

"""
