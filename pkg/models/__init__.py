"""
Network definitions: encoder, task heads and the SVAE branch.

"""
