"""
矩映射振荡积分渐近分析引擎
"""
__version__ = "1.0.0"
