"""Poisson-Voronoi and ideal Poisson-Voronoi tessellations on SL_n(R) symmetric spaces and products of trees."""
__version__ = "0.1.0"
