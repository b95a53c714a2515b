"""Quad-Curl FEM Lab application package"""
