"""Quits after reading one record."""
import sys

sys.stdin.readline()
