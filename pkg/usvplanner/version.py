"""
Keeps track of the version of the current code
"""

USV_PLANNER_VERSION = "0.3.0+git"
