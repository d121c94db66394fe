"""Pose math, network model, planner, wire codec, runtime and studies."""
