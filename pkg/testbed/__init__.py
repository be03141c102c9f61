"""Simulated gantry-crane testbed.

Modules:
- params: crane parameters, plant state and fault injection
- dynamics: RK4 integration of the linearized cart-pendulum model
- trajectory: anti-sway reference trajectories (trapezoid + zero-vibration shaper)
- enactment: controller and logger that drives the plant along a trajectory
"""
