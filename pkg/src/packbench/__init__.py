"""Online 3D bin packing: heightmap bins, EMS placements, heuristics, a PPO-trained policy and benchmarks."""
