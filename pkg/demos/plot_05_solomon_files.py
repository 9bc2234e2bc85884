"""
Reading Solomon benchmark files
===============================

Parse a Solomon-format file, check a hand-made tour, and write the instance
back out.
"""

from pathlib import Path

from mtvrp import Trajectory, format_solomon, parse_solomon, route_length, validate_solution

data = Path(__file__).resolve().parent.parent / "tests" / "data"

big = parse_solomon((data / "r101_layout.txt").read_text())
print(big.name, big.n_customers, "customers, scale", big.scale, " depot due", big.depot_late * big.scale)

# Three customers: depot -> 1 -> 2 -> 3 -> depot.
tiny = parse_solomon((data / "three_customers.txt").read_text())
tour = Trajectory(0, [1, 2, 3])
print("valid:", validate_solution(tour, tiny).ok, " length in file units:", route_length(tour, tiny) * tiny.scale)

# Round trip back to the text layout.
print(format_solomon(tiny, capacity=10, vehicles=2))
