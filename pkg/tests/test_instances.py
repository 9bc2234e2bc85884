import math

import numpy as np
import pytest

from mtvrp import (
    HORIZON_INF,
    Instance,
    ParseError,
    VariantSpec,
    all_variants,
    format_solomon,
    generate,
    generate_batch,
    in_distribution_variants,
    load_instances,
    parse_solomon,
    save_instances,
    variant_from_name,
)
from mtvrp.instances import demand_scale


def test_cvrp_name_has_no_flags():
    v = variant_from_name("CVRP")
    assert v == VariantSpec()
    assert v.constraint_flags() == [0.0, 0.0, 0.0, 0.0]


def test_ovrpbltw_flags():
    v = variant_from_name("OVRPBLTW")
    assert (v.open, v.backhaul, v.duration_limited, v.time_windows) == (True,) * 4
    assert not v.mixed_backhaul and not v.multi_depot


def test_mdovrpmbltw_flags():
    v = variant_from_name("MDOVRPMBLTW")
    assert v.multi_depot and v.open and v.mixed_backhaul and v.duration_limited and v.time_windows
    assert not v.backhaul


@pytest.mark.parametrize("bad", ["VRPX", "CVRPB", "OCVRP", "VRPTWL", "", "MDMDVRP"])
def test_bad_names_rejected(bad):
    with pytest.raises(ParseError):
        variant_from_name(bad)


def test_b_and_mb_exclusive():
    with pytest.raises(ValueError):
        VariantSpec(backhaul=True, mixed_backhaul=True)


def test_catalog_sizes_and_round_trip():
    assert len(in_distribution_variants()) == 16
    cat = all_variants()
    assert len(cat) == 48 and len(set(cat)) == 48
    for v in cat:
        assert variant_from_name(v.name()) == v


def test_demand_scale_arithmetic():
    assert demand_scale(50) == 40
    assert 5 / demand_scale(50) == 0.125


def test_generated_demands_are_normalized_integers():
    inst = generate("CVRP", 50, seed=3)
    raw = inst.linehaul_demand * demand_scale(50)
    np.testing.assert_allclose(raw, np.round(raw), atol=1e-12)
    assert raw.min() >= 1 and raw.max() <= 9


def test_vrpb_backhaul_split():
    inst = generate("VRPB", 10, seed=0)
    assert (inst.backhaul_demand > 0).sum() == 2
    assert (inst.linehaul_demand > 0).sum() == 8
    assert not np.any((inst.backhaul_demand > 0) & (inst.linehaul_demand > 0))


def test_generation_ranges():
    inst = generate("VRPLTW", 100, seed=1)
    for a in (inst.depot_coords, inst.customer_coords):
        assert a.min() >= 0 and a.max() < 1
    assert inst.duration_limit == 3.0
    assert np.all(inst.tw_early >= 0.0126) and np.all(inst.tw_early <= 4.25)
    width = inst.tw_late - inst.tw_early
    assert np.all(width >= 1.8) and np.all(width < 2.0)
    assert np.all(inst.tw_service >= 0) and np.all(inst.tw_service < 0.15)


def test_absent_constraints_are_padded():
    inst = generate("CVRP", 5, seed=1)
    assert inst.duration_limit == HORIZON_INF
    assert np.all(inst.tw_late == HORIZON_INF)
    assert np.all(inst.tw_early == 0) and np.all(inst.tw_service == 0)


def test_md_has_three_depots():
    assert generate("MDVRPTW", 7, seed=0).n_depots == 3
    assert generate("VRPTW", 7, seed=0).n_depots == 1


def test_same_seed_same_instance_and_shared_geometry():
    a, b = generate("VRPB", 12, 9), generate("VRPB", 12, 9)
    assert a.to_json() == b.to_json()
    np.testing.assert_array_equal(a.customer_coords, generate("CVRP", 12, 9).customer_coords)


def test_generate_rejects_empty():
    with pytest.raises(ValueError):
        generate("CVRP", 0, seed=0)


def test_json_round_trip_exact(tmp_path):
    batch = generate_batch("MDOVRPMBLTW", 6, 3, seed=4)
    path = tmp_path / "inst.json"
    save_instances(path, batch)
    back = load_instances(path)
    for a, b in zip(batch, back):
        assert a.variant == b.variant
        for f in ("depot_coords", "customer_coords", "linehaul_demand", "backhaul_demand", "tw_early", "tw_late"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_distance_matrix_basics():
    inst = Instance([[0, 0]], [[1, 1], [1, 1]], [0.1, 0.1], [0, 0], [0, 0], [HORIZON_INF] * 2, [0, 0])
    d = inst.distance_matrix()
    assert d[0, 1] == pytest.approx(math.sqrt(2))
    assert d[1, 2] == 0.0


# -- Solomon ----------------------------------------------------------------


def test_r101_layout_fixture(data_dir):
    inst = parse_solomon((data_dir / "r101_layout.txt").read_text())
    assert inst.n_customers == 100 and inst.n_depots == 1
    np.testing.assert_allclose(inst.depot_coords[0] * inst.scale, [35, 35])
    assert inst.depot_late * inst.scale == pytest.approx(230)
    assert inst.variant == variant_from_name("VRPTW")
    assert inst.linehaul_demand.max() <= 1


def test_three_customer_round_trip(data_dir):
    text = (data_dir / "three_customers.txt").read_text()
    inst = parse_solomon(text)
    again = parse_solomon(format_solomon(inst, capacity=10, vehicles=2))
    for f in ("depot_coords", "customer_coords", "linehaul_demand", "tw_early", "tw_late", "tw_service"):
        np.testing.assert_array_equal(getattr(inst, f), getattr(again, f))
    assert (inst.depot_late, inst.scale, inst.name) == (again.depot_late, again.scale, again.name)
    np.testing.assert_allclose(inst.customer_coords * inst.scale, [[3, 4], [6, 8], [0, 10]])
    np.testing.assert_allclose(inst.linehaul_demand, [0.2, 0.3, 0.4])


HEADER = "X\n\nVEHICLE\nNUMBER     CAPACITY\n  2   10\n\nCUSTOMER\nCUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE   TIME\n"


@pytest.mark.parametrize(
    "body, needle",
    [
        ("    0 0 0 0 0 100 0\n", "no customer rows"),
        ("    1 1 1 1 0 100 0\n", "no depot row"),
        ("    0 0 0 0 0 100 0\n    1 1 x 1 0 100 0\n", "non-numeric"),
        ("    0 0 0 0 0 100 0\n    1 1 1 1 0 100\n", "expected 7 fields"),
        ("    0 0 0 0 0 100 0\n    1 1 1 1 0 100 0\n    1 2 2 1 0 100 0\n", "duplicate"),
    ],
)
def test_solomon_errors(body, needle):
    with pytest.raises(ParseError, match=needle):
        parse_solomon(HEADER + body)


def test_solomon_missing_sections():
    with pytest.raises(ParseError, match="VEHICLE"):
        parse_solomon("X\nCUSTOMER\nCUST NO.\n 0 0 0 0 0 1 0\n")
    with pytest.raises(ParseError, match="CUSTOMER"):
        parse_solomon("X\nVEHICLE\nNUMBER CAPACITY\n 2 10\n")
