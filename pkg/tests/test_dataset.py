import json
import math

import numpy as np
import pytest

from gridfault import dataset as ds
from gridfault.faultsim import FaultSpec, LoadScenario, WaveformRecord
from gridfault.grid import resolve_network


def make_record(n=3, t=1000, fault=None, fs=1000.0, amplitude=1.0):
    rng = np.random.default_rng(0)
    samples = amplitude * np.cos(
        2 * np.pi * 60.0 * np.arange(t) / fs + rng.uniform(0, 1, (n, 3, 1))
    )
    scen = LoadScenario(seed=0, multipliers=np.ones((1, 3)))
    return WaveformRecord(samples=samples, fs=fs, f0=60.0, duration=t / fs,
                          fault=fault, scenario=scen)


POTSDAM_GRID = ds.ScenarioGrid(
    buses=tuple(range(13)), n_load_scenarios=150, n_load_changes=10000
)
FEEDER_GRID = ds.ScenarioGrid(
    buses=tuple(range(25)), n_load_scenarios=50, n_load_changes=10000
)


class TestEnumerate:
    def test_potsdam_grid_case_count(self):
        assert POTSDAM_GRID.n_fault_cases == 64350

    def test_feeder_grid_case_count(self):
        assert FEEDER_GRID.n_fault_cases == 41250

    def test_single_cell_grid(self):
        g = ds.ScenarioGrid(categories=("AG",), resistances=(1.0,), buses=(0,),
                            n_load_scenarios=1, n_load_changes=0)
        faults, changes = ds.enumerate_scenarios(g, n_loads=2, master_seed=0)
        assert len(faults) == 1 and len(changes) == 0

    def test_desk_grid_product(self):
        g = ds.ScenarioGrid(buses=tuple(range(13)), n_load_scenarios=10,
                            n_load_changes=700)
        assert g.n_fault_cases == 4290

    def test_ordering_is_category_major(self):
        g = ds.ScenarioGrid(categories=("AG", "BG"), resistances=(0.1, 1.0),
                            buses=(0, 1), n_load_scenarios=2, n_load_changes=0)
        faults, _ = ds.enumerate_scenarios(g, n_loads=1, master_seed=3)
        cats = [f.category for f, _ in faults]
        assert cats == ["AG"] * 8 + ["BG"] * 8
        rs = [f.resistance for f, _ in faults[:8]]
        assert rs == [0.1] * 4 + [1.0] * 4

    def test_load_scenarios_shared_across_configs(self):
        g = ds.ScenarioGrid(categories=("AG", "BG"), resistances=(0.1,),
                            buses=(0,), n_load_scenarios=2, n_load_changes=0)
        faults, _ = ds.enumerate_scenarios(g, n_loads=3, master_seed=9)
        ag0, bg0 = faults[0][1], faults[2][1]
        assert np.array_equal(ag0.multipliers, bg0.multipliers)

    def test_deterministic_and_seed_sensitive(self):
        g = ds.ScenarioGrid(buses=(0, 1), n_load_scenarios=2, n_load_changes=3)
        a1, c1 = ds.enumerate_scenarios(g, n_loads=2, master_seed=42)
        a2, c2 = ds.enumerate_scenarios(g, n_loads=2, master_seed=42)
        b1, _ = ds.enumerate_scenarios(g, n_loads=2, master_seed=43)
        assert all(x[0] == y[0] for x, y in zip(a1, a2))
        assert np.array_equal(c1[0].multipliers, c2[0].multipliers)
        assert any(x[0] != y[0] for x, y in zip(a1, b1))

    def test_onset_grid_alignment(self):
        g = ds.ScenarioGrid(buses=(0,), n_load_scenarios=4, n_load_changes=0)
        faults, _ = ds.enumerate_scenarios(g, n_loads=1, master_seed=0, onset_grid=0.02)
        for f, _ in faults:
            assert 0.3 - 1e-9 <= f.onset <= 0.7 + 1e-9
            assert abs(f.onset / 0.02 - round(f.onset / 0.02)) < 1e-12


class TestWindow:
    def test_thousand_samples_give_fifty_windows(self):
        wins = ds.window(make_record(), 20, "all")
        assert len(wins) == 50
        starts = [s for s, _ in wins]
        assert starts == list(range(0, 1000, 20))

    def test_single_window_whole_record(self):
        wins = ds.window(make_record(), 1000, "all")
        assert len(wins) == 1

    def test_windows_disjoint_and_ordered(self):
        wins = ds.window(make_record(), 64, "all")
        assert len(wins) == 1000 // 64
        for (s1, w1), (s2, _) in zip(wins, wins[1:]):
            assert s2 == s1 + 64
            assert w1.shape[-1] == 64

    def test_window_longer_than_record_rejected(self):
        with pytest.raises(ValueError):
            ds.window(make_record(t=100), 200, "all")

    def test_fault_spanning_contains_onset(self):
        for onset in (0.3, 0.333, 0.5, 0.62, 0.7):
            rec = make_record(fault=FaultSpec("AG", 1.0, 0, onset))
            [(start, w)] = ds.window(rec, 20, "fault_spanning")
            onset_idx = int(onset * rec.fs)
            assert start <= onset_idx < start + 20

    def test_fault_spanning_needs_fault(self):
        with pytest.raises(ValueError):
            ds.window(make_record(), 20, "fault_spanning")

    def test_random_window_seeded(self):
        rec = make_record()
        w1 = ds.window(rec, 20, "random", np.random.default_rng(5))
        w2 = ds.window(rec, 20, "random", np.random.default_rng(5))
        assert w1[0][0] == w2[0][0]


class TestLabel:
    def test_bg_maps_to_lg_phase_two(self):
        s = ds.label(np.zeros((3, 3, 4)), FaultSpec("BG", 1.0, 2, 0.4), 0.38, 0.42)
        assert s.y_event == 1
        assert ds.TYPE_NAMES[s.y_type] == "LG"
        assert s.y_phase == 1  # position 2, phase B
        assert s.y_loc == 2

    def test_no_fault_window(self):
        s = ds.label(np.zeros((3, 3, 4)), None, 0.0, 0.02)
        assert s.y_event == 0 and ds.TYPE_NAMES[s.y_type] == "NF"
        assert not s.phase_valid and not s.loc_valid
        assert s.one_hot_type().sum() == 1.0

    def test_ca_fault_at_bus_seven(self):
        s = ds.label(np.zeros((8, 3, 4)), FaultSpec("CA", 0.1, 7, 0.5), 0.5, 0.52)
        assert ds.TYPE_NAMES[s.y_type] == "LL"
        assert s.y_phase == 2  # position 3: CA
        assert s.y_loc == 7

    def test_window_before_onset_is_nf(self):
        s = ds.label(np.zeros((3, 3, 4)), FaultSpec("ABC", 1.0, 0, 0.9), 0.0, 0.02)
        assert s.y_event == 0 and s.y_type == 0

    def test_symmetric_faults_have_no_phase_label(self):
        for cat in ("ABC", "ABCG"):
            s = ds.label(np.zeros((3, 3, 4)), FaultSpec(cat, 1.0, 0, 0.1), 0.1, 0.12)
            assert not s.phase_valid and s.loc_valid


class TestMask:
    def test_all_measured_unchanged(self):
        x = np.random.default_rng(0).standard_normal((5, 3, 4)).astype(np.float32)
        assert np.array_equal(ds.mask_measurements(x, range(5)), x)

    def test_three_of_thirteen(self):
        x = np.ones((13, 3, 4), dtype=np.float32)
        m = ds.mask_measurements(x, (0, 4, 8))  # buses 1, 5, 9 one-based
        zero_rows = [i for i in range(13) if (m[i] == 0).all()]
        assert len(zero_rows) == 10
        assert set(zero_rows) == set(range(13)) - {0, 4, 8}

    def test_idempotent(self):
        x = np.random.default_rng(1).standard_normal((6, 3, 5)).astype(np.float32)
        once = ds.mask_measurements(x, (1, 2))
        twice = ds.mask_measurements(once, (1, 2))
        assert np.array_equal(once, twice)

    def test_empty_measured_rejected(self):
        with pytest.raises(ValueError):
            ds.mask_measurements(np.ones((3, 3, 3)), ())


class TestNoise:
    def test_disabled_noise_is_identity(self):
        x = np.random.default_rng(0).standard_normal((4, 3, 10))
        assert np.array_equal(ds.add_noise(x, None, np.random.default_rng(0)), x)
        assert np.array_equal(ds.add_noise(x, math.inf, np.random.default_rng(0)), x)

    def test_twenty_db_noise_ratio(self):
        rng = np.random.default_rng(11)
        x = np.cos(np.linspace(0, 40, 120000)).reshape(100, 3, 400)
        noisy = ds.add_noise(x, 20.0, np.random.default_rng(3))
        noise = noisy - x
        ratio = np.sqrt((noise ** 2).mean()) / np.sqrt((x ** 2).mean())
        assert abs(ratio - 0.1) / 0.1 < 0.02

    def test_same_seed_bitwise(self):
        x = np.random.default_rng(0).standard_normal((4, 3, 10))
        a = ds.add_noise(x, 25.0, np.random.default_rng(42))
        b = ds.add_noise(x, 25.0, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_zero_rows_stay_zero(self):
        x = np.ones((5, 3, 8))
        x[2] = 0.0
        noisy = ds.add_noise(x, 20.0, np.random.default_rng(1))
        assert (noisy[2] == 0.0).all()
        assert not np.array_equal(noisy[0], x[0])

    def test_mask_noise_commute_on_measured_rows(self):
        x = np.random.default_rng(5).standard_normal((6, 3, 12))
        measured = (0, 3, 5)
        a = ds.add_noise(ds.mask_measurements(x, measured), 25.0,
                         np.random.default_rng(9))
        b = ds.mask_measurements(
            ds.add_noise(ds.mask_measurements(x, measured), 25.0,
                         np.random.default_rng(9)),
            measured,
        )
        assert np.array_equal(a, b)


@pytest.fixture(scope="module")
def tiny_dataset():
    net = resolve_network("potsdam13")
    grid = ds.ScenarioGrid(categories=("AG", "AB", "ABCG"), resistances=(0.1, 10.0),
                           buses=(0, 6), n_load_scenarios=2, n_load_changes=10)
    opts = ds.DatasetOptions(seed=123, measured=(0, 4, 7, 8, 9, 12))
    return ds.build_dataset(net, grid, opts)


class TestBuildAndSplit:
    def test_counts(self, tiny_dataset):
        counts = tiny_dataset.class_counts()
        assert counts["fault"] == 3 * 2 * 2 * 2
        assert counts["non_fault"] == 10

    def test_features_in_per_unit_range(self, tiny_dataset):
        assert np.abs(tiny_dataset.features).max() <= 10.0
        assert tiny_dataset.features.dtype == np.float32

    def test_rebuild_bitwise_identical(self, tiny_dataset):
        net = resolve_network("potsdam13")
        grid = ds.ScenarioGrid.from_dict(tiny_dataset.meta["grid"])
        opts = ds.DatasetOptions(seed=123, measured=(0, 4, 7, 8, 9, 12))
        again = ds.build_dataset(net, grid, opts)
        assert np.array_equal(again.features, tiny_dataset.features)
        assert np.array_equal(again.y_loc, tiny_dataset.y_loc)

    def test_threaded_build_matches_serial(self, tiny_dataset):
        net = resolve_network("potsdam13")
        grid = ds.ScenarioGrid.from_dict(tiny_dataset.meta["grid"])
        opts = ds.DatasetOptions(seed=123, measured=(0, 4, 7, 8, 9, 12))
        threaded = ds.build_dataset(net, grid, opts, threads=4)
        assert np.array_equal(threaded.features, tiny_dataset.features)

    def test_split_exact_counts_and_disjoint(self, tiny_dataset):
        train, test = ds.split(tiny_dataset, 18, 6, 7, 3, seed=5)
        assert train.class_counts()["fault"] == 18
        assert test.class_counts()["fault"] == 6
        assert train.class_counts()["non_fault"] == 7
        assert test.class_counts()["non_fault"] == 3

    def test_split_seed_reproducible(self, tiny_dataset):
        a1, b1 = ds.split(tiny_dataset, 10, 5, 4, 2, seed=9)
        a2, b2 = ds.split(tiny_dataset, 10, 5, 4, 2, seed=9)
        assert np.array_equal(a1.features, a2.features)
        assert np.array_equal(b1.y_type, b2.y_type)

    def test_split_insufficient_counts(self, tiny_dataset):
        with pytest.raises(ValueError, match="available"):
            ds.split(tiny_dataset, 1000, 1000, 0, 0, seed=0)

    def test_unmeasured_rows_zero(self, tiny_dataset):
        unmeasured = sorted(set(range(13)) - {0, 4, 7, 8, 9, 12})
        assert (tiny_dataset.features[:, unmeasured] == 0).all()


class TestSaveLoad:
    def test_round_trip_bitwise(self, tiny_dataset, tmp_path):
        path = tmp_path / "d.gfds"
        ds.save(tiny_dataset, path)
        back = ds.load(path)
        assert np.array_equal(back.features, tiny_dataset.features)
        for attr in ("y_event", "y_type", "y_phase", "y_loc"):
            assert np.array_equal(getattr(back, attr), getattr(tiny_dataset, attr))
        assert back.meta == tiny_dataset.meta
        assert np.array_equal(back.adjacency, tiny_dataset.adjacency)

    def test_file_size_formula(self, tiny_dataset, tmp_path):
        path = tmp_path / "d.gfds"
        ds.save(tiny_dataset, path)
        s, n, d, k = tiny_dataset.features.shape
        assert path.stat().st_size == 22 + s * n * d * k * 4 + s * 5

    def test_truncated_file_rejected(self, tiny_dataset, tmp_path):
        path = tmp_path / "d.gfds"
        ds.save(tiny_dataset, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 17])
        with pytest.raises(ds.DatasetFormatError, match="truncated|size"):
            ds.load(path)

    def test_bad_magic_rejected(self, tiny_dataset, tmp_path):
        path = tmp_path / "d.gfds"
        ds.save(tiny_dataset, path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(ds.DatasetFormatError, match="magic"):
            ds.load(path)

    def test_sidecar_shape_mismatch_rejected(self, tiny_dataset, tmp_path):
        path = tmp_path / "d.gfds"
        ds.save(tiny_dataset, path)
        sidecar = json.loads((tmp_path / "d.gfds.meta.json").read_text())
        sidecar["samples"] = 7
        (tmp_path / "d.gfds.meta.json").write_text(json.dumps(sidecar))
        with pytest.raises(ds.DatasetFormatError, match="samples"):
            ds.load(path)
