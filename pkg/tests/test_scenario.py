"""Scenario parsing: defaults, overrides, and loud failure on typos."""

import pytest

from wamsbench.scenario import ScenarioError, builtin_scenarios, load_scenario, parse_scenario

MINIMAL = """
[scenario]
name = tiny
duration_s = 5
devices = 2
"""


class TestParsing:
    def test_minimal_scenario_gets_defaults(self):
        sc = parse_scenario(MINIMAL)
        assert sc.name == "tiny"
        assert sc.seed == "tiny"  # defaults to the name
        assert len(sc.devices) == 2
        assert sc.devices[0].config.device_id == 1
        assert sc.devices[0].uplink.r_ul_bps == 384_000.0
        assert sc.devices[0].downlink.r_ul_bps == 7_200_000.0
        assert sc.transport.min_rto_ms == 200.0
        assert sc.frames_expected == 100

    def test_device_override_beats_fleet_default(self):
        sc = parse_scenario(
            MINIMAL
            + """
[device]
p_seg = 0.2
[device 2]
p_seg = 0.5
uplink_t_p_ms = 42.0
"""
        )
        assert sc.devices[0].config.p_seg == 0.2
        assert sc.devices[1].config.p_seg == 0.5
        assert sc.devices[0].uplink.t_p_ms == 0.0
        assert sc.devices[1].uplink.t_p_ms == 42.0

    def test_disturbance_becomes_absolute_event(self):
        sc = parse_scenario(
            MINIMAL
            + """
[device 1]
disturbance = 2.5:-0.2:10
"""
        )
        (event,) = sc.devices[0].config.signal.disturbances
        assert event.at_utc_ms == 1_700_000_000_000 + 2_500
        assert event.step_hz == -0.2
        assert event.tau_s == 10.0

    def test_outage_windows(self):
        sc = parse_scenario(
            """
[scenario]
duration_s = 60
dcs_outages = 10-15, 42.5-44
"""
        )
        assert sc.outages == ((10.0, 15.0), (42.5, 44.0))

    @pytest.mark.parametrize(
        "snippet,needle",
        [
            ("[scenario]\nduration_s = 0\n", "duration_s"),
            ("[scenario]\nduration_s = ten\n", "duration_s"),
            ("[scenario]\nepoch_utc_ms = 1700000000050\n", "epoch_utc_ms"),
            ("[scenario]\ndevices = 0\n", "devices"),
            ("[scenario]\nwat = 1\n", "wat"),
            ("[scenario]\nduration_s = 5\n[uplink]\np_loss = 1.5\n", "uplink"),
            ("[scenario]\nduration_s = 5\n[nonsense]\nx = 1\n", "nonsense"),
            ("[scenario]\ndevices = 2\n[device 9]\np_seg = 0\n", "device 9"),
            ("[scenario]\ndcs_outages = 9-3\n", "dcs_outages"),
            ("[scenario]\nduration_s = 5\n[device 1]\ndisturbance = oops\n", "disturbance"),
        ],
    )
    def test_invalid_scenarios_name_the_field(self, snippet, needle):
        with pytest.raises(ScenarioError) as err:
            parse_scenario(snippet)
        assert needle in str(err.value)


class TestBundled:
    def test_all_three_ship(self):
        assert builtin_scenarios() == ["lossless", "lossy_0p3", "paper_like"]

    def test_lossless_is_actually_lossless(self):
        sc = load_scenario("lossless")
        assert len(sc.devices) == 10
        assert sc.duration_s == 60
        for dev in sc.devices:
            assert dev.uplink.p_loss == 0.0
            assert dev.uplink.jitter.median_ms == 0.0
            assert dev.config.p_seg == 0.0
            assert dev.uplink.t_p_ms == 100.0

    def test_paper_like_spreads_propagation(self):
        sc = load_scenario("paper_like")
        t_ps = [dev.uplink.t_p_ms for dev in sc.devices]
        assert t_ps == [103.0 + 0.5 * k for k in range(10)]
        assert all(dev.downlink.t_p_ms == 100.0 for dev in sc.devices)
        assert sc.devices[4].config.signal.disturbances

    def test_lossy_scenario_volume(self):
        sc = load_scenario("lossy_0p3")
        assert sc.frames_expected == 100_000
        assert all(dev.uplink.p_loss == 0.003 for dev in sc.devices)

    def test_file_path_loads_too(self, tmp_path):
        path = tmp_path / "mine.scenario"
        path.write_text(MINIMAL)
        assert load_scenario(str(path)).name == "tiny"

    def test_unknown_ref_lists_builtins(self):
        with pytest.raises(ScenarioError) as err:
            load_scenario("no_such_thing")
        assert "lossless" in str(err.value)
