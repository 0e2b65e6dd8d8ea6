import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isacsim import e3
from isacsim.dapp import (Dapp, DappDescriptor, DappRuntime, DappState,
                          InsufficientCompute, NoData, StreamUnavailable)
from isacsim.orchestrator import SiteProfile
from isacsim.waveform import (MultipathProfile, OfdmConfig, PathSpec,
                              RadarTarget, synth_cir_snapshots,
                              synth_echo_grid)

DF = 30e3


def cir_site(site_id="s1", budget=1.0):
    return SiteProfile(site_id=site_id, tags=frozenset({"t"}),
                       compute_budget=budget,
                       available_streams=frozenset({"cir"}))


def iq_site(site_id="s1", budget=1.0):
    return SiteProfile(site_id=site_id, tags=frozenset({"t"}),
                       compute_budget=budget,
                       available_streams=frozenset({"iq"}))


def ranging_descriptor(dapp_id="rng1", m=5, cost=0.2, music=None,
                       method="subspace", **extra):
    params = {"delta_f_hz": DF, "snapshots": m, "method": method,
              "music": music or {"subarray_len": 64, "model_order": 2,
                                 "grid_stop_s": 2e-6, "grid_step_s": 2e-9}}
    params.update(extra)
    return DappDescriptor(dapp_id=dapp_id, function="ranging",
                          input_kind="cir", params=params, compute_cost=cost)


def publish_cir_snapshots(endpoint, n, tau=300e-9, seed=0, k=128,
                          snr=float("inf")):
    profile = MultipathProfile(paths=(PathSpec(tau, 1.0, "fixed"),))
    snaps = synth_cir_snapshots(profile, k, DF, n, snr, seed)
    for i, snap in enumerate(snaps):
        endpoint.publish("cir", e3.cir_frame_payload(snap),
                         timestamp_ns=i * 500_000)


class TestDescriptor:
    def test_function_input_consistency(self):
        with pytest.raises(ValueError):
            DappDescriptor(dapp_id="x", function="ranging", input_kind="iq")
        with pytest.raises(ValueError):
            DappDescriptor(dapp_id="x", function="monostatic",
                           input_kind="cir")
        with pytest.raises(ValueError):
            DappDescriptor(dapp_id="x", function="bistatic", input_kind="iq")

    def test_positive_cost(self):
        with pytest.raises(ValueError):
            DappDescriptor(dapp_id="x", function="spectrum", input_kind="iq",
                           compute_cost=0.0)


class TestDeploy:
    def test_ranging_dapp_runs_and_reports(self):
        runtime = DappRuntime()
        site = cir_site()
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        dapp = runtime.deploy(ranging_descriptor(m=5), site)
        assert dapp.state is DappState.RUNNING
        publish_cir_snapshots(endpoint, 5)
        reports = runtime.step()
        assert len(reports) == 1
        assert reports[0].payload["type"] == "range"

    def test_over_budget_leaves_site_unchanged(self):
        runtime = DappRuntime()
        site = cir_site(budget=0.1)
        runtime.register_site(site, e3.DuEndpoint())
        with pytest.raises(InsufficientCompute):
            runtime.deploy(ranging_descriptor(cost=0.5), site)
        assert runtime.remaining_budget("s1") == 0.1
        assert runtime.dapps == []

    def test_missing_stream_kind(self):
        runtime = DappRuntime()
        site = iq_site()
        runtime.register_site(site, e3.DuEndpoint(supported_kinds=("iq",)))
        with pytest.raises(StreamUnavailable):
            runtime.deploy(ranging_descriptor(), site)

    def test_parallel_dapps_share_identical_input(self):
        runtime = DappRuntime()
        site = cir_site()
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        d1 = runtime.deploy(ranging_descriptor("a", m=4, cost=0.2), site)
        d2 = runtime.deploy(ranging_descriptor("b", m=4, cost=0.2), site)
        assert d1.state is d2.state is DappState.RUNNING
        publish_cir_snapshots(endpoint, 8)
        runtime.step()
        assert len(d1.reports) == len(d2.reports) == 2
        for ra, rb in zip(d1.reports, d2.reports):
            assert ra.payload == rb.payload


class TestProcessFrame:
    def test_ranging_buffers_m_snapshots(self):
        runtime = DappRuntime()
        site = cir_site()
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        dapp = runtime.deploy(ranging_descriptor(m=20), site)
        publish_cir_snapshots(endpoint, 19)
        assert runtime.step() == []
        assert dapp.frames_processed == 19
        publish_cir_snapshots(endpoint, 1, seed=1)
        reports = runtime.step()
        assert len(reports) == 1
        assert reports[0].payload["snapshots_used"] == 20

    def test_monostatic_report_close_to_truth(self):
        cfg = OfdmConfig(3.6e9, DF, 10e6, 0.25e-3)
        target = RadarTarget(range_m=500.0, radial_velocity_mps=25.0)
        grid = synth_echo_grid(cfg, target, 100.0, 3)
        runtime = DappRuntime()
        site = iq_site()
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        descriptor = DappDescriptor(
            dapp_id="mono", function="monostatic", input_kind="iq",
            params={"ofdm": cfg, "zero_pad": 4}, compute_cost=0.3)
        dapp = runtime.deploy(descriptor, site)
        endpoint.publish("iq", e3.iq_grid_payload(grid))
        reports = runtime.step()
        assert len(reports) == 1
        assert reports[0].payload["range_m"] == pytest.approx(500.0, abs=5.0)
        assert reports[0].payload["velocity_mps"] == pytest.approx(25.0,
                                                                   abs=45.0)
        assert dapp.state is DappState.RUNNING

    def test_spectrum_all_clear_on_noise(self):
        cfg = OfdmConfig(3.6e9, DF, 10e6, 0.25e-3)
        runtime = DappRuntime()
        site = iq_site()
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        descriptor = DappDescriptor(
            dapp_id="spec", function="spectrum", input_kind="iq",
            params={"ofdm": cfg, "n_bands": 8, "threshold_db": 6.0},
            compute_cost=0.1)
        runtime.deploy(descriptor, site)
        rng = np.random.default_rng(0)
        flags = 0
        n_frames = 20
        for i in range(n_frames):
            noise = (rng.standard_normal((333, 7))
                     + 1j * rng.standard_normal((333, 7))) / np.sqrt(2)
            from isacsim.waveform import ResourceGrid
            grid = ResourceGrid(samples=noise, config=cfg)
            endpoint.publish("iq", e3.iq_grid_payload(grid))
            report = runtime.step()[0]
            flags += sum(report.payload["occupied"])
        assert flags / (8 * n_frames) < 0.05

    def test_wrong_kind_rejected(self):
        runtime = DappRuntime()
        site = cir_site()
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        dapp = runtime.deploy(ranging_descriptor(), site)
        bad = e3.E3Message(e3.E3Header(3, 0, 0),
                           e3.IqGrid(n=1, m=1,
                                     iq=np.zeros((1, 2), np.int16)))
        with pytest.raises(ValueError):
            runtime.process_frame(dapp, bad)


class TestErrorHandling:
    def test_estimator_errors_degrade_then_recover(self):
        runtime = DappRuntime(degrade_after=5)
        site = cir_site()
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        dapp = runtime.deploy(ranging_descriptor(inject_failure=True), site)
        publish_cir_snapshots(endpoint, 4)
        runtime.step()
        assert dapp.state is DappState.RUNNING
        assert dapp.errors == 4
        publish_cir_snapshots(endpoint, 1, seed=1)
        runtime.step()
        assert dapp.state is DappState.DEGRADED
        # error reports are emitted, runtime survives
        assert all(r.payload["type"] == "error" for r in dapp.reports)
        # recovery on first success
        ok = ranging_descriptor(m=5, cost=0.2)
        runtime.replace(dapp, ok)
        publish_cir_snapshots(endpoint, 1, seed=2)
        runtime.step()
        assert dapp.state is DappState.RUNNING

    def test_crashing_dapp_isolated_from_neighbour(self):
        def run(include_crasher):
            runtime = DappRuntime()
            site = cir_site()
            endpoint = e3.DuEndpoint()
            runtime.register_site(site, endpoint)
            good = runtime.deploy(ranging_descriptor("good", m=4, cost=0.2),
                                  site)
            if include_crasher:
                runtime.deploy(
                    ranging_descriptor("bad", m=4, cost=0.2,
                                       inject_failure=True), site)
            publish_cir_snapshots(endpoint, 12, seed=9)
            runtime.step()
            return json.dumps([r.to_body() for r in good.reports],
                              sort_keys=True)
        assert run(True) == run(False)


class TestReplace:
    def test_swap_updates_model_version(self):
        runtime = DappRuntime()
        site = cir_site()
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        dapp = runtime.deploy(ranging_descriptor(m=4), site)
        publish_cir_snapshots(endpoint, 4)
        runtime.step()
        new = DappDescriptor(
            dapp_id="rng1", function="ranging", input_kind="cir",
            params={**dapp.descriptor.params,
                    "music": {"subarray_len": 64, "model_order": 2,
                              "grid_stop_s": 2e-6, "grid_step_s": 1e-9}},
            compute_cost=0.2, model_version="2.0")
        runtime.replace(dapp, new)
        publish_cir_snapshots(endpoint, 4, seed=1)
        runtime.step()
        versions = [r.model_version for r in dapp.reports]
        assert versions == ["1.0", "2.0"]

    def test_over_budget_swap_keeps_old_running(self):
        runtime = DappRuntime()
        site = cir_site(budget=0.3)
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        dapp = runtime.deploy(ranging_descriptor(cost=0.2), site)
        big = ranging_descriptor(cost=0.9)
        with pytest.raises(InsufficientCompute):
            runtime.replace(dapp, big)
        assert dapp.state is DappState.RUNNING
        assert dapp.descriptor.compute_cost == 0.2
        assert runtime.remaining_budget("s1") == pytest.approx(0.1)

    def test_thousand_frames_with_midstream_swap(self):
        runtime = DappRuntime()
        site = cir_site()
        endpoint = e3.DuEndpoint(queue_capacity=2000)
        runtime.register_site(site, endpoint)
        dapp = runtime.deploy(ranging_descriptor(m=10), site)
        publish_cir_snapshots(endpoint, 500, k=16)
        runtime.step()
        runtime.replace(dapp, ranging_descriptor(
            m=10, music={"subarray_len": 8, "model_order": 2,
                         "grid_stop_s": 2e-6, "grid_step_s": 2e-9}))
        publish_cir_snapshots(endpoint, 500, k=16, seed=1)
        runtime.step()
        assert dapp.frames_processed == 1000
        assert dapp.stream.frames_sent == 1000
        assert dapp.stream.frames_dropped == 0

    def test_kind_change_rejected(self):
        runtime = DappRuntime()
        site = cir_site()
        runtime.register_site(site, e3.DuEndpoint())
        dapp = runtime.deploy(ranging_descriptor(), site)
        mono = DappDescriptor(dapp_id="m", function="monostatic",
                              input_kind="iq", params={}, compute_cost=0.1)
        with pytest.raises(StreamUnavailable):
            runtime.replace(dapp, mono)


class TestAccounting:
    def test_frames_in_equals_processed_plus_dropped(self):
        runtime = DappRuntime()
        site = cir_site()
        endpoint = e3.DuEndpoint(queue_capacity=256)
        runtime.register_site(site, endpoint)
        dapp = runtime.deploy(ranging_descriptor(m=1000), site)
        publish_cir_snapshots(endpoint, 300, k=16)
        runtime.step()
        assert dapp.stream.frames_sent == 300
        assert dapp.stream.frames_dropped == 44
        assert dapp.frames_processed == 256
        assert (dapp.stream.frames_sent
                == dapp.frames_processed + dapp.stream.frames_dropped)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from(["deploy", "replace", "stop"]),
                    min_size=1, max_size=30),
           st.randoms(use_true_random=False))
    def test_budget_conservation_random_ops(self, ops, rnd):
        runtime = DappRuntime()
        sites = [cir_site(f"site{i}", budget=1.0) for i in range(3)]
        for site in sites:
            runtime.register_site(site, e3.DuEndpoint())
        active = []
        for op in ops:
            site = rnd.choice(sites)
            cost = rnd.choice([0.15, 0.3, 0.6, 1.2])
            try:
                if op == "deploy":
                    active.append(runtime.deploy(
                        ranging_descriptor(f"d{len(active)}", cost=cost),
                        site))
                elif op == "replace" and active:
                    runtime.replace(rnd.choice(active),
                                    ranging_descriptor("r", cost=cost))
                elif op == "stop" and active:
                    runtime.stop(active.pop(rnd.randrange(len(active))))
            except (InsufficientCompute, StreamUnavailable):
                pass
            for s in sites:
                deployed = sum(d.descriptor.compute_cost
                               for d in runtime.dapps
                               if d.site.site_id == s.site_id
                               and d.state is not DappState.STOPPED)
                assert deployed <= s.compute_budget + 1e-9
                assert runtime.remaining_budget(s.site_id) == pytest.approx(
                    s.compute_budget - deployed)


class TestStateMachine:
    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.sampled_from(["ok_frame", "bad_frame", "swap_ok",
                                     "swap_bad", "stop"]),
                    min_size=1, max_size=40))
    def test_random_event_sequences_stay_in_allowed_graph(self, events):
        allowed = {
            (DappState.INIT, DappState.SUBSCRIBED),
            (DappState.SUBSCRIBED, DappState.RUNNING),
            (DappState.RUNNING, DappState.DEGRADED),
            (DappState.DEGRADED, DappState.RUNNING),
            (DappState.RUNNING, DappState.STOPPED),
            (DappState.DEGRADED, DappState.STOPPED),
        }
        runtime = DappRuntime(degrade_after=3)
        site = cir_site()
        endpoint = e3.DuEndpoint()
        runtime.register_site(site, endpoint)
        ok = ranging_descriptor("sm", m=1, cost=0.2)
        bad = ranging_descriptor("sm", m=1, cost=0.2, inject_failure=True)
        dapp = runtime.deploy(ok, site)
        seen = [DappState.SUBSCRIBED, DappState.RUNNING]
        frame_idx = 0
        for event in events:
            if dapp.state is DappState.STOPPED:
                break
            try:
                if event == "ok_frame" or event == "bad_frame":
                    want_bad = event == "bad_frame"
                    if want_bad != bool(
                            dapp.descriptor.params.get("inject_failure")):
                        runtime.replace(dapp, bad if want_bad else ok)
                    publish_cir_snapshots(endpoint, 1, k=16, seed=frame_idx)
                    frame_idx += 1
                    runtime.step()
                elif event == "swap_ok":
                    runtime.replace(dapp, ok)
                elif event == "swap_bad":
                    runtime.replace(dapp, bad)
                else:
                    runtime.stop(dapp)
            except (InsufficientCompute, StreamUnavailable):
                pass
            if dapp.state is not seen[-1]:
                seen.append(dapp.state)
        transitions = set(zip(seen, seen[1:]))
        transitions.add((DappState.INIT, seen[0]))
        assert transitions <= allowed


class TestKpis:
    def test_perfect_estimator_on_noiseless_input(self):
        runtime = DappRuntime()
        site = cir_site()
        endpoint = e3.DuEndpoint()
        tau = 320e-9
        from isacsim.waveform import C
        runtime.register_site(site, endpoint, truth={"range_m": C * tau})
        dapp = runtime.deploy(ranging_descriptor(
            m=4, music={"subarray_len": 64, "model_order": 2,
                        "grid_stop_s": 2e-6, "grid_step_s": 1e-9}), site)
        publish_cir_snapshots(endpoint, 8, tau=tau)
        runtime.step()
        kpi = runtime.report_kpis(dapp)
        assert kpi.detection_probability == 1.0
        assert kpi.false_alarm_rate == 0.0
        assert kpi.localization_rmse_m < 0.5
        assert kpi.processing_latency_s >= 0.0

    def test_idle_dapp_has_no_data(self):
        runtime = DappRuntime()
        site = cir_site()
        runtime.register_site(site, e3.DuEndpoint())
        dapp = runtime.deploy(ranging_descriptor(), site)
        with pytest.raises(NoData):
            runtime.report_kpis(dapp)

    def test_rich_multipath_subspace_kpi_windows(self):
        # paper-like scenario through the runtime: sub-meter RMSE in at
        # least 90% of per-report KPI windows
        from isacsim.waveform import C, indoor_ranging_profile
        profile = indoor_ranging_profile()
        runtime = DappRuntime()
        site = cir_site()
        endpoint = e3.DuEndpoint(queue_capacity=512)
        runtime.register_site(site, endpoint,
                              truth={"range_m": C * profile.los_delay_s})
        dapp = runtime.deploy(ranging_descriptor(
            m=20, music={"subarray_len": 512, "model_order": 6,
                         "grid_stop_s": 800e-9, "grid_step_s": 1e-9}), site)
        n_windows = 10
        snaps = synth_cir_snapshots(profile, 1024, DF, 20 * n_windows, 0.1,
                                    np.random.SeedSequence((4, 0)))
        for i, snap in enumerate(snaps):
            endpoint.publish("cir", e3.cir_frame_payload(snap),
                             timestamp_ns=i * 500_000)
        runtime.step()
        assert len(dapp.reports) == n_windows
        good = 0
        for w in range(n_windows):
            kpi = runtime.report_kpis(
                dapp, window=(w * 20 * 500_000, (w + 1) * 20 * 500_000))
            good += kpi.localization_rmse_m < 1.0
        assert good >= 0.9 * n_windows
