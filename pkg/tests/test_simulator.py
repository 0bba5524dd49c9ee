import math

import numpy as np
import pytest

from vicount.dataset import ground_truth_total, save_sequence
from vicount.errors import ConfigError, ValidationError
from vicount.simulator import SimConfig, descriptor_stats, generate, write_groups_sidecar


def test_single_group_no_noise_crosses_arena():
    cfg = SimConfig(
        num_frames=30,
        fps=2.0,
        group_size_range=(3, 3),
        group_rate=0.0,
        initial_groups=1,
        occlusion_dropout=0.0,
        group_feature_corr=0.0,
        appearance_noise=0.0,
        seed=5,
    )
    seq = generate(cfg)
    counts = [f.n for f in seq.frames]
    assert counts[0] == 3
    # counts never increase after spawn: members only exit
    for a, b in zip(counts, counts[1:]):
        assert b <= a
    assert ground_truth_total(seq, 0.5) == 3  # inflow only at the spawn frame


def test_same_seed_bit_identical():
    cfg = SimConfig(num_frames=25, seed=42, occlusion_dropout=0.15)
    a, b = generate(cfg), generate(cfg)
    assert len(a.frames) == len(b.frames)
    for fa, fb in zip(a.frames, b.frames):
        assert fa.timestamp == fb.timestamp
        assert [o.identity for o in fa.observations] == [o.identity for o in fb.observations]
        for oa, ob in zip(fa.observations, fb.observations):
            assert oa.position == ob.position
            np.testing.assert_array_equal(oa.descriptor, ob.descriptor)
    assert a.groups == b.groups


def test_occlusion_rate_near_nominal():
    # same seed and dropout-independent trajectories: the q=0 twin counts the
    # potential observations, so the empirical deletion rate is a binomial
    # proportion with CI well inside [0.17, 0.23] at this sample size
    base = dict(num_frames=60, group_rate=0.8, initial_groups=4, seed=9)
    full = generate(SimConfig(occlusion_dropout=0.0, **base))
    dropped = generate(SimConfig(occlusion_dropout=0.2, **base))
    n_full = sum(f.n for f in full.frames)
    n_seen = sum(f.n for f in dropped.frames)
    assert n_full >= 1000
    rate = 1.0 - n_seen / n_full
    assert 0.17 <= rate <= 0.23


def test_occlusion_only_deletes():
    base = dict(num_frames=40, group_rate=0.5, initial_groups=2, seed=3)
    full = generate(SimConfig(occlusion_dropout=0.0, **base))
    dropped = generate(SimConfig(occlusion_dropout=0.3, **base))
    for ff, fd in zip(full.frames, dropped.frames):
        ids_full = {o.identity: o.position for o in ff.observations}
        for obs in fd.observations:
            assert obs.identity in ids_full
            assert obs.position == ids_full[obs.identity]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_identity_unique_within_frame(seed):
    seq = generate(SimConfig(num_frames=40, group_rate=0.7, occlusion_dropout=0.1, seed=seed))
    for frame in seq.frames:
        ids = [o.identity for o in frame.observations]
        assert len(ids) == len(set(ids))


def test_motion_smoothness_bound():
    cfg = SimConfig(num_frames=50, group_rate=0.6, seed=13, occlusion_dropout=0.0)
    seq = generate(cfg)
    bound = cfg.speed_range[1] / cfg.fps + 2.0 * math.sqrt(2.0) * cfg.pos_jitter + 1e-12
    last_pos = {}
    for frame in seq.frames:
        for obs in frame.observations:
            if obs.identity in last_pos:
                prev, t_prev = last_pos[obs.identity]
                if frame.timestamp - t_prev <= 1.0 / cfg.fps + 1e-9:
                    d = math.dist(obs.position, prev)
                    assert d <= bound
            last_pos[obs.identity] = (obs.position, frame.timestamp)


class TestDescriptorStats:
    def test_full_correlation_no_noise(self):
        cfg = SimConfig(num_frames=20, group_rate=0.5, seed=2,
                        group_feature_corr=1.0, appearance_noise=0.0)
        stats = descriptor_stats(generate(cfg))
        assert stats.n_within > 0
        assert stats.within_mean == pytest.approx(1.0, abs=1e-12)

    def test_zero_correlation_no_gap(self):
        cfg = SimConfig(num_frames=60, group_rate=0.8, initial_groups=4, seed=11,
                        group_feature_corr=0.0, appearance_noise=0.05)
        stats = descriptor_stats(generate(cfg))
        assert abs(stats.within_mean - stats.between_mean) < 0.1

    def test_margin_matches_generative_model(self):
        # Monte-Carlo oracle drawn straight from the descriptor construction,
        # independent of the simulator loop
        rho, sigma_f, dim = 0.8, 0.1, 32
        rng = np.random.default_rng(123)

        def unit(v):
            return v / np.linalg.norm(v)

        def descriptor(anchor, indiv):
            raw = rho * anchor + (1 - rho) * indiv + rng.normal(0, sigma_f, dim)
            return unit(raw)

        within, between = [], []
        for _ in range(10_000):
            a1, a2 = unit(rng.normal(size=dim)), unit(rng.normal(size=dim))
            v1, v2, v3 = (unit(rng.normal(size=dim)) for _ in range(3))
            within.append(float(np.dot(descriptor(a1, v1), descriptor(a1, v2))))
            between.append(float(np.dot(descriptor(a1, v1), descriptor(a2, v3))))
        mc_within, mc_between = np.mean(within), np.mean(between)
        assert mc_within - mc_between > 0.3

        cfg = SimConfig(num_frames=60, group_rate=0.8, initial_groups=4, seed=21,
                        group_feature_corr=rho, appearance_noise=sigma_f)
        stats = descriptor_stats(generate(cfg))
        assert stats.within_mean == pytest.approx(mc_within, abs=0.05)
        assert stats.between_mean == pytest.approx(mc_between, abs=0.05)
        assert stats.within_mean > stats.between_mean

    def test_requires_group_metadata(self, tmp_path):
        seq = generate(SimConfig(num_frames=10, seed=1))
        path = tmp_path / "x.jsonl"
        save_sequence(seq, path)
        from vicount.dataset import load_sequence

        with pytest.raises(ValidationError):
            descriptor_stats(load_sequence(path))


def test_groups_sidecar_round_trip(tmp_path):
    import json

    seq = generate(SimConfig(num_frames=10, seed=1))
    path = tmp_path / "g.json"
    write_groups_sidecar(seq, path)
    loaded = json.loads(path.read_text())
    assert loaded["groups"] == {str(k): v for k, v in seq.groups.items()}


@pytest.mark.parametrize(
    "bad",
    [
        dict(occlusion_dropout=1.0),
        dict(group_feature_corr=1.5),
        dict(speed_range=(0.0, 0.1)),
        dict(group_size_range=(0, 2)),
        dict(num_frames=0),
        dict(fps=0.0),
    ],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SimConfig(**bad)
