import numpy as np
import pytest

from guidedlabel import nn
from guidedlabel.augment import AugmentPolicy, augment
from guidedlabel.confusion import mean_rde
from guidedlabel.data import load_run_state, make_pools
from guidedlabel.loop import (LoopError, Oracle, OracleError, ScheduleConfig,
                              SimulatedOracle, StopRule, label_confusing_samples,
                              run, schedule_n)
from guidedlabel.training import TrainConfig
from tests.conftest import make_toy_dataset

MLP = [nn.flatten(), nn.dense(16), nn.relu(), nn.dense(10), nn.softmax()]


def tiny_cfg():
    return TrainConfig(adam=nn.AdamConfig(learning_rate=0.01), batch_size=16,
                       patience_epochs=2, max_epochs=4,
                       policy=AugmentPolicy(target_size=(8, 8)))


class TestSchedule:
    def test_exponential_doubles(self):
        cfg = ScheduleConfig("exponential", s=160)
        assert [schedule_n(i, cfg) for i in (1, 2, 3, 4)] == [160, 320, 640, 1280]

    def test_cumulative_labels_double_too(self):
        cfg = ScheduleConfig("exponential", s=100)
        total = 100  # initial seed set of size s
        for i in range(1, 6):
            assert schedule_n(i, cfg) == total  # batch equals current pool size
            total += schedule_n(i, cfg)

    def test_fixed(self):
        cfg = ScheduleConfig("fixed", fixed_n=25)
        assert all(schedule_n(i, cfg) == 25 for i in range(1, 10))

    def test_invalid(self):
        with pytest.raises(ValueError):
            ScheduleConfig("linear")
        with pytest.raises(ValueError):
            ScheduleConfig("fixed", fixed_n=0)
        with pytest.raises(ValueError):
            schedule_n(0, ScheduleConfig())


class TestLabelConfusingSamples:
    def test_matches_brute_force_scan(self, toy_ds, toy_policy):
        pool = make_pools(toy_ds, initial_labeled=20, validation=40, seed=1)
        net = nn.build_network(MLP, (8, 8, 1), seed=1)
        got = label_confusing_samples(net, toy_ds, pool, n=15, k=4,
                                      policy=toy_policy, seed=9)
        # independent oracle: per-image scores, full sort
        scored = [(mean_rde(net, toy_ds.sample(i), toy_policy, 4, 9).mean_rde_bits, i)
                  for i in pool.unlabeled_ids]
        want = [i for _, i in sorted(scored, key=lambda t: (-t[0], t[1]))][:15]
        assert got == want

    def test_clamps_to_pool_size(self, toy_ds, toy_policy):
        pool = make_pools(toy_ds, initial_labeled=20, validation=40, seed=1)
        keep = sorted(pool.unlabeled_ids)[:5]
        pool.unlabeled_ids.intersection_update(keep)
        pool.test_ids.update(set(range(len(toy_ds))) - pool.labeled_ids
                             - pool.validation_ids - pool.unlabeled_ids)
        net = nn.build_network(MLP, (8, 8, 1), seed=1)
        got = label_confusing_samples(net, toy_ds, pool, n=50, k=2,
                                      policy=toy_policy, seed=0)
        assert sorted(got) == keep

    def test_scores_dumped_descending(self, toy_ds, toy_policy, tmp_path):
        from guidedlabel.confusion import load_scores
        pool = make_pools(toy_ds, initial_labeled=20, validation=40, seed=2)
        net = nn.build_network(MLP, (8, 8, 1), seed=2)
        out = tmp_path / "scores.csv"
        label_confusing_samples(net, toy_ds, pool, n=5, k=2,
                                policy=toy_policy, seed=1, scores_out=out)
        scores = load_scores(out)
        assert len(scores) == len(pool.unlabeled_ids)
        vals = [s.mean_rde_bits for s in scores]
        assert vals == sorted(vals, reverse=True)


class TestSimulatedOracle:
    def test_returns_ground_truth(self, toy_ds):
        oracle = SimulatedOracle(toy_ds)
        ids = [5, 0, 17]
        assert oracle.label(ids) == [int(toy_ds.labels[i]) for i in ids]

    def test_unknown_id_rejected(self, toy_ds):
        with pytest.raises(OracleError):
            SimulatedOracle(toy_ds).label([len(toy_ds)])


class BadOracle(Oracle):
    def __init__(self, reply):
        self.reply = reply

    def label(self, sample_ids):
        return self.reply(sample_ids)


class TestRun:
    def run_arm(self, mode, out_dir, seed=7, stop=None, schedule=None, ds=None):
        ds = ds or make_toy_dataset(n=400, train_count=300, seed=42)
        pool = make_pools(ds, initial_labeled=20, validation=60, seed=seed)
        return ds, run(
            mode, ds, pool, MLP, tiny_cfg(),
            schedule or ScheduleConfig("exponential", s=20), k=2,
            oracle=SimulatedOracle(ds), stop=stop or StopRule(max_iterations=3),
            out_dir=out_dir, root_seed=seed)

    def test_guided_history_shape(self, tmp_path):
        ds, state = self.run_arm("guided", tmp_path / "g")
        assert [r.iteration for r in state.history] == [1, 2, 3]
        assert [r.trained_size for r in state.history] == [20, 40, 80]
        assert [r.labeled_size for r in state.history] == [40, 80, 160]
        assert [len(r.selected_ids) for r in state.history] == [20, 40, 80]
        for r in state.history:
            assert sum(r.class_counts) == r.labeled_size
            assert 0 <= r.validation_accuracy <= 1
            assert 0 <= r.test_accuracy <= 1
        state.pool.check(len(ds))
        assert set(state.labels) == state.pool.labeled_ids
        assert all(state.labels[i] == int(ds.labels[i]) for i in state.labels)

    def test_artifacts_written(self, tmp_path):
        out = tmp_path / "g"
        self.run_arm("guided", out)
        for i in (1, 2, 3):
            assert (out / f"net_iter_{i:03d}.npz").exists()
            assert (out / f"scores_iter_{i:03d}.csv").exists()
        assert (out / "run_state.json").exists()
        lines = (out / "events.log").read_text().strip().splitlines()
        assert len(lines) == 3 and all("wall_time=" in l for l in lines)

    def test_random_arm_same_schedule_no_score_files(self, tmp_path):
        out = tmp_path / "r"
        ds, state = self.run_arm("random", out)
        assert [len(r.selected_ids) for r in state.history] == [20, 40, 80]
        assert not list(out.glob("scores_iter_*.csv"))

    def test_pool_guard_stops_before_training(self, tmp_path):
        # 300 train ids, 60 validation, 20 initial: 220 unlabeled.
        # Requests go 20 (220 left -> 200), 40 (-> 160), 80 (-> 80),
        # 160 > 80 so the run must stop after iteration 3.
        ds, state = self.run_arm("guided", tmp_path / "g",
                                 stop=StopRule(max_iterations=50))
        assert state.iteration == 3
        assert len(state.pool.unlabeled_ids) == 80

    def test_exhaust_consumes_pool_and_final_eval(self, tmp_path):
        ds = make_toy_dataset(n=400, train_count=300, seed=42)
        pool = make_pools(ds, initial_labeled=20, validation=60, seed=7)
        state = run("guided", ds, pool, MLP, tiny_cfg(),
                    ScheduleConfig("exponential", s=20), k=2,
                    oracle=SimulatedOracle(ds), stop=StopRule(),
                    out_dir=tmp_path / "x", root_seed=7, exhaust=True)
        assert len(state.pool.unlabeled_ids) == 0
        # clamped batch of 80 at iteration 4, then a final eval-only pass
        assert [len(r.selected_ids) for r in state.history] == [20, 40, 80, 80, 0]
        assert state.history[-1].trained_size == 240

    def test_budget_final_training_at_target_size(self, tmp_path):
        ds, state = self.run_arm(
            "guided", tmp_path / "b", stop=StopRule(max_labeled=80, max_iterations=50))
        # grows 20 -> 40 -> 80, then one more training pass at 80
        assert [r.trained_size for r in state.history] == [20, 40, 80]
        assert state.history[-1].selected_ids == []
        assert len(state.pool.labeled_ids) == 80

    def test_max_iterations_one(self, tmp_path):
        ds, state = self.run_arm("guided", tmp_path / "one",
                                 stop=StopRule(max_iterations=1))
        assert len(state.history) == 1

    def test_resume_equals_straight_through(self, tmp_path):
        ds = make_toy_dataset(n=400, train_count=300, seed=42)

        pool = make_pools(ds, initial_labeled=20, validation=60, seed=11)
        full = run("guided", ds, pool, MLP, tiny_cfg(),
                   ScheduleConfig("exponential", s=20), k=2,
                   oracle=SimulatedOracle(ds), stop=StopRule(max_iterations=3),
                   out_dir=tmp_path / "full", root_seed=11)

        pool2 = make_pools(ds, initial_labeled=20, validation=60, seed=11)
        out = tmp_path / "resumed"
        run("guided", ds, pool2, MLP, tiny_cfg(),
            ScheduleConfig("exponential", s=20), k=2,
            oracle=SimulatedOracle(ds), stop=StopRule(max_iterations=2),
            out_dir=out, root_seed=11)
        loaded = load_run_state(out / "run_state.json")
        resumed = run("guided", ds, loaded.pool, MLP, tiny_cfg(),
                      ScheduleConfig("exponential", s=20), k=2,
                      oracle=SimulatedOracle(ds), stop=StopRule(max_iterations=3),
                      out_dir=out, root_seed=11, state=loaded)
        assert resumed.to_dict() == full.to_dict()

    def test_resume_wrong_seed_rejected(self, tmp_path):
        ds, state = self.run_arm("guided", tmp_path / "s",
                                 stop=StopRule(max_iterations=1))
        with pytest.raises(LoopError):
            run("guided", ds, state.pool, MLP, tiny_cfg(), ScheduleConfig(s=20),
                k=2, oracle=SimulatedOracle(ds), stop=StopRule(max_iterations=2),
                out_dir=tmp_path / "s", root_seed=999, state=state)

    def test_target_accuracy_stops(self, tmp_path):
        ds, state = self.run_arm(
            "guided", tmp_path / "t",
            stop=StopRule(target_accuracy=0.0, max_iterations=50))
        assert len(state.history) == 1
        assert state.history[0].selected_ids == []

    def test_oracle_miscount_raises_with_state_saved(self, tmp_path):
        ds = make_toy_dataset(n=400, train_count=300, seed=42)
        pool = make_pools(ds, initial_labeled=20, validation=60, seed=3)
        out = tmp_path / "bad"
        with pytest.raises(OracleError):
            run("guided", ds, pool, MLP, tiny_cfg(), ScheduleConfig(s=20), k=2,
                oracle=BadOracle(lambda ids: [0] * (len(ids) - 1)),
                stop=StopRule(max_iterations=2), out_dir=out, root_seed=3)
        assert (out / "run_state.json").exists()

    def test_oracle_label_out_of_range_raises(self, tmp_path):
        ds = make_toy_dataset(n=400, train_count=300, seed=42)
        pool = make_pools(ds, initial_labeled=20, validation=60, seed=3)
        with pytest.raises(OracleError):
            run("guided", ds, pool, MLP, tiny_cfg(), ScheduleConfig(s=20), k=2,
                oracle=BadOracle(lambda ids: [10] * len(ids)),
                stop=StopRule(max_iterations=2), out_dir=tmp_path / "oob",
                root_seed=3)

    def test_invalid_mode(self, toy_ds, tmp_path):
        pool = make_pools(toy_ds, 20, 60, seed=0)
        with pytest.raises(LoopError):
            run("clever", toy_ds, pool, MLP, tiny_cfg(), ScheduleConfig(s=20),
                k=2, oracle=SimulatedOracle(toy_ds), stop=StopRule(),
                out_dir=tmp_path, root_seed=0)
