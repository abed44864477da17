import math

import numpy as np
import pytest

from crossrec.autodiff import Tensor
from crossrec.checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from crossrec.errors import ConfigError, DataError, NumericError
from crossrec.events import DatasetManifest, DomainSpec, Event, TrainingExample
from crossrec.ingest import ingest_events
from crossrec.model import ModelConfig, ModelParameters, VARIANT_DSE
from crossrec.pipeline import assemble_batch, build_examples, split_train_test
from crossrec.synthgen import GeneratorConfig, generate_dataset
from crossrec.training import (
    LossBreakdown,
    TrainConfig,
    in_batch_candidates,
    multitask_loss,
    sampled_softmax_loss,
    train,
    write_trace,
)


def manifest():
    return DatasetManifest(
        domains=(DomainSpec(0, "a", 30, (4,)), DomainSpec(1, "b", 30, (4,)))
    )


def config(**kw):
    base = dict(f=8, layers=1, heads=2, id_emb_dim=4, cat_emb_dim=2, domain_emb_dim=2,
                positional_capacity=16, cross_layers=1)
    base.update(kw)
    return ModelConfig(**base)


def example(user_id, label_domain=0, label_item=None, n=3, seed=None):
    rng = np.random.default_rng(user_id if seed is None else seed)
    ctx = [
        Event(domain=int(rng.integers(0, 2)), item_id=int(rng.integers(0, 30)), ts_ms=i,
              intent=0, cats=(int(rng.integers(0, 4)),), prop=float(rng.normal()))
        for i in range(n)
    ]
    item = int(rng.integers(0, 30)) if label_item is None else label_item
    label = Event(domain=label_domain, item_id=item, ts_ms=n, intent=1, cats=(0,), prop=0.25)
    return TrainingExample(user_id=user_id, context=ctx, label=label)


class TestSampledSoftmax:
    def test_two_equal_candidates(self):
        scores = Tensor(np.zeros((2, 2)))
        allowed = np.ones((2, 2), bool)
        loss = sampled_softmax_loss(scores, allowed, np.array([0, 1]))
        assert math.isclose(float(loss.data), math.log(2.0), rel_tol=1e-12)

    def test_four_equal_candidates(self):
        scores = Tensor(np.zeros((1, 4)))
        loss = sampled_softmax_loss(scores, np.ones((1, 4), bool), np.array([0]))
        assert math.isclose(float(loss.data), math.log(4.0), rel_tol=1e-12)

    def test_dominant_positive_drives_loss_down(self):
        scores = Tensor(np.array([[30.0, 0.0, 0.0]]))
        loss = sampled_softmax_loss(scores, np.ones((1, 3), bool), np.array([0]))
        assert float(loss.data) < 1e-9

    def test_masked_positive_rejected(self):
        allowed = np.ones((2, 2), bool)
        allowed[1, 1] = False
        with pytest.raises(NumericError):
            sampled_softmax_loss(Tensor(np.zeros((2, 2))), allowed, np.array([0, 1]))

    def test_lonely_row_contributes_zero(self):
        allowed = np.array([[True, False], [True, True]])
        loss = sampled_softmax_loss(Tensor(np.zeros((2, 2))), allowed, np.array([0, 1]))
        assert math.isclose(float(loss.data), math.log(2.0) / 2.0, rel_tol=1e-12)


class TestInBatchCandidates:
    def test_collision_masked_both_ways(self):
        exs = [example(0, label_item=5), example(1, label_item=5), example(2, label_item=9)]
        allowed = in_batch_candidates(assemble_batch(exs, manifest()))
        assert allowed.diagonal().all()
        assert not allowed[0, 1] and not allowed[1, 0]
        assert allowed[0, 2] and allowed[2, 0] and allowed[1, 2]

    def test_same_item_other_domain_allowed(self):
        exs = [example(0, label_domain=0, label_item=5), example(1, label_domain=1, label_item=5)]
        allowed = in_batch_candidates(assemble_batch(exs, manifest()))
        assert allowed.all()

    def test_batch_of_one_rejected(self):
        with pytest.raises(ConfigError):
            in_batch_candidates(assemble_batch([example(0)], manifest()))


class TestLossBreakdown:
    def test_identity_is_exact(self):
        batch = assemble_batch([example(0), example(1, label_domain=1)], manifest())
        params = ModelParameters.init(config(), manifest(), seed=0)
        total, breakdown = multitask_loss(batch, params, 1.0, 0.1)
        assert float(total.data) == breakdown.total
        breakdown.validate(1.0, 0.1)

    def test_zero_weights_reduce_to_retrieval(self):
        batch = assemble_batch([example(0), example(1, label_domain=1)], manifest())
        params = ModelParameters.init(config(), manifest(), seed=0)
        total, breakdown = multitask_loss(batch, params, 0.0, 0.0)
        assert breakdown.total == breakdown.retrieval
        assert float(total.data) == breakdown.retrieval

    def test_uniform_domain_head_gives_log_d(self):
        params = ModelParameters.init(config(), manifest(), seed=0)
        params.dom_w.data = np.zeros_like(params.dom_w.data)
        params.dom_b.data = np.zeros_like(params.dom_b.data)
        batch = assemble_batch([example(0), example(1, label_domain=1)], manifest())
        _, breakdown = multitask_loss(batch, params, 1.0, 0.1)
        assert math.isclose(breakdown.domain, math.log(2.0), rel_tol=1e-12)

    def test_exact_property_prediction_gives_zero(self):
        params = ModelParameters.init(config(), manifest(), seed=0)
        params.prop_w.data = np.zeros_like(params.prop_w.data)
        params.prop_b.data = np.zeros_like(params.prop_b.data)
        exs = [example(0), example(1)]
        exs = [
            TrainingExample(e.user_id, e.context,
                            Event(e.label.domain, e.label.item_id, e.label.ts_ms,
                                  e.label.intent, e.label.cats, 0.0))
            for e in exs
        ]
        _, breakdown = multitask_loss(assemble_batch(exs, manifest()), params, 1.0, 0.1)
        assert breakdown.property == 0.0
        assert breakdown.total == breakdown.retrieval + 1.0 * breakdown.domain

    def test_broken_identity_rejected(self):
        bad = LossBreakdown(step=3, retrieval=0.5, domain=0.5, property=0.0, total=1.0 + 1e-9)
        with pytest.raises(NumericError, match="step 3"):
            bad.validate(1.0, 0.1)

    def test_negative_term_rejected(self):
        bad = LossBreakdown(step=1, retrieval=-0.5, domain=0.5, property=0.0, total=0.0)
        with pytest.raises(NumericError):
            bad.validate(1.0, 0.0)

    def test_csv_row_roundtrips_floats(self):
        row = LossBreakdown(step=2, retrieval=1.0 / 3.0, domain=0.1, property=2.0,
                            total=1.0 / 3.0 + 0.1 + 0.2).csv_row()
        parts = row.split(",")
        assert parts[0] == "2"
        assert float(parts[1]) == 1.0 / 3.0


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinydata")
    cfg = GeneratorConfig(
        user_count=40, domain_count=2, vocab_sizes=(60, 60), intent_count=4,
        cluster_size=15, events_min=24, events_max=60, signal_strength=(0.9,),
        seed=11,
    )
    paths = generate_dataset(cfg, out)
    man = DatasetManifest.from_json(paths["manifest"].read_text(encoding="utf-8"))
    per_user = ingest_events(paths["events"], man)
    per_user_examples = build_examples(per_user, window_len=12)
    train_ex, test_ex = split_train_test(per_user_examples)
    return man, train_ex, test_ex


class TestTrainLoop:
    def test_loss_decreases(self, tiny_dataset):
        man, train_ex, _ = tiny_dataset
        params = ModelParameters.init(config(f=16, id_emb_dim=8), man, seed=3)
        cfg = TrainConfig(batch_size=16, epochs=3, learning_rate=3e-3, seed=0)
        _, trace = train(train_ex, params, cfg, man)
        steps_per_epoch = len(trace) // 3
        first = sum(r.total for r in trace[:steps_per_epoch]) / steps_per_epoch
        last = sum(r.total for r in trace[-steps_per_epoch:]) / steps_per_epoch
        assert last < first

    def test_trace_is_deterministic(self, tiny_dataset, tmp_path):
        man, train_ex, _ = tiny_dataset
        cfg = TrainConfig(batch_size=16, epochs=2, learning_rate=1e-3, seed=5)
        paths = []
        for run in range(2):
            params = ModelParameters.init(config(), man, seed=9)
            p = tmp_path / f"trace{run}.csv"
            train(train_ex, params, cfg, man, trace_path=p)
            paths.append(p)
        a, b = (p.read_bytes() for p in paths)
        assert a == b
        assert a.startswith(b"step,retrieval,domain,property,total\n")

    def test_trained_params_are_deterministic(self, tiny_dataset):
        man, train_ex, _ = tiny_dataset
        cfg = TrainConfig(batch_size=16, epochs=1, learning_rate=1e-3, seed=5)
        outs = []
        for _ in range(2):
            params = ModelParameters.init(config(), man, seed=9)
            train(train_ex[:32], params, cfg, man)
            outs.append(np.concatenate([t.data.ravel() for t in params.tensors()]))
        assert np.array_equal(outs[0], outs[1])

    def test_variant_mismatch_rejected(self, tiny_dataset):
        man, train_ex, _ = tiny_dataset
        params = ModelParameters.init(config(variant=VARIANT_DSE), man, seed=0)
        with pytest.raises(ConfigError, match="variant"):
            train(train_ex, params, TrainConfig(epochs=1, variant="Base"), man)

    def test_empty_training_set_rejected(self, tiny_dataset):
        man, _, _ = tiny_dataset
        params = ModelParameters.init(config(), man, seed=0)
        with pytest.raises(ConfigError):
            train([], params, TrainConfig(epochs=1), man)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_abort_names_step_and_term(self, tiny_dataset):
        man, train_ex, _ = tiny_dataset
        params = ModelParameters.init(config(), man, seed=0)
        params.proj_w1.data = params.proj_w1.data * 1e200
        with pytest.raises(NumericError, match=r"aborted at step 1.*retrieval"):
            train(train_ex, params, TrainConfig(batch_size=8, epochs=1), man)

    def test_remainder_chunk_of_one_skipped(self, tiny_dataset):
        man, train_ex, _ = tiny_dataset
        params = ModelParameters.init(config(), man, seed=0)
        cfg = TrainConfig(batch_size=len(train_ex[:9]) - 1, epochs=1)
        _, trace = train(train_ex[:9], params, cfg, man)
        assert len(trace) == 1

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=1).validate()
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0).validate()
        with pytest.raises(ConfigError):
            TrainConfig(lambda_domain=-1.0).validate()

    def test_write_trace_layout(self, tmp_path):
        rows = [LossBreakdown(1, 0.5, 0.25, 0.0, 0.75)]
        path = tmp_path / "t.csv"
        write_trace(rows, path)
        text = path.read_text(encoding="utf-8")
        assert text == "step,retrieval,domain,property,total\n1,0.5,0.25,0.0,0.75\n"


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        params = ModelParameters.init(config(variant=VARIANT_DSE), manifest(), seed=4)
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.config == params.config
        assert loaded.manifest == params.manifest
        for (name_a, t_a), (name_b, t_b) in zip(params.named_parameters(), loaded.named_parameters()):
            assert name_a == name_b
            assert np.array_equal(t_a.data, t_b.data), name_a

    def test_save_is_deterministic(self, tmp_path):
        params = ModelParameters.init(config(), manifest(), seed=4)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(params, p1)
        save_checkpoint(params, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert checkpoint_id(p1) == checkpoint_id(p2)
        assert len(checkpoint_id(p1)) == 12

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        params = ModelParameters.init(config(), manifest(), seed=0)
        save_checkpoint(params, path)
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        params = ModelParameters.init(config(), manifest(), seed=0)
        save_checkpoint(params, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(path)

    def test_config_mismatch_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(ModelParameters.init(config(), manifest(), seed=0), path)
        with pytest.raises(DataError, match="config"):
            load_checkpoint(path, expect_config=config(f=16, id_emb_dim=8))

    def test_shape_mismatch_names_tensor(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(ModelParameters.init(config(), manifest(), seed=0), path)
        data = path.read_bytes()
        assert data.count(b'"f": 8') == 1
        path.write_bytes(data.replace(b'"f": 8', b'"f": 4'))
        with pytest.raises(DataError, match="shape mismatch"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_train_writes_final_checkpoint(self, tmp_path, tiny_dataset):
        man, train_ex, _ = tiny_dataset
        params = ModelParameters.init(config(), man, seed=0)
        ckpt = tmp_path / "final.ckpt"
        train(train_ex[:8], params, TrainConfig(batch_size=4, epochs=1), man,
              checkpoint_path=ckpt)
        loaded = load_checkpoint(ckpt)
        for (_, t_a), (_, t_b) in zip(params.named_parameters(), loaded.named_parameters()):
            assert np.array_equal(t_a.data, t_b.data)
