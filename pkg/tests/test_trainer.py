"""
Test the dual-objective trainer.

"""

import math
import os
from dataclasses import replace
from unittest import TestCase, mock

import numpy as np
import pandas as pd
from parameterized import parameterized

from autograd.tensor import backward
from learning.audit import WeightAudit
from learning.datagen import DatasetError, Splits
from learning.enums import AlphaGranularity, Method, Task
from learning.losses import task_loss
from learning.trainer import (
    Batch,
    RoutingError,
    Trainer,
    TrainingAborted,
    evaluate,
    train,
    train_step,
)
from models.checkpoint import load_checkpoint
from models.svae import ArchitectureError

from .mixins import BenchTestMixin


class TrainerTestMixin(BenchTestMixin):
    def make_trainer(self, config=None, method=None, **kwargs):
        config = config or self.config
        if method is not None:
            config = replace(config, method=method)
        return Trainer(config, self.make_network(config), **kwargs)

    def make_batch(self, config=None, size=8):
        view = self.make_splits(config).train.training_view()
        return Batch(view.features[:size], view.labels[:size], view.sample_ids[:size])


class TestTrainStep(TrainerTestMixin, TestCase):
    def test_step__updates_both_sets(self):
        trainer = self.make_trainer()
        before = trainer.network.snapshot()
        result = train_step(self.make_batch(), trainer)
        after = trainer.network.snapshot()
        self.assertFalse(np.array_equal(before["phi.0.weight"], after["phi.0.weight"]))
        self.assertFalse(np.array_equal(before["svae.encoder.weight"], after["svae.encoder.weight"]))
        self.assertEqual(len(result.weights), 8)
        self.assertEqual(result.weights.alpha, 1.0)
        self.assertIsNotNone(result.weighted_svae_loss)
        self.assertLessEqual(result.weighted_main_loss, result.main_loss + 1e-12)
        for param in trainer.network.parameters().values():
            self.assertFalse(param.grad.any())

    def test_step__baseline(self):
        trainer = self.make_trainer(method=Method.CEL_BASELINE)
        result = trainer.train_step(self.make_batch())
        np.testing.assert_array_equal(result.weights.weights, np.ones(8))
        self.assertEqual(trainer.alpha(), 0.0)
        self.assertIsNone(result.svae_loss)
        self.assertAlmostEqual(result.main_loss, result.weighted_main_loss, places=12)

    def test_step__single_sample_is_unweighted(self):
        batch = self.make_batch(size=1)
        reweighted = self.make_trainer()
        baseline = self.make_trainer(method=Method.CEL_BASELINE)
        result = reweighted.train_step(batch)
        baseline.train_step(batch)
        np.testing.assert_array_equal(result.weights.weights, [1.0])
        main = baseline.network.main_parameters()
        for name, param in reweighted.network.main_parameters().items():
            np.testing.assert_array_equal(param.data, main[name].data, err_msg=name)

    def test_step__empty_batch(self):
        trainer = self.make_trainer()
        batch = self.make_batch()
        with self.assertRaises(DatasetError):
            trainer.train_step(Batch(batch.features[:0], batch.labels[:0], batch.sample_ids[:0]))

    def test_step__observer(self):
        observer = mock.Mock()
        trainer = self.make_trainer(observer=observer)
        batch = self.make_batch()
        trainer.train_step(batch, 3)
        epoch, step, ids, weights = observer.record.call_args.args
        self.assertEqual((epoch, step), (1, 3))
        np.testing.assert_array_equal(ids, batch.sample_ids)
        self.assertEqual(len(weights), len(batch))

    def test_weighted_objective_is_linear(self):
        """
        The gradient of mean(w * L) over two samples is the w-weighted mean of
        the per-sample gradients.

        """
        network = self.make_network()
        batch = self.make_batch(size=2)
        weights = np.array([0.3, 1.0])

        def grads(objective):
            backward(objective)
            values = {name: param.grad.copy() for name, param in network.main_parameters().items()}
            for param in network.parameters().values():
                param.zero_grad()
            return values

        def losses(index):
            _, logits = network.forward_main(batch.features[index])
            return task_loss(Task.MULTILABEL, logits, batch.labels[index])

        both = grads((losses(slice(0, 2)) * weights).mean())
        first = grads(losses(slice(0, 1)).sum())
        second = grads(losses(slice(1, 2)).sum())
        for name in both:
            np.testing.assert_allclose(both[name], (0.3 * first[name] + second[name]) / 2, atol=1e-12)


class TestRouting(TrainerTestMixin, TestCase):
    @parameterized.expand([(Task.MULTILABEL,), (Task.SEGMENTATION,)])
    def test_probe__isolated(self, task):
        config = replace(self.config, task=task, probe_routing=True)
        trainer = self.make_trainer(config)
        trainer.train_step(self.make_batch(config))
        for param in trainer.network.parameters().values():
            self.assertFalse(param.grad.any())

    def test_probe__leak(self):
        trainer = self.make_trainer()
        trainer.network.branch.isolate = False
        with self.assertRaises(RoutingError):
            trainer.probe_routing(self.make_batch())

    def test_probe__leaves_state(self):
        trainer = self.make_trainer(replace(self.config, probe_routing=True))
        reference = self.make_trainer()
        batch = self.make_batch()
        trainer.train_step(batch)
        reference.train_step(batch)
        for name, value in reference.network.snapshot().items():
            np.testing.assert_array_equal(trainer.network.snapshot()[name], value)


class TestAbort(TrainerTestMixin, TestCase):
    def _diverge(self, trainer):
        trainer.network.branch.encoder.layer.weight.data[...] = 1e6
        trainer.network.branch.encoder.layer.bias.data[...] = 1e6

    def test_abort__dump(self):
        trainer = self.make_trainer(run_dir=self.tmpdir)
        self._diverge(trainer)
        batch = self.make_batch()
        with mock.patch("learning.trainer._log") as log:
            with self.assertRaises(TrainingAborted) as context:
                trainer.train_step(batch, 2)
        log.error.assert_called_once()
        path = context.exception.dump_path
        self.assertEqual(path, os.path.join(self.tmpdir, "abort_epoch0_step2.txt"))
        with open(path, encoding="utf-8") as dump:
            text = dump.read()
        self.assertIn("alpha: 1.0", text)
        self.assertIn(" ".join(str(i) for i in batch.sample_ids), text)
        self.assertIn("svae.encoder.weight", text)

    def test_abort__temp_dir(self):
        trainer = self.make_trainer()
        self._diverge(trainer)
        with mock.patch("learning.trainer.tempfile.gettempdir", return_value=self.tmpdir):
            with self.assertRaises(TrainingAborted) as context:
                trainer.train_step(self.make_batch())
        self.assertTrue(context.exception.dump_path.startswith(self.tmpdir))


class TestFit(TrainerTestMixin, TestCase):
    @parameterized.expand([(Task.MULTILABEL,), (Task.SEGMENTATION,)])
    def test_zero_alpha_matches_baseline(self, task):
        """
        With alpha pinned to 0 every weight is exactly 1, so the main
        parameters follow the cross-entropy baseline bit for bit.

        """
        config = replace(self.config, task=task, epochs=3, alpha_override=0.0, save_checkpoints=False)
        splits = self.make_splits(config)
        reweighted = train(config, splits)
        baseline = train(replace(config, method=Method.CEL_BASELINE), splits)
        main = baseline.network.main_parameters()
        for name, param in reweighted.network.main_parameters().items():
            np.testing.assert_array_equal(param.data, main[name].data, err_msg=name)
        self.assertEqual(reweighted.test_metrics, baseline.test_metrics)
        self.assertEqual([r.main_loss for r in reweighted.reports], [r.main_loss for r in baseline.reports])

    def test_deterministic(self):
        splits = self.make_splits()
        first = train(self.config, splits)
        second = train(self.config, splits)
        for name, value in first.network.snapshot().items():
            np.testing.assert_array_equal(second.network.snapshot()[name], value)
        self.assertEqual([r.as_row() for r in first.reports], [r.as_row() for r in second.reports])

    def test_zero_epochs(self):
        config = replace(self.config, epochs=0)
        splits = self.make_splits(config)
        initial = self.make_network(config).snapshot()
        result = train(config, splits)
        self.assertEqual(result.best_epoch, 0)
        self.assertEqual(result.reports, [])
        for name, value in initial.items():
            np.testing.assert_array_equal(result.network.snapshot()[name], value)

    def test_best_epoch_and_checkpoint(self):
        config = replace(self.config, epochs=4)
        result = train(config, self.make_splits(config), run_dir=self.tmpdir)
        metrics = [report.val_metric for report in result.reports]
        self.assertEqual(result.best_epoch, int(np.argmax(metrics)) + 1)
        self.assertEqual(result.val_metric, max(metrics))
        stored = load_checkpoint(os.path.join(self.tmpdir, "best"))
        for name, value in result.network.snapshot().items():
            np.testing.assert_array_equal(stored[name], value)
        epochs = pd.read_csv(os.path.join(self.tmpdir, "epochs.csv"))
        self.assertEqual(epochs["epoch"].tolist(), [1, 2, 3, 4])
        self.assertEqual(result.metric_name, "macro_f1")
        self.assertEqual(result.metric, result.test_metrics["macro_f1"])

    def test_alpha_decays_per_epoch(self):
        config = replace(self.config, epochs=3)
        result = train(config, self.make_splits(config))
        alphas = [report.alpha for report in result.reports]
        self.assertEqual(alphas[0], 1.0)
        self.assertTrue(alphas[0] > alphas[1] > alphas[2])

    def test_step_granularity_uses_batches_per_epoch(self):
        config = replace(self.config, alpha_granularity=AlphaGranularity.STEP, epochs=1)
        splits = self.make_splits(config)
        trainer = Trainer(config, self.make_network(config))
        trainer.fit(splits.train.training_view(), splits.validation)
        expected = math.ceil(len(splits.train) / config.batch_size)
        self.assertEqual(trainer.state.schedule.steps_per_epoch, expected)
        self.assertEqual(trainer.state.step, expected)

    def test_weight_summaries(self):
        splits = self.make_splits()
        observer = WeightAudit(flags=splits.train.noise_flags())
        result = train(self.config, splits, observer=observer)
        for report in result.reports:
            self.assertTrue(0.0 <= report.mean_weight_noisy <= 1.0)
            self.assertTrue(0.0 <= report.mean_weight_clean <= 1.0)

    def test_empty_split(self):
        splits = self.make_splits()
        empty = Splits(splits.train, splits.validation.subset([]), splits.test)
        with self.assertRaises(DatasetError):
            train(self.config, empty)


class TestEvaluate(TrainerTestMixin, TestCase):
    def test_task_mismatch(self):
        network = self.make_network()
        with self.assertRaises(ArchitectureError):
            evaluate(network, self.make_splits(self.seg_config).test, Task.SEGMENTATION)

    def test_segmentation_metric(self):
        network = self.make_network(self.seg_config)
        scores = evaluate(network, self.make_splits(self.seg_config).test, Task.SEGMENTATION)
        self.assertTrue(0.0 <= scores["overall_accuracy"] <= 1.0)

    def test_inputs_unchanged(self):
        splits = self.make_splits()
        features = splits.train.features.copy()
        train(self.config, splits)
        np.testing.assert_array_equal(splits.train.features, features)
