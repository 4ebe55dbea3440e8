"""
Test the network, its SVAE branch and checkpoints.

"""

import os
from dataclasses import replace
from unittest import TestCase

import numpy as np
from parameterized import parameterized

from autograd import gradcheck
from autograd.tensor import ShapeError, Tensor, backward
from learning.enums import Method, Task
from learning.losses import kl_gaussian, mse_features, svae_loss, task_loss
from models.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from models.layers import MLP, Affine
from models.svae import Architecture, ArchitectureError, DivergenceError, init_params

from .mixins import BenchTestMixin, TempDirMixin


class TestLayers(TestCase):
    def test_affine(self):
        rng = np.random.default_rng(0)
        layer = Affine.initialize("layer", 4, 3, rng)
        self.assertEqual((layer.fan_in, layer.fan_out), (4, 3))
        self.assertTrue(np.all(np.abs(layer.weight.data) <= np.sqrt(6.0 / 4)))
        np.testing.assert_array_equal(layer.bias.data, np.zeros(3))
        self.assertEqual(sorted(layer.parameters()), ["layer.bias", "layer.weight"])
        self.assertEqual(layer(Tensor(np.ones((2, 5, 4)))).shape, (2, 5, 3))

    def test_affine__variance(self):
        layer = Affine.initialize("wide", 400, 300, np.random.default_rng(3))
        self.assertAlmostEqual(layer.weight.data.var() * 400, 2.0, delta=0.4)
        self.assertAlmostEqual(layer.weight.data.mean(), 0.0, delta=0.01)

    def test_affine__zero(self):
        layer = Affine.initialize("head", 4, 3, np.random.default_rng(0), zero=True)
        np.testing.assert_array_equal(layer.weight.data, np.zeros((4, 3)))

    def test_mlp(self):
        mlp = MLP.initialize("phi", [5, 8, 6], np.random.default_rng(0))
        self.assertEqual(mlp.out_dim, 6)
        self.assertEqual(len(mlp.parameters()), 4)
        out = mlp(Tensor(np.random.default_rng(1).normal(size=(3, 5))))
        self.assertTrue((out.data >= 0).all())


class TestNetwork(BenchTestMixin, TestCase):
    def test_init_params__names(self):
        network = self.make_network()
        names = set(network.parameters())
        self.assertIn("phi.0.weight", names)
        self.assertIn("psi.weight", names)
        self.assertIn("svae.encoder.weight", names)
        self.assertIn("svae.decoder.weight", names)
        self.assertIn("svae.psi.weight", names)
        self.assertFalse(set(network.main_parameters()) & set(network.svae_parameters()))
        self.assertEqual(set(network.main_parameters()) | set(network.svae_parameters()), names)

    def test_init_params__deterministic(self):
        first = self.make_network().snapshot()
        second = self.make_network().snapshot()
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_init_params__baseline_shares_main(self):
        baseline = self.make_network(method=Method.CEL_BASELINE)
        full = self.make_network()
        self.assertIsNone(baseline.branch)
        self.assertEqual(baseline.svae_parameters(), {})
        for name, param in baseline.main_parameters().items():
            np.testing.assert_array_equal(param.data, full.main_parameters()[name].data)

    def test_architecture__invalid(self):
        with self.assertRaises(ArchitectureError):
            init_params(Architecture(Task.MULTILABEL, input_dim=0, num_classes=3), 1)
        with self.assertRaises(ArchitectureError):
            init_params(Architecture(Task.SEGMENTATION, input_dim=3, num_classes=1), 1)

    def test_forward_main__shapes(self):
        network = self.make_network()
        features, logits = network.forward_main(self.rng.normal(size=(4, 5)))
        self.assertEqual(features.shape, (4, 6))
        self.assertEqual(logits.shape, (4, 3))
        with self.assertRaises(ShapeError):
            network.forward_main(self.rng.normal(size=(4, 7)))

    def test_forward_svae(self):
        network = self.make_network()
        features, _ = network.forward_main(self.rng.normal(size=(4, 5)))
        branch = network.forward_svae(features, np.random.default_rng(0))
        self.assertEqual(branch.mu.shape, (4, 3))
        self.assertEqual(branch.reconstruction.shape, (4, 6))
        self.assertEqual(branch.svae_logits.shape, (4, 3))
        np.testing.assert_allclose(branch.z.data, branch.mu.data + branch.sigma.data * branch.epsilon)
        self.assertFalse(branch.features.requires_grad)

    def test_forward_svae__given_epsilon(self):
        network = self.make_network()
        features, _ = network.forward_main(self.rng.normal(size=(2, 5)))
        branch = network.forward_svae(features, None, epsilon=np.zeros((2, 3)))
        np.testing.assert_array_equal(branch.z.data, branch.mu.data)
        with self.assertRaises(ShapeError):
            network.forward_svae(features, None, epsilon=np.zeros((2, 4)))

    def test_forward_svae__standard_normal_latent(self):
        network = self.make_network()
        network.branch.encoder.layer.weight.data[...] = 0.0
        network.branch.encoder.layer.bias.data[...] = 0.0
        features, _ = network.forward_main(self.rng.normal(size=(10000, 5)))
        z = network.forward_svae(features, np.random.default_rng(4)).z.data
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=0.05)
        np.testing.assert_allclose(z.var(axis=0), 1.0, atol=0.05)

    def test_forward_svae__divergence(self):
        network = self.make_network()
        network.branch.encoder.layer.weight.data[...] = 1e6
        network.branch.encoder.layer.bias.data[...] = 1e6
        features, _ = network.forward_main(np.abs(self.rng.normal(size=(2, 5))) + 1.0)
        with self.assertRaises(DivergenceError):
            network.forward_svae(features, np.random.default_rng(0))

    def test_forward_svae__without_branch(self):
        network = self.make_network(method=Method.FOCAL_BASELINE)
        features, _ = network.forward_main(self.rng.normal(size=(2, 5)))
        with self.assertRaises(ArchitectureError):
            network.forward_svae(features, np.random.default_rng(0))

    def test_segmentation__per_pixel(self):
        network = self.make_network(self.seg_config)
        x = self.rng.normal(size=(2, 9, 4))
        features, logits = network.forward_main(x)
        self.assertEqual(logits.shape, (2, 9, 3))
        branch = network.forward_svae(features, np.random.default_rng(0))
        self.assertEqual(branch.mu.shape, (2, 9, 3))
        prediction = network.predict(x)
        self.assertEqual(prediction.shape, (2, 9))
        # pixel 0 of image 0 alone gives the same answer
        np.testing.assert_array_equal(network.predict(x[:1, :1]), prediction[:1, :1])

    def test_predict__multilabel(self):
        network = self.make_network()
        probs = network.predict(self.rng.normal(size=(3, 5)))
        self.assertEqual(probs.shape, (3, 3))
        self.assertTrue(((probs > 0) & (probs < 1)).all())

    def test_isolation__routing(self):
        network = self.make_network()
        features, _ = network.forward_main(self.rng.normal(size=(4, 5)))
        branch = network.forward_svae(features, np.random.default_rng(0))
        backward(branch.reconstruction.sum() + branch.svae_logits.sum())
        for param in network.main_parameters().values():
            self.assertFalse(param.grad.any())
        self.assertTrue(any(param.grad.any() for param in network.svae_parameters().values()))

    def test_no_isolation__reaches_encoder(self):
        config = replace(self.config, isolate_svae=False)
        network = self.make_network(config)
        features, _ = network.forward_main(self.rng.normal(size=(4, 5)))
        branch = network.forward_svae(features, np.random.default_rng(0))
        backward(branch.svae_logits.sum())
        self.assertTrue(network.main_parameters()["phi.0.weight"].grad.any())

    def test_heads_are_disjoint(self):
        network = self.make_network()
        x = self.rng.normal(size=(4, 5))
        epsilon = np.random.default_rng(2).normal(size=(4, 3))

        def outputs():
            features, logits = network.forward_main(x)
            return logits.data, network.forward_svae(features, None, epsilon=epsilon).svae_logits.data

        logits, svae_logits = outputs()
        network.parameters()["psi.weight"].data += 1.0
        changed_logits, same_svae_logits = outputs()
        self.assertFalse(np.array_equal(changed_logits, logits))
        np.testing.assert_array_equal(same_svae_logits, svae_logits)

        network.parameters()["svae.psi.weight"].data += 1.0
        same_logits, changed_svae_logits = outputs()
        np.testing.assert_array_equal(same_logits, changed_logits)
        self.assertFalse(np.array_equal(changed_svae_logits, svae_logits))

    def test_forward_svae__keeps_main_logits(self):
        network = self.make_network()
        features, logits = network.forward_main(self.rng.normal(size=(3, 5)))
        self.assertIsNone(network.forward_svae(features, np.random.default_rng(0)).logits)
        branch = network.forward_svae(features, np.random.default_rng(0), logits=logits)
        self.assertIs(branch.logits, logits)

    def test_load_state(self):
        network = self.make_network()
        state = {name: value + 1.0 for name, value in network.snapshot().items()}
        network.load_state(state)
        np.testing.assert_array_equal(network.parameters()["psi.bias"].data, state["psi.bias"])
        with self.assertRaises(ArchitectureError):
            network.load_state({"psi.bias": np.zeros(3)})
        state["psi.bias"] = np.zeros(4)
        with self.assertRaises(ArchitectureError):
            network.load_state(state)


class TestSvaeGradients(BenchTestMixin, TestCase):
    """
    Gradient of the composite SVAE loss through mu, logvar and the decoder.

    """

    @parameterized.expand([(Task.MULTILABEL,), (Task.SEGMENTATION,)])
    def test_svae_loss__gradcheck(self, task):
        rng = np.random.default_rng(11)
        if task is Task.SEGMENTATION:
            features = rng.normal(size=(2, 3, 4))
            labels = rng.integers(3, size=(2, 3))
        else:
            features = rng.normal(size=(3, 4))
            labels = rng.integers(2, size=(3, 3))
        epsilon = rng.normal(size=features.shape[:-1] + (2,))

        def composite(enc_w, enc_b, dec_w, head_w):
            stats = Tensor(features) @ enc_w + enc_b
            mu, logvar = stats[..., :2], stats[..., 2:]
            z = mu + (logvar * 0.5).exp() * epsilon
            loss = svae_loss(
                mse_features(z @ dec_w, features),
                task_loss(task, z @ head_w, labels),
                kl_gaussian(mu, logvar),
            )
            return loss.mean()

        for _ in range(20):
            arrays = [
                rng.normal(size=(4, 4)) * 0.5,
                rng.normal(size=(4,)) * 0.1,
                rng.normal(size=(2, 4)),
                rng.normal(size=(2, 3)),
            ]
            self.assertLess(gradcheck.check_gradients(composite, arrays, h=1e-5), 1e-4)


class TestCheckpoint(TempDirMixin, TestCase):
    def test_round_trip(self):
        rng = np.random.default_rng(5)
        params = {
            "phi.0.weight": rng.normal(size=(5, 8)),
            "phi.0.bias": rng.normal(size=(8,)),
            "scalar": np.array(3.25),
        }
        stem = os.path.join(self.tmpdir, "best")
        save_checkpoint(stem, params)
        loaded = load_checkpoint(stem)
        self.assertEqual(list(loaded), list(params))
        for name, value in params.items():
            self.assertEqual(loaded[name].shape, value.shape)
            np.testing.assert_array_equal(loaded[name], value)

    def test_network_round_trip(self):
        network = init_params(Architecture(Task.MULTILABEL, input_dim=4, num_classes=2, hidden_dims=(3,),
                                           feature_dim=3, latent_dim=2), 9)
        stem = os.path.join(self.tmpdir, "net")
        save_checkpoint(stem, network.parameters())
        other = init_params(Architecture(Task.MULTILABEL, input_dim=4, num_classes=2, hidden_dims=(3,),
                                         feature_dim=3, latent_dim=2), 10)
        other.load_state(load_checkpoint(stem))
        for name, value in network.snapshot().items():
            np.testing.assert_array_equal(other.snapshot()[name], value)

    def test_corrupt(self):
        stem = os.path.join(self.tmpdir, "bad")
        save_checkpoint(stem, {"w": np.ones((2, 2))})
        with open(f"{stem}.bin", "wb") as raw:
            raw.write(np.ones(2).tobytes())
        with self.assertRaises(CheckpointError):
            load_checkpoint(stem)

    def test_not_a_manifest(self):
        stem = os.path.join(self.tmpdir, "other")
        with open(f"{stem}.manifest", "w", encoding="utf-8") as manifest:
            manifest.write("hello\n")
        np.zeros(1).tofile(f"{stem}.bin")
        with self.assertRaises(CheckpointError):
            load_checkpoint(stem)

    def test_bad_name(self):
        with self.assertRaises(CheckpointError):
            save_checkpoint(os.path.join(self.tmpdir, "x"), {"a\tb": np.zeros(1)})
