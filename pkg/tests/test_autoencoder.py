"""KL autoencoder: shapes, closed-form KL, perceptual and adversarial losses."""

import math

import numpy as np
import pytest
import torch

from figgen.autoencoder import (
    AutoencoderConfig,
    AutoencoderLoss,
    ConvFeatureExtractor,
    KLAutoencoder,
    LatentDistribution,
    PatchDiscriminator,
    adaptive_adversarial_weight,
    discriminator_loss,
    kl_divergence,
    perceptual_loss,
)
from figgen.autoencoder.features import FeatureExtractor, default_ocr_style, default_vgg_style

from helpers import micro_ae_config


class IdentityExtractor(FeatureExtractor):
    """Single-layer identity feature map; oracle for closed-form cases."""

    def __init__(self, weight: float = 1.0):
        super().__init__([weight], identity="identity-map")

    def extract(self, images):
        return [images]


class TestShapes:
    def test_512_input_gives_64x64x4_latents(self):
        # Shape law is channel-independent; thin channels keep this fast.
        config = AutoencoderConfig(input_resolution=512, base_channels=8, num_res_blocks=1)
        model = KLAutoencoder(config)
        assert config.downsample_factor == 8
        dist = model.encode(torch.rand(1, 3, 512, 512))
        assert dist.mean.shape == (1, 4, 64, 64)
        assert dist.logvar.shape == (1, 4, 64, 64)

    def test_tiny_config_shape_arithmetic(self):
        model = KLAutoencoder(micro_ae_config(64))
        dist = model.encode(torch.rand(2, 3, 64, 64))
        assert dist.mean.shape == (2, 4, 8, 8)

    def test_encode_deterministic_in_eval(self):
        model = KLAutoencoder(micro_ae_config()).eval()
        x = torch.rand(1, 3, 32, 32)
        a, b = model.encode(x), model.encode(x)
        assert torch.equal(a.mean, b.mean) and torch.equal(a.logvar, b.logvar)

    def test_non_divisible_side_rejected(self):
        model = KLAutoencoder(micro_ae_config())
        with pytest.raises(ValueError, match="divisible"):
            model.encode(torch.rand(1, 3, 30, 30))

    def test_decode_round_trip_shape(self):
        model = KLAutoencoder(micro_ae_config())
        x = torch.rand(2, 3, 32, 32)
        recon = model.decode(model.encode(x).mean)
        assert recon.shape == x.shape

    def test_zero_latent_decodes_finite(self):
        model = KLAutoencoder(micro_ae_config())
        out = model.decode(torch.zeros(1, 4, 4, 4))
        assert torch.isfinite(out).all()
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_shape_law_decode_of_sample(self):
        model = KLAutoencoder(micro_ae_config())
        x = torch.rand(1, 3, 32, 32)
        z = model.encode(x).sample(torch.Generator().manual_seed(0))
        assert model.decode(z).shape == x.shape

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            AutoencoderConfig(disc_weight=-0.1).validate()
        with pytest.raises(ValueError):
            AutoencoderConfig(input_resolution=100).validate()  # 100 % 8 != 0


class TestLatentDistribution:
    def test_logvar_clamped(self):
        dist = LatentDistribution(torch.zeros(1, 4, 2, 2), torch.full((1, 4, 2, 2), 99.0))
        assert float(dist.logvar.max()) == 20.0
        dist = LatentDistribution(torch.zeros(1, 4, 2, 2), torch.full((1, 4, 2, 2), -99.0))
        assert float(dist.logvar.min()) == -30.0

    def test_reparameterized_moments_within_three_se(self):
        g = torch.Generator().manual_seed(42)
        mean = torch.randn(2, 2, 4, generator=g)
        logvar = torch.randn(2, 2, 4, generator=g).clamp(-2, 2)
        dist = LatentDistribution(mean, logvar)
        n = 10_000
        draws = torch.stack([dist.sample(g) for _ in range(n)])
        sigma = dist.std
        se_mean = sigma / math.sqrt(n)
        assert ((draws.mean(0) - mean).abs() <= 3 * se_mean).all()
        se_std = sigma / math.sqrt(2 * n)
        assert ((draws.std(0) - sigma).abs() <= 3 * se_std).all()


class TestKL:
    def test_standard_normal_identity(self):
        dist = LatentDistribution(torch.zeros(1, 4, 2, 2), torch.zeros(1, 4, 2, 2))
        assert float(kl_divergence(dist)) == 0.0

    def test_unit_mean_is_half(self):
        dist = LatentDistribution(torch.ones(1, 4, 2, 2), torch.zeros(1, 4, 2, 2))
        assert float(kl_divergence(dist)) == pytest.approx(0.5, abs=1e-7)

    def test_variance_four_closed_form(self):
        # 0.5 * (4 - 1 - ln 4) = 0.8068528194400547
        dist = LatentDistribution(
            torch.zeros(1, 4, 2, 2), torch.full((1, 4, 2, 2), math.log(4.0))
        )
        assert float(kl_divergence(dist)) == pytest.approx(0.8068528194400547, abs=1e-6)

    def test_nonnegative_on_random_inputs(self):
        g = torch.Generator().manual_seed(0)
        for _ in range(50):
            dist = LatentDistribution(
                torch.randn(1, 4, 2, 2, generator=g), torch.randn(1, 4, 2, 2, generator=g) * 3
            )
            assert float(kl_divergence(dist)) >= 0.0

    def test_matches_monte_carlo_estimate(self):
        # E_q[log q(z) - log p(z)] over 1e5 draws on a 2x2x4 latent,
        # averaged per dimension, must land within 2% of the closed form.
        g = torch.Generator().manual_seed(7)
        mean = torch.randn(1, 4, 2, 2, generator=g, dtype=torch.float64)
        logvar = (torch.randn(1, 4, 2, 2, generator=g, dtype=torch.float64) * 0.8).clamp(-2, 2)
        dist = LatentDistribution(mean, logvar)
        closed = float(kl_divergence(dist))

        n = 100_000
        eps = torch.randn(n, *mean.shape[1:], generator=g, dtype=torch.float64)
        z = mean + torch.exp(0.5 * logvar) * eps
        log_q = -0.5 * (eps**2 + logvar + math.log(2 * math.pi))
        log_p = -0.5 * (z**2 + math.log(2 * math.pi))
        estimate = float((log_q - log_p).mean())
        assert estimate == pytest.approx(closed, rel=0.02)


class TestPerceptualLoss:
    def test_identity_inputs_give_zero(self):
        ext = default_vgg_style()
        x = torch.rand(1, 3, 32, 32)
        assert float(perceptual_loss(ext, x, x)) == 0.0

    def test_symmetry(self):
        ext = default_vgg_style()
        a, b = torch.rand(1, 3, 32, 32), torch.rand(1, 3, 32, 32)
        assert float(perceptual_loss(ext, a, b)) == pytest.approx(
            float(perceptual_loss(ext, b, a)), rel=1e-6
        )

    def test_identity_extractor_constant_half_gap(self):
        # Single identity layer, difference 0.5 everywhere: mean square 0.25 * w.
        ext = IdentityExtractor(weight=1.0)
        a = torch.zeros(1, 3, 8, 8)
        b = torch.full((1, 3, 8, 8), 0.5)
        assert float(perceptual_loss(ext, a, b)) == pytest.approx(0.25, abs=1e-7)
        ext2 = IdentityExtractor(weight=0.4)
        assert float(perceptual_loss(ext2, a, b)) == pytest.approx(0.1, abs=1e-7)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            perceptual_loss(default_vgg_style(), torch.rand(1, 3, 16, 16), torch.rand(1, 3, 32, 32))

    def test_extractors_frozen_and_deterministic(self):
        for ext in (default_vgg_style(), default_ocr_style()):
            assert all(not p.requires_grad for p in ext.parameters())
            x = torch.rand(1, 3, 32, 32)
            fa = ext.extract(x)
            fb = ext.extract(x)
            assert all(torch.equal(a, b) for a, b in zip(fa, fb))

    def test_identity_strings_distinguish_seeds(self):
        assert ConvFeatureExtractor(seed=1).identity != ConvFeatureExtractor(seed=2).identity


class TestDiscriminator:
    def test_zero_critic_hinge_values(self):
        # D === 0: d_loss = relu(1) + relu(1) = 2, g_loss = 0.
        class ZeroD(torch.nn.Module):
            def forward(self, x):
                return torch.zeros(x.shape[0], 1, 4, 4)

        x = torch.rand(2, 3, 32, 32)
        d_loss, g_loss = discriminator_loss(ZeroD(), x, x)
        assert float(d_loss) == 2.0
        assert float(g_loss) == 0.0

    def test_saturated_critic_zero_d_loss(self):
        class SplitD(torch.nn.Module):
            def __init__(self):
                super().__init__()
                self.toggle = 1.0

            def forward(self, x):
                return torch.full((x.shape[0], 1, 2, 2), self.toggle)

        d = SplitD()
        real, fake = torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8)
        real_logits = torch.full((1, 1, 2, 2), 1.5)
        fake_logits = torch.full((1, 1, 2, 2), -1.5)
        from figgen.autoencoder.adversarial import hinge_d_loss

        assert float(hinge_d_loss(real_logits, fake_logits)) == 0.0

    def test_g_loss_gradient_pushes_fake_scores_up(self):
        # Finite differences on a 4-parameter critic: a gradient-descent step
        # on g_loss must increase mean D(fake).
        torch.manual_seed(0)
        critic = torch.nn.Conv2d(3, 1, 1).double()  # 3 weights + 1 bias
        fake = torch.rand(2, 3, 8, 8, dtype=torch.float64)
        params = list(critic.parameters())

        def g_loss():
            return -critic(fake).mean()

        before = float(critic(fake).mean())
        loss = g_loss()
        loss.backward()
        h = 1e-4
        for p in params:
            flat, gflat = p.data.view(-1), p.grad.view(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                up = float(g_loss())
                flat[i] = orig - h
                down = float(g_loss())
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                assert numeric == pytest.approx(float(gflat[i]), abs=1e-4)
        with torch.no_grad():
            for p in params:
                p.data -= 0.01 * p.grad
        assert float(critic(fake).mean()) > before

    def test_batch_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            discriminator_loss(PatchDiscriminator(base_channels=8),
                               torch.rand(1, 3, 32, 32), torch.rand(2, 3, 32, 32))


class TestTotalLoss:
    def make_parts(self):
        config = micro_ae_config()
        torch.manual_seed(0)
        model = KLAutoencoder(config)
        loss_mod = AutoencoderLoss(
            config, default_vgg_style(), default_ocr_style(),
            PatchDiscriminator(base_channels=8),
        )
        return config, model, loss_mod

    def test_warmup_gates_adversarial_term_exactly(self):
        _, model, loss_mod = self.make_parts()
        x = torch.rand(1, 3, 32, 32)
        recon, dist = model(x, generator=torch.Generator().manual_seed(1))
        _, at_warmup_minus_1 = loss_mod.total_loss(
            x, recon, dist, step=49_999, warmup_steps=50_000, last_layer=model.last_layer
        )
        _, at_warmup = loss_mod.total_loss(
            x, recon, dist, step=50_000, warmup_steps=50_000, last_layer=model.last_layer
        )
        assert at_warmup_minus_1["adv_weight"] == 0.0
        assert at_warmup["adv_weight"] > 0.0
        for key in ("rec_l1", "perceptual_vgg", "perceptual_ocr", "kl", "adversarial"):
            assert at_warmup_minus_1[key] == at_warmup[key]
        assert at_warmup["total"] != at_warmup_minus_1["total"]

    def test_perfect_reconstruction_standard_posterior_gives_zero(self):
        # x == x_hat and mu=0, logvar=0: the reconstruction gradient at the
        # last layer is zero, so the adaptive weight zeroes the adversarial
        # term and the total collapses to 0.
        _, model, loss_mod = self.make_parts()
        z = torch.randn(1, 4, 4, 4)
        x_hat = model.decode(z)
        x = x_hat.detach()
        dist = LatentDistribution(torch.zeros(1, 4, 4, 4), torch.zeros(1, 4, 4, 4))
        total, terms = loss_mod.total_loss(
            x, x_hat, dist, step=100, warmup_steps=0, last_layer=model.last_layer
        )
        assert float(total) == pytest.approx(0.0, abs=1e-9)
        assert terms["adv_weight"] == pytest.approx(0.0, abs=1e-9)

    def test_configured_weights_match_defaults(self):
        config = AutoencoderConfig()
        assert (config.disc_weight, config.vgg_weight, config.ocr_weight, config.kl_weight) == (
            0.5, 0.2, 0.8, 1e-6,
        )

    def test_breakdown_reports_every_term(self):
        _, model, loss_mod = self.make_parts()
        x = torch.rand(1, 3, 32, 32)
        recon, dist = model(x, generator=torch.Generator().manual_seed(2))
        _, terms = loss_mod.total_loss(x, recon, dist, 0, 10, last_layer=model.last_layer)
        assert set(AutoencoderLoss.TERMS) <= set(terms)

    def test_adaptive_weight_clipped_and_detached(self):
        z = torch.randn(1, 4, 4, 4, requires_grad=True)
        layer = torch.nn.Parameter(torch.randn(4, 4))
        rec = (layer.sum() * 1000.0) ** 2
        adv = layer.mean() * 1e-12
        lam = adaptive_adversarial_weight(rec, adv, layer)
        assert not lam.requires_grad
        assert float(lam) <= 1e4


class TestOverfitOracle:
    def test_single_image_reconstruction_below_005_after_2k_steps(self, corpus_records):
        # Overfit-training oracle: 2000 Adam steps on one prepared sample.
        from figgen.corpus import pad_and_resize
        from figgen import imageio

        image = pad_and_resize(corpus_records[0], 32)
        x = imageio.batch_to_tensor([image])
        torch.manual_seed(3)
        model = KLAutoencoder(micro_ae_config())
        opt = torch.optim.Adam(model.parameters(), lr=2e-3)
        gen = torch.Generator().manual_seed(4)
        for _ in range(2000):
            opt.zero_grad()
            recon, dist = model(x, generator=gen)
            loss = torch.nn.functional.l1_loss(recon, x) + 1e-6 * kl_divergence(dist)
            loss.backward()
            opt.step()
        with torch.no_grad():
            recon = model.decode(model.encode(x).mean)
            final_l1 = float(torch.nn.functional.l1_loss(recon, x))
        assert final_l1 < 0.05
