"""Model assembly, training-stage freezing, sampling, and checkpoint contracts."""

import hashlib

import numpy as np
import pytest
import torch

from urbandiff.diffusion.checkpoint import (
    load_checkpoint,
    read_tensor_file,
    restore_optimizer,
    save_checkpoint,
    write_tensor_file,
)
from urbandiff.diffusion.model import (
    STAGE_CONTROL_ONLY,
    STAGE_DECODER_UNLOCKED,
    ModelConfig,
    UrbanDiffusionModel,
)
from urbandiff.diffusion.sampling import denoise_step, inpaint, sample, sample_latent
from urbandiff.diffusion.schedule import forward_diffuse, posterior_mean
from urbandiff.diffusion.training import (
    calibrate_latent_scale,
    epsilon_mse,
    make_optimizer,
    train_loop,
    train_step,
    train_vae,
)
from urbandiff.errors import CheckpointError, ConfigError, TrainingDivergedError
from urbandiff.geogrid.density import DensityMetrics
from urbandiff.geogrid.prompts import PromptSpec, render_prompt

SMALL = dict(
    image_px=32,
    latent_hw=8,
    T=20,
    unet_base=16,
    vae_base=16,
    text_dim=48,
    num_dim=16,
    tower_channels=16,
    batch_size=4,
)


def small_model(seed=0, **overrides) -> UrbanDiffusionModel:
    torch.manual_seed(seed)
    return UrbanDiffusionModel(ModelConfig(**{**SMALL, **overrides}))


def prompt_texts(n):
    texts = []
    for i in range(n):
        metrics = DensityMetrics(
            bcr=0.1 + 0.05 * (i % 17), bvd=1.0 + i % 9, road_density=10.0 + i % 25
        )
        texts.append(render_prompt(PromptSpec(city_name="Arvendale", metrics=metrics)))
    return texts


def small_batch(model, b=3, seed=5):
    gen = torch.Generator().manual_seed(seed)
    return {
        "latents": torch.randn(b, 4, 8, 8, generator=gen),
        "prompts": prompt_texts(b),
        "dem": torch.rand(b, 1, 32, 32, generator=gen),
        "constraint": (torch.rand(b, 1, 32, 32, generator=gen) > 0.8).float(),
    }


def make_bundle(model, b=2, seed=11, guidance=None):
    gen = torch.Generator().manual_seed(seed)
    return model.make_bundle(
        prompt_texts(b),
        torch.rand(b, 1, 32, 32, generator=gen),
        (torch.rand(b, 1, 32, 32, generator=gen) > 0.8).float(),
        guidance_scale=guidance,
    )


def digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    state = module.state_dict()
    for name in sorted(state):
        h.update(state[name].detach().numpy().astype(np.float32).tobytes())
    return h.hexdigest()


class TestModelConfig:
    def test_latent_resolution_tied_to_image(self):
        with pytest.raises(ConfigError) as err:
            ModelConfig(image_px=64, latent_hw=8)
        assert err.value.key_path == "model.latent_hw"

    def test_stage_and_lr_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig(stage="warmup")
        with pytest.raises(ConfigError):
            ModelConfig(lr_control=0.0)

    def test_round_trip_and_unknown_keys(self):
        cfg = ModelConfig(**SMALL)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({**cfg.to_dict(), "momentum": 0.9})

    def test_stage_two_defaults_keep_rate_ratio(self):
        cfg = ModelConfig()
        assert cfg.lr_control == pytest.approx(1e-5)
        assert cfg.lr_decoder == pytest.approx(2e-6)
        assert cfg.batch_size == 16


class TestLossStubs:
    def test_exact_noise_stub_gives_zero_loss(self, rng):
        eps = torch.tensor(rng.normal(size=(8, 4, 8, 8)), dtype=torch.float32)
        assert float(epsilon_mse(eps, eps.clone())) == 0.0

    def test_zero_stub_gives_unit_loss(self):
        gen = torch.Generator().manual_seed(3)
        eps = torch.randn(64, 4, 16, 16, generator=gen)
        loss = float(epsilon_mse(eps, torch.zeros_like(eps)))
        assert loss == pytest.approx(1.0, abs=0.02)


class TestConditionedPrediction:
    def test_predict_noise_shape(self):
        model = small_model()
        bundle = make_bundle(model, b=2)
        x = torch.randn(2, 4, 8, 8)
        eps = model.predict_noise(x, torch.tensor([3, 9]), bundle)
        assert eps.shape == x.shape

    def test_untrained_conditioning_is_invisible(self):
        # Zero convolutions and zero-initialized cross-attention projections
        # make the conditioned and unconditioned passes coincide exactly.
        model = small_model()
        bundle = make_bundle(model, b=2)
        x = torch.randn(2, 4, 8, 8)
        t = torch.tensor([5, 5])
        cond = model.predict_noise(x, t, bundle, conditioned=True)
        uncond = model.predict_noise(x, t, bundle, conditioned=False)
        assert torch.equal(cond, uncond)

    def test_guidance_formula(self):
        model = small_model()
        # give the trained-looking weights some text sensitivity
        with torch.no_grad():
            for name, p in model.named_parameters():
                if "to_out" in name or "zero" in name.lower():
                    p.normal_(std=0.05)
        bundle = make_bundle(model, b=1, guidance=2.5)
        x = torch.randn(1, 4, 8, 8)
        t = torch.tensor([4])
        got = model.guided_noise(x, t, bundle)
        cond = model.predict_noise(x, t, bundle, conditioned=True)
        uncond = model.predict_noise(x, t, bundle, conditioned=False)
        assert torch.allclose(got, uncond + 2.5 * (cond - uncond), atol=1e-6)

    def test_guidance_one_is_single_pass(self):
        model = small_model()
        bundle = make_bundle(model, b=1, guidance=1.0)
        x = torch.randn(1, 4, 8, 8)
        t = torch.tensor([4])
        assert torch.equal(
            model.guided_noise(x, t, bundle), model.predict_noise(x, t, bundle, conditioned=True)
        )


class TestTrainingStages:
    def test_stage_one_touches_only_control_side(self):
        # Gradient flow wakes up in a cascade: the zero convs move on step
        # one, the branch encoder on step two, and the text encoder once the
        # copied cross-attention projections leave zero. A few steps cover it.
        model = small_model()
        opt = make_optimizer(model, STAGE_CONTROL_ONLY)
        before = {
            "vae": digest(model.vae),
            "unet": digest(model.unet),
            "branch": digest(model.branch),
            "textenc": digest(model.textenc),
            "towers": digest(model.towers),
        }
        for step in range(4):
            loss = train_step(model, opt, small_batch(model, seed=step), step, root_seed=1)
            assert np.isfinite(loss)
        assert digest(model.vae) == before["vae"]
        assert digest(model.unet) == before["unet"]
        assert digest(model.branch) != before["branch"]
        assert digest(model.textenc) != before["textenc"]
        assert digest(model.towers) != before["towers"]

    def test_stage_two_unlocks_decoder_only(self):
        model = small_model(stage=STAGE_DECODER_UNLOCKED)
        # Zero convs start at zero, so decoder gradients exist only once the
        # residual path carries signal; nudge the zero convs off zero first.
        with torch.no_grad():
            for conv in model.branch.zero_convs:
                conv.weight.normal_(std=0.05)
        opt = make_optimizer(model, STAGE_DECODER_UNLOCKED)
        enc_before = digest(model.unet.encoder)
        dec_before = digest(model.unet.decoder)
        time_before = digest(model.unet.time_mlp)
        train_step(model, opt, small_batch(model), step_index=0, root_seed=1)
        assert digest(model.unet.encoder) == enc_before
        assert digest(model.unet.time_mlp) == time_before
        assert digest(model.unet.decoder) != dec_before

    def test_nan_loss_aborts_with_step_context(self):
        model = small_model()
        opt = make_optimizer(model, STAGE_CONTROL_ONLY)
        with torch.no_grad():
            model.branch.encoder.in_conv.weight.fill_(float("nan"))
            model.branch.zero_in.weight.fill_(1.0)  # let the NaN reach the loss
        with pytest.raises(TrainingDivergedError) as err:
            train_step(model, opt, small_batch(model), step_index=7, root_seed=1)
        assert err.value.step == 7

    def test_gradients_match_central_differences(self):
        # Independent oracle for the whole conditioned training graph. The
        # zero-initialized layers are nudged off zero first so the probed
        # parameters sit on live gradient paths.
        model = small_model().double()
        gen = torch.Generator().manual_seed(31)
        with torch.no_grad():
            for name, p in model.branch.named_parameters():
                if "zero" in name or "to_out" in name:
                    p.add_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.05)
        batch = small_batch(model, b=2)
        latents = batch["latents"].double()
        dem, con = batch["dem"].double(), batch["constraint"].double()
        t = torch.tensor([3, 11])
        gen = torch.Generator().manual_seed(9)
        eps = torch.randn(latents.shape, generator=gen, dtype=torch.float64)

        def loss_value() -> torch.Tensor:
            bundle = model.make_bundle(batch["prompts"], dem, con)
            ab = torch.from_numpy(model.schedule.alpha_bar)[t - 1]
            x_t = torch.sqrt(ab)[:, None, None, None] * latents
            x_t = x_t + torch.sqrt(1.0 - ab)[:, None, None, None] * eps
            return epsilon_mse(eps, model.predict_noise(x_t, t, bundle))

        loss = loss_value()
        loss.backward()
        named = [
            (n, p)
            for n, p in model.named_parameters()
            if p.grad is not None and ("branch" in n or "textenc" in n or "towers" in n)
        ]
        picks = np.random.default_rng(4).choice(len(named), size=10, replace=False)
        h = 1e-6
        for idx in picks:
            name, param = named[idx]
            flat_idx = int(np.random.default_rng(idx).integers(param.numel()))
            with torch.no_grad():
                orig = float(param.flatten()[flat_idx])
                param.flatten()[flat_idx] = orig + h
                plus = float(loss_value())
                param.flatten()[flat_idx] = orig - h
                minus = float(loss_value())
                param.flatten()[flat_idx] = orig
            fd = (plus - minus) / (2 * h)
            analytic = float(param.grad.flatten()[flat_idx])
            if abs(fd) < 1e-12 and abs(analytic) < 1e-12:
                continue
            assert analytic == pytest.approx(fd, rel=1e-3, abs=1e-9), name


class TestDenoiseStep:
    def test_final_step_is_posterior_mean(self):
        model = small_model()
        bundle = make_bundle(model, b=1)
        x = torch.randn(1, 4, 8, 8)
        gen = torch.Generator().manual_seed(0)
        out = denoise_step(model, x, 1, bundle, gen)
        eps = model.guided_noise(x, torch.tensor([1]), bundle)
        want = posterior_mean(model.schedule, x, 1, eps)
        assert torch.equal(out, want)

    def test_fixed_seed_is_bit_stable(self):
        model = small_model()
        bundle = make_bundle(model, b=1)
        x = torch.randn(1, 4, 8, 8)
        a = denoise_step(model, x, 5, bundle, torch.Generator().manual_seed(42))
        b = denoise_step(model, x, 5, bundle, torch.Generator().manual_seed(42))
        assert torch.equal(a, b)

    @pytest.mark.slow
    def test_step_noise_variance_matches_beta(self):
        from urbandiff.diffusion.model import ConditioningBundle

        model = small_model()
        one = make_bundle(model, b=1)
        t = 10
        beta_t = float(model.schedule.beta[t - 1])
        x = torch.randn(1, 4, 8, 8)
        total = 100_000
        chunk = 2_000
        bundle = ConditioningBundle(
            context=one.context.expand(chunk, -1, -1),
            context_mask=one.context_mask.expand(chunk, -1),
            null_context=one.null_context.expand(chunk, -1, -1),
            null_mask=one.null_mask.expand(chunk, -1),
            h_agg=one.h_agg.expand(chunk, -1, -1, -1),
        )
        gen = torch.Generator().manual_seed(123)
        acc = torch.zeros(1, 4, 8, 8, dtype=torch.float64)
        acc_sq = torch.zeros_like(acc)
        x_rep = x.expand(chunk, -1, -1, -1).contiguous()
        with torch.no_grad():
            for _ in range(total // chunk):
                out = denoise_step(model, x_rep, t, bundle, gen).double()
                acc += out.sum(dim=0, keepdim=True)
                acc_sq += out.square().sum(dim=0, keepdim=True)
        mean = acc / total
        var = acc_sq / total - mean.square()
        rel = (var - beta_t).abs() / beta_t
        assert float(rel.max()) < 0.03


class TestSampling:
    def test_same_seed_same_image(self):
        model = small_model()
        bundle = make_bundle(model, b=1)
        img1 = sample(model, bundle, seed=7)
        img2 = sample(model, bundle, seed=7)
        assert img1.shape == (1, 32, 32, 3)
        assert np.array_equal(img1, img2)

    def test_different_seeds_differ(self):
        model = small_model()
        bundle = make_bundle(model, b=1)
        assert not np.array_equal(sample(model, bundle, seed=1), sample(model, bundle, seed=2))

    def test_untrained_conditioned_equals_unconditioned(self):
        model = small_model()
        texts = prompt_texts(1)
        gen = torch.Generator().manual_seed(0)
        dem = torch.rand(1, 1, 32, 32, generator=gen)
        con = (torch.rand(1, 1, 32, 32, generator=gen) > 0.8).float()
        bundle_cond = model.make_bundle(texts, dem, con)
        null_bundle = model.make_bundle([""], dem, con)
        a = sample(model, bundle_cond, seed=3)
        b = sample(model, null_bundle, seed=3)
        assert np.array_equal(a, b)

    def test_reduced_steps_run_and_validate(self):
        model = small_model()
        bundle = make_bundle(model, b=1)
        img = sample(model, bundle, seed=5, steps=8)
        assert img.shape == (1, 32, 32, 3)
        with pytest.raises(ValueError):
            sample_latent(model, bundle, seed=5, steps=0)
        with pytest.raises(ValueError):
            sample_latent(model, bundle, seed=5, steps=21)


class TestInpaint:
    def _setup(self):
        model = small_model()
        bundle = make_bundle(model, b=1)
        gen = torch.Generator().manual_seed(2)
        image = (torch.rand(32, 32, 3, generator=gen).numpy() * 255).astype(np.uint8)
        return model, bundle, image

    def test_empty_mask_returns_input_exactly(self):
        model, bundle, image = self._setup()
        out = inpaint(model, image, np.zeros((32, 32), dtype=np.uint8), bundle, seed=1)
        assert np.array_equal(out, image)

    def test_full_mask_reduces_to_sample(self):
        model, bundle, image = self._setup()
        out = inpaint(model, image, np.ones((32, 32), dtype=np.uint8), bundle, seed=9)
        want = sample(model, bundle, seed=9)[0]
        assert np.array_equal(out, want)

    def test_quarter_mask_composites_exactly_outside(self):
        model, bundle, image = self._setup()
        mask = np.zeros((32, 32), dtype=np.uint8)
        mask[:16, :16] = 1
        out = inpaint(model, image, mask, bundle, seed=4)
        outside = mask == 0
        assert np.array_equal(out[outside], image[outside])
        assert not np.array_equal(out[~outside], image[~outside])

    def test_mask_shape_checked(self):
        model, bundle, image = self._setup()
        with pytest.raises(ValueError):
            inpaint(model, image, np.zeros((16, 16), dtype=np.uint8), bundle, seed=1)


class TestCheckpoint:
    def test_tensor_container_round_trip(self, tmp_path):
        tensors = {
            "a.weight": np.arange(12, dtype=np.float32).reshape(3, 4),
            "b.bias": np.array([1.5, -2.5], dtype=np.float32),
            "steps": np.array([7], dtype=np.int64),
        }
        path = tmp_path / "t.bin"
        write_tensor_file(path, tensors)
        loaded = read_tensor_file(path)
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert loaded[name].dtype == tensors[name].dtype
            np.testing.assert_array_equal(loaded[name], tensors[name])

    def test_container_rejects_corruption(self, tmp_path):
        path = tmp_path / "t.bin"
        write_tensor_file(path, {"w": np.zeros(4, dtype=np.float32)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-3])
        with pytest.raises(CheckpointError):
            read_tensor_file(path)
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"NOPE" + raw[4:])
        with pytest.raises(CheckpointError):
            read_tensor_file(bad)

    def test_save_load_sample_identical(self, tmp_path):
        model = small_model(seed=3)
        bundle_inputs = dict(seed=11, b=1)
        bundle = make_bundle(model, **bundle_inputs)
        want = sample(model, bundle, seed=21)
        save_checkpoint(tmp_path / "ckpt", model, training_steps=0, corpus_hash="abc")
        loaded, manifest, optim = load_checkpoint(tmp_path / "ckpt")
        assert manifest["corpus_hash"] == "abc"
        assert optim == {}
        bundle2 = make_bundle(loaded, **bundle_inputs)
        got = sample(loaded, bundle2, seed=21)
        assert np.array_equal(got, want)

    def test_checkpoint_errors(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "missing")
        ckpt = tmp_path / "ckpt"
        model = small_model()
        save_checkpoint(ckpt, model, training_steps=0)
        (ckpt / "manifest.json").write_text("{not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(ckpt)

    def test_tensor_names_follow_convention(self):
        model = small_model()
        names = set(model.named_tensors())
        prefixes = ("vae.", "unet.", "textenc.", "control.", "zeroconv.")
        for name in names - {"latent_scale"}:
            assert name.startswith(prefixes), name
        for k in range(6):
            assert any(n.startswith(f"zeroconv.{k}.") for n in names)

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        def provider(step, rng):
            gen = torch.Generator().manual_seed(int(rng.integers(2**31)))
            return {
                "latents": torch.randn(2, 4, 8, 8, generator=gen),
                "prompts": prompt_texts(2),
                "dem": torch.rand(2, 1, 32, 32, generator=gen),
                "constraint": (torch.rand(2, 1, 32, 32, generator=gen) > 0.8).float(),
            }

        root_seed = 77
        model_a = small_model(seed=5)
        opt_a = make_optimizer(model_a, STAGE_CONTROL_ONLY)
        train_loop(model_a, opt_a, provider, n_steps=4, root_seed=root_seed)

        model_b = small_model(seed=5)
        opt_b = make_optimizer(model_b, STAGE_CONTROL_ONLY)
        train_loop(model_b, opt_b, provider, n_steps=2, root_seed=root_seed)
        save_checkpoint(tmp_path / "mid", model_b, training_steps=2, optimizer=opt_b)

        model_c, manifest, optim_tensors = load_checkpoint(tmp_path / "mid")
        opt_c = make_optimizer(model_c, STAGE_CONTROL_ONLY)
        restore_optimizer(model_c, opt_c, optim_tensors)
        train_loop(
            model_c, opt_c, provider, n_steps=2, root_seed=root_seed,
            start_step=manifest["training_steps"],
        )

        tensors_a = model_a.named_tensors()
        tensors_c = model_c.named_tensors()
        for name in tensors_a:
            assert torch.equal(tensors_a[name], tensors_c[name]), name


class TestVaeTraining:
    def test_vae_steps_reduce_reconstruction_error(self):
        model = small_model()

        def images(step, rng):
            gen = torch.Generator().manual_seed(int(rng.integers(2**31)))
            return torch.rand(4, 3, 32, 32, generator=gen) * 0.2 + 0.4

        losses = train_vae(model.vae, images, n_steps=30, root_seed=0, lr=3e-4)
        assert losses[-1] < losses[0]

    def test_latent_scale_calibration(self):
        model = small_model()
        images = torch.rand(8, 3, 32, 32)
        scale = calibrate_latent_scale(model, images)
        assert scale == pytest.approx(float(model.latent_scale))
        with torch.no_grad():
            z = model.encode_images(images)
        assert float(z.std()) == pytest.approx(1.0, rel=0.05)
