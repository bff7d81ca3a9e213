"""Segmentation network: shape contracts, prompt paths, branch independence."""

import pytest
import torch

from glandprompt.segmenter import (
    BranchOutput,
    DensePromptEncoder,
    GradePromptSegmenter,
    NoPromptEncoder,
    SegmenterConfig,
)
from glandprompt.training import weighted_mse

from conftest import TOY_SEG_CONFIG


@pytest.fixture()
def model():
    torch.manual_seed(0)
    return GradePromptSegmenter(TOY_SEG_CONFIG).eval()


def toy_inputs(batch=1, seed=0):
    g = torch.Generator().manual_seed(seed)
    image = torch.rand(batch, 3, 64, 64, generator=g)
    heat = torch.rand(batch, 1, 64, 64, generator=g)
    return image, heat


class TestConfig:
    def test_grid(self):
        assert SegmenterConfig().grid == 25  # 400 / 16
        assert TOY_SEG_CONFIG.grid == 8

    def test_validation(self):
        with pytest.raises(ValueError):
            SegmenterConfig(image_size=400, encoder_patch=15)
        with pytest.raises(ValueError):
            SegmenterConfig(embed_dim=100)  # not divisible by 8


class TestImageEncoder:
    def test_embedding_shape_and_determinism(self, model):
        image, _ = toy_inputs()
        with torch.no_grad():
            a = model.encode_image(image)
            b = model.encode_image(image)
        assert a.shape == (1, 32, 8, 8)
        assert torch.equal(a, b)

    def test_wrong_size_errors(self, model):
        with pytest.raises(ValueError):
            model.encode_image(torch.zeros(1, 3, 64, 65))

    def test_constant_vs_textured_inputs_differ(self, model):
        flat = torch.full((1, 3, 64, 64), 0.25)
        textured = torch.rand(1, 3, 64, 64, generator=torch.Generator().manual_seed(2))
        with torch.no_grad():
            assert not torch.allclose(model.encode_image(flat), model.encode_image(textured))


class TestPromptEncoders:
    def test_dense_prompt_shape(self, model):
        out = model.gland_prompt_encoder(torch.rand(2, 1, 64, 64))
        assert out.shape == (2, 32, 8, 8)

    def test_zero_prompt_with_zeroed_stack_gives_zero_embedding(self):
        enc = DensePromptEncoder(TOY_SEG_CONFIG)
        with torch.no_grad():
            for p in enc.parameters():
                p.zero_()
        out = enc(torch.zeros(1, 1, 64, 64))
        assert torch.equal(out, torch.zeros_like(out))

    def test_different_prompts_change_decoder_input(self, model):
        image, _ = toy_inputs()
        with torch.no_grad():
            emb = model.encode_image(image)
            p1 = model.gland_prompt_encoder(torch.zeros(1, 1, 64, 64))
            p2 = model.gland_prompt_encoder(torch.ones(1, 1, 64, 64))
        assert (emb + p1 - (emb + p2)).norm() > 0

    def test_no_prompt_embedding_constant_and_shaped(self):
        enc = NoPromptEncoder(TOY_SEG_CONFIG)
        a = enc(batch_size=2)
        b = enc(batch_size=2)
        assert a.shape == (2, 32, 8, 8)
        assert torch.equal(a, b)
        # constant across the grid
        assert torch.equal(a[:, :, 0, 0], a[:, :, 5, 3])

    def test_no_prompt_embedding_trains(self):
        enc = NoPromptEncoder(TOY_SEG_CONFIG)
        before = enc.embedding.weight.detach().clone()
        opt = torch.optim.SGD(enc.parameters(), lr=0.5)
        loss = enc(batch_size=1).sum()
        loss.backward()
        opt.step()
        assert not torch.equal(before, enc.embedding.weight.detach())


class TestDecoder:
    def test_output_shape_and_determinism(self, model):
        emb = torch.randn(2, 32, 8, 8)
        with torch.no_grad():
            a = model.gland_decoder(emb)
            b = model.gland_decoder(emb)
        assert a.shape == (2, 64, 64)
        assert torch.equal(a, b)

    def test_single_step_decreases_weighted_mse(self):
        torch.manual_seed(1)
        model = GradePromptSegmenter(TOY_SEG_CONFIG)
        image, heat = toy_inputs(seed=3)
        target = (torch.rand(1, 64, 64) > 0.5).float()
        weight = torch.ones(1, 64, 64)
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)

        def loss_value():
            emb = model.encode_image(image)
            pred = torch.sigmoid(model.gland_logits(emb, image, heat))
            return weighted_mse(pred, target, weight)

        before = loss_value()
        opt.zero_grad()
        before.backward()
        opt.step()
        after = loss_value()
        assert after.item() < before.item()


class TestForward:
    def test_probabilities_in_open_interval(self, model):
        image, heat = toy_inputs(batch=2)
        with torch.no_grad():
            out = model(image, heat)
        assert isinstance(out, BranchOutput)
        for prob in (out.gland_prob, out.contour_prob):
            assert prob.shape == (2, 64, 64)
            assert (prob > 0).all() and (prob < 1).all()

    def test_single_encoder_evaluation_per_forward(self, model):
        image, heat = toy_inputs()
        model.image_encoder.eval_count = 0
        with torch.no_grad():
            model(image, heat)
        assert model.image_encoder.eval_count == 1
        with torch.no_grad():
            model(image, heat)
        assert model.image_encoder.eval_count == 2

    def test_contour_output_bitwise_independent_of_heatmap(self, model):
        image, h1 = toy_inputs(seed=1)
        _, h2 = toy_inputs(seed=2)
        with torch.no_grad():
            out1 = model(image, h1)
            out2 = model(image, h2)
        assert torch.equal(out1.contour_prob, out2.contour_prob)
        assert not torch.equal(out1.gland_prob, out2.gland_prob)

    def test_zeroed_adapter_equals_raw_heatmap_prompt(self, model):
        with torch.no_grad():
            for p in model.adapter.parameters():
                p.zero_()
        image, heat = toy_inputs(seed=4)
        with torch.no_grad():
            out = model(image, heat)
            emb = model.encode_image(image)
            manual = torch.sigmoid(
                model.gland_decoder(emb + model.gland_prompt_encoder(heat))
            ).clamp(1e-6, 1 - 1e-6)
        assert torch.equal(out.gland_prob, manual)

    def test_parameter_groups_cover_model(self, model):
        grouped = set()
        for module in model.parameter_groups().values():
            grouped.update(id(p) for p in module.parameters())
        assert grouped == {id(p) for p in model.parameters()}
