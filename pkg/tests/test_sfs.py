import numpy as np
import pytest
import torch

from sharedspace.exceptions import VariantMismatchError
from sharedspace.losses import LossWeights
from sharedspace.sfs import SfSTargets, make_pseudo_labels, sfs_loss, sfs_terms, sh_basis, shade


def unit_normals_torch(b=1, h=4, w=5, seed=0):
    g = torch.Generator().manual_seed(seed)
    n = torch.rand(b, 3, h, w, generator=g, dtype=torch.float64) - 0.5
    n[:, 2] = n[:, 2].abs() + 0.5
    return n / n.norm(dim=1, keepdim=True)


class TestShBasis:
    def test_z_axis_normal(self):
        n = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64).view(1, 3, 1, 1)
        b = sh_basis(n).flatten().tolist()
        assert b == [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]

    def test_x_axis_normal(self):
        n = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64).view(1, 3, 1, 1)
        b = sh_basis(n).flatten().tolist()
        assert b == [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 1.0]

    def test_dc_component_always_one(self):
        b = sh_basis(unit_normals_torch(seed=1))
        assert torch.equal(b[:, 0], torch.ones_like(b[:, 0]))

    def test_non_unit_normals_rejected(self):
        n = torch.full((1, 3, 2, 2), 1.0, dtype=torch.float64)
        with pytest.raises(ValueError):
            sh_basis(n)

    def test_numpy_last_axis_layout(self):
        n = np.zeros((2, 2, 3))
        n[..., 2] = 1.0
        b = sh_basis(n)
        assert b.shape == (2, 2, 9)
        assert np.array_equal(b[0, 0], [1, 0, 1, 0, 0, 0, 2, 0, 0])


class TestShade:
    def test_dc_only_light_flat_albedo(self):
        n = unit_normals_torch(seed=2)
        albedo = torch.ones(1, 3, 4, 5, dtype=torch.float64)
        light = torch.zeros(1, 27, dtype=torch.float64)
        light[:, 0] = light[:, 9] = light[:, 18] = 1.0
        out = shade(n, albedo, light)
        assert torch.allclose(out, torch.ones_like(out), atol=1e-12, rtol=0)

    def test_l6_only_z_normal_gives_two(self):
        n = torch.zeros(1, 3, 2, 2, dtype=torch.float64)
        n[:, 2] = 1.0
        albedo = torch.ones(1, 3, 2, 2, dtype=torch.float64)
        light = torch.zeros(1, 27, dtype=torch.float64)
        light[:, 6] = light[:, 15] = light[:, 24] = 1.0
        out = shade(n, albedo, light)
        assert torch.allclose(out, torch.full_like(out, 2.0), atol=1e-12, rtol=0)

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(3)
        n = unit_normals_torch(h=3, w=3, seed=4)
        albedo = torch.tensor(rng.random((1, 3, 3, 3)))
        light = torch.tensor(rng.random((1, 27)))
        out = shade(n, albedo, light)
        for v in range(3):
            for u in range(3):
                nx, ny, nz = (n[0, i, v, u].item() for i in range(3))
                basis = [1.0, ny, nz, nx, nx * ny, ny * nz,
                         -nx * nx - ny * ny + 2 * nz * nz, nz * nx, nx * nx - ny * ny]
                for c in range(3):
                    want = albedo[0, c, v, u].item() * sum(
                        light[0, 9 * c + i].item() * basis[i] for i in range(9)
                    )
                    assert out[0, c, v, u].item() == pytest.approx(want, abs=1e-12)

    def test_linear_in_light(self):
        n = unit_normals_torch(seed=5)
        g = torch.Generator().manual_seed(6)
        albedo = torch.rand(1, 3, 4, 5, generator=g, dtype=torch.float64)
        l1 = torch.rand(1, 27, generator=g, dtype=torch.float64)
        l2 = torch.rand(1, 27, generator=g, dtype=torch.float64)
        lhs = shade(n, albedo, l1 + l2)
        rhs = shade(n, albedo, l1) + shade(n, albedo, l2)
        assert (lhs - rhs).abs().max().item() <= 1e-12

    def test_linear_in_albedo(self):
        n = unit_normals_torch(seed=7)
        g = torch.Generator().manual_seed(8)
        albedo = torch.rand(1, 3, 4, 5, generator=g, dtype=torch.float64)
        light = torch.rand(1, 27, generator=g, dtype=torch.float64)
        lhs = shade(n, 2.5 * albedo, light)
        rhs = 2.5 * shade(n, albedo, light)
        assert (lhs - rhs).abs().max().item() <= 1e-12


class TestPseudoLabels:
    def test_depth_variant_rejected(self):
        class FakeDepthNet:
            variant = "depth"
            training = False

        with pytest.raises(VariantMismatchError):
            make_pseudo_labels(FakeDepthNet(), torch.zeros(1, 3, 32, 32))


class TestSfsLoss:
    def make_case(self, seed=9):
        g = torch.Generator().manual_seed(seed)
        n = unit_normals_torch(seed=seed)
        albedo = torch.rand(1, 3, 4, 5, generator=g, dtype=torch.float64)
        light = torch.rand(1, 27, generator=g, dtype=torch.float64)
        image = shade(n, albedo, light)
        mask = torch.ones(1, 1, 4, 5, dtype=torch.bool)
        return n, albedo, light, image, mask

    def test_perfect_prediction_zero(self):
        n, albedo, light, image, mask = self.make_case()
        target = SfSTargets(normals=n, albedo=albedo, light=light, image=image, mask=mask)
        out = sfs_loss((n, albedo, light, image), target, LossWeights.fne_defaults())
        assert out.item() == 0.0

    def test_light_offset_only(self):
        n, albedo, light, image, mask = self.make_case(seed=10)
        target = SfSTargets(normals=n, albedo=albedo, light=light, image=image, mask=mask)
        weights = LossWeights(sfs_recon=0.0, sfs_normal=0.0, sfs_albedo=0.0, sfs_light=1.0)
        out = sfs_loss((n, albedo, light + 1.0, image), target, weights)
        assert out.item() == pytest.approx(1.0, abs=1e-12)

    def test_matches_weighted_sum_oracle(self):
        n, albedo, light, image, mask = self.make_case(seed=11)
        g = torch.Generator().manual_seed(12)
        pn = unit_normals_torch(seed=13)
        pa = torch.rand(1, 3, 4, 5, generator=g, dtype=torch.float64)
        pl = torch.rand(1, 27, generator=g, dtype=torch.float64)
        recon = shade(pn, pa, pl)
        target = SfSTargets(normals=n, albedo=albedo, light=light, image=image, mask=mask)
        weights = LossWeights(sfs_recon=0.5, sfs_normal=0.5, sfs_albedo=0.5, sfs_light=0.1)
        out = sfs_loss((pn, pa, pl, recon), target, weights)

        n_px = 4 * 5 * 3
        want = (
            0.5 * (recon - image).abs().sum().item() / n_px
            + 0.5 * (pn - n).abs().sum().item() / n_px
            + 0.5 * (pa - albedo).abs().sum().item() / n_px
            + 0.1 * ((pl - light) ** 2).mean().item()
        )
        assert out.item() == pytest.approx(want, rel=1e-12)

    def test_masked_terms_ignore_outside(self):
        n, albedo, light, image, mask = self.make_case(seed=14)
        mask = mask.clone()
        mask[..., :, :2] = False
        corrupted = albedo.clone()
        corrupted[..., :2] += 10.0  # outside the mask, must not contribute
        target = SfSTargets(normals=n, albedo=albedo, light=light, image=image, mask=mask)
        weights = LossWeights(sfs_recon=0.0, sfs_normal=0.0, sfs_albedo=1.0, sfs_light=0.0)
        out = sfs_loss((n, corrupted, light, image), target, weights)
        assert out.item() == 0.0

    def test_empty_mask_rejected(self):
        n, albedo, light, image, mask = self.make_case(seed=15)
        target = SfSTargets(normals=n, albedo=albedo, light=light, image=image,
                            mask=torch.zeros_like(mask))
        with pytest.raises(ValueError):
            sfs_loss((n, albedo, light, image), target, LossWeights.fne_defaults())

    def test_terms_keys(self):
        n, albedo, light, image, mask = self.make_case(seed=16)
        target = SfSTargets(normals=n, albedo=albedo, light=light, image=image, mask=mask)
        terms = sfs_terms(n, albedo, light, image, target)
        assert set(terms) == {"sfs_recon", "sfs_normal", "sfs_albedo", "sfs_light"}
