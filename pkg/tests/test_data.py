import numpy as np
import pytest
from PIL import Image

from crwkv import data as D
from crwkv.oracles import naive_psnr, naive_ssim


class TestPNG:
    def test_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (7, 9, 3)).astype(np.float32) / 255
        D.save_png(img, tmp_path / "a.png")
        np.testing.assert_array_equal(D.load_png(tmp_path / "a.png"), img)

    def test_independent_fixture_decodes(self, tmp_path):
        px = np.arange(4 * 5 * 3, dtype=np.uint8).reshape(4, 5, 3) * 4
        D.write_png_fixture(tmp_path / "f.png", px)
        np.testing.assert_array_equal(D.to_uint8(D.load_png(tmp_path / "f.png")), px)

    def test_sixteen_bit_rejected(self, tmp_path):
        Image.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(tmp_path / "deep.png")
        with pytest.raises(OSError, match="bit depth 16"):
            D.load_png(tmp_path / "deep.png")

    def test_not_png(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"GIF89a" + bytes(40))
        with pytest.raises(OSError, match="not a PNG"):
            D.load_png(tmp_path / "x.png")

    def test_paired_dir(self, tmp_path):
        for sub in ("clean", "noisy"):
            (tmp_path / sub).mkdir()
            for name in ("b.png", "a.png"):
                D.write_png_fixture(tmp_path / sub / name, np.zeros((3, 3, 3), np.uint8))
        clean, noisy, names = D.load_paired_dir(tmp_path)
        assert names == ["a.png", "b.png"] and len(noisy) == 2

    def test_paired_dir_missing_partner(self, tmp_path):
        (tmp_path / "clean").mkdir()
        (tmp_path / "noisy").mkdir()
        D.write_png_fixture(tmp_path / "clean" / "a.png", np.zeros((3, 3, 3), np.uint8))
        with pytest.raises(FileNotFoundError, match="no match"):
            D.load_paired_dir(tmp_path)


class TestNoise:
    def test_awgn_std(self):
        clean = np.full((200, 200, 3), 0.5)
        noisy = D.add_noise(clean, D.NoiseSpec("awgn", 25.0), 0)
        assert abs(np.std(noisy - clean) * 255 - 25.0) < 0.5

    def test_poisson_mean_and_variance(self):
        clean = np.full((300, 300, 1), 0.4)
        noisy = D.add_noise(clean, D.NoiseSpec("poisson", peak=50.0), 1)
        assert abs(noisy.mean() - 0.4) < 2e-3
        assert abs(noisy.var() - 0.4 / 50.0) < 5e-4

    def test_clipped_and_seeded(self):
        clean = np.random.default_rng(2).random((16, 16, 3))
        spec = D.NoiseSpec("mixed", 50.0, 10.0)
        a = D.add_noise(clean, spec, 9)
        assert a.min() >= 0 and a.max() <= 1
        np.testing.assert_array_equal(a, D.add_noise(clean, spec, 9))

    def test_zero_sigma_awgn_is_identity(self):
        clean = np.random.default_rng(3).random((4, 4, 3))
        np.testing.assert_array_equal(D.add_noise(clean, D.NoiseSpec("awgn", 0.0), 0), clean)

    @pytest.mark.parametrize("kw", [{"kind": "salt"}, {"sigma": -1.0}, {"peak": 0.0}])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            D.NoiseSpec(**kw)


class TestPatches:
    def test_grid(self):
        img = np.arange(10 * 7 * 3).reshape(10, 7, 3)
        p = D.extract_patches(img, 3)
        assert len(p) == 6
        np.testing.assert_array_equal(p[1], img[0:3, 3:6])

    def test_count_and_too_small(self):
        img = np.zeros((8, 8, 3))
        assert len(D.extract_patches(img, 4, count=3)) == 3
        assert D.extract_patches(img, 9) == []

    def test_dihedral_group(self):
        patch = np.random.default_rng(4).random((5, 5, 3))
        seen = {D.dihedral(patch, i).tobytes() for i in range(8)}
        assert len(seen) == 8
        for i in range(8):
            np.testing.assert_array_equal(D.dihedral_inverse(D.dihedral(patch, i), i), patch)

    def test_augment_is_a_group_element(self):
        patch = np.random.default_rng(5).random((4, 4, 3))
        out = D.augment(patch, 3)
        assert any(np.array_equal(out, D.dihedral(patch, i)) for i in range(8))


class TestMetrics:
    def test_psnr_closed_form(self):
        a = np.full((8, 8, 3), 0.5)
        assert abs(D.psnr(a + 1 / 255, a) - 20 * np.log10(255)) < 1e-6

    def test_psnr_cap(self):
        a = np.random.default_rng(6).random((4, 4, 3))
        assert D.psnr(a, a) == 100.0

    def test_psnr_shape_mismatch(self):
        with pytest.raises(ValueError):
            D.psnr(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_ssim_identity_and_range(self):
        rng = np.random.default_rng(7)
        a = rng.random((16, 16, 3))
        assert D.ssim(a, a) == 1.0
        assert -1 <= D.ssim(a, rng.random((16, 16, 3))) < 0.2

    def test_against_loop_oracles(self):
        rng = np.random.default_rng(8)
        a = rng.random((13, 15, 2))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
        assert abs(D.psnr(a, b) - naive_psnr(a, b)) < 1e-9
        assert abs(D.ssim(a, b) - naive_ssim(a, b)) < 1e-9

    def test_ssim_small_image(self):
        with pytest.raises(ValueError, match="smaller than"):
            D.ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


class TestSpectrum:
    def test_constant_map_is_dc_only(self):
        prof = D.power_spectrum(np.full((2, 16, 16), 3.0))
        assert len(prof.bins) == 8
        assert abs(prof.log_amplitude[0] - np.log10((3.0 * 256) ** 2)) < 1e-9
        np.testing.assert_array_equal(prof.log_amplitude[1:], D.SPECTRUM_FLOOR)

    def test_white_noise_is_flat(self):
        x = np.random.default_rng(9).standard_normal((8, 16, 64, 64))
        prof = D.power_spectrum(x)
        # expected power per frequency is H*W
        np.testing.assert_allclose(prof.log_amplitude[2:], np.log10(64 * 64), atol=0.1)

    def test_sinusoid_peak(self):
        yy, xx = np.mgrid[0:32, 0:32]
        x = np.sin(2 * np.pi * 5 * xx / 32)[None]
        prof = D.power_spectrum(x)
        assert int(np.argmax(prof.log_amplitude)) == 5

    def test_csv(self, tmp_path):
        prof = D.power_spectrum(np.ones((1, 1, 8, 8)), layer="latent")
        prof.write_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "bin,log_amplitude,layer" and len(lines) == 5
        assert lines[1].endswith(",latent")


def test_synthetic_textures():
    imgs = D.synthetic_textures(3, 20, seed=1)
    assert len(imgs) == 3 and imgs[0].shape == (20, 20, 3) and imgs[0].dtype == np.float32
    assert all(0 <= im.min() and im.max() <= 1 for im in imgs)
    np.testing.assert_array_equal(imgs[2], D.synthetic_textures(3, 20, seed=1)[2])
