"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criteria (tolerances pinned here, nothing deferred):
  1. gradient fidelity per module (<1e-4) and end-to-end 2-layer (<1e-3)
  2. scalar transcription oracles agree < 1e-10 on 100 random instances
  3. deformable degeneracy: zero offsets == standard conv (<1e-5);
     integer offsets == shift-then-convolve exactly up to float32 rounding
  4. structural gates on 1000 random inputs; softmax row sums; time delay
  5. complexity orderings at the 64x64 / patch-4 / 4-layer / att-32 config
  6. learning sanity: tiny 2-layer 16-hidden full model overfits 8 blob
     sequences to MSE < 0.005 within 2000 steps; final MSE <= backbone x 1.05
  7. metric correctness vs brute-force enumeration and closed forms
  8. bit-identical seeded end-to-end runs (gen-data -> train -> eval)
"""

import json
import math
import time

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from conftest import fd_gradient_check, sigmoid
from gmg.cell import STConvLSTMCell
from gmg.cli import main as cli_main
from gmg.config import AblationSpec, ModelConfig, TrainConfig
from gmg.data import gen_blob_sequences
from gmg.gfm import GlobalFocus
from gmg.metrics import csi_counts, pixel_metrics, ssim
from gmg.mgm import MotionGuided, deformable_conv2d, time_delay, trend_update
from gmg.model import GMG
from gmg.profiling import flops_estimate, parameter_groups
from gmg.sam import SelfAttentionMemory, stable_softmax
from gmg.training import evaluate, train


def report(criterion: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] {status} {criterion}" + (f" ({detail})" if detail else ""))
    assert ok, f"{criterion}: {detail}"


# --------------------------------------------------------------------------
# 1. Gradient fidelity
# --------------------------------------------------------------------------

class TestCriterion1Gradients:
    def test_cell_gradients(self):
        torch.manual_seed(0)
        cell = STConvLSTMCell(1, 2, kernel=3).double()
        x = torch.rand(1, 1, 4, 4, dtype=torch.float64)
        h = torch.rand(1, 2, 4, 4, dtype=torch.float64)
        c = torch.rand(1, 2, 4, 4, dtype=torch.float64)
        m = torch.rand(1, 2, 4, 4, dtype=torch.float64)

        def loss():
            h2, c2, m2 = cell(x, h, c, m)
            return (h2 * h2).sum() + (c2 * torch.sin(c2)).sum() + (m2 ** 2).sum()

        err = fd_gradient_check(loss, list(cell.parameters()))
        report("1 cell_core gradient", err < 1e-4, f"max rel err {err:.3g}")

    def test_gfm_gradients(self):
        torch.manual_seed(1)
        gfm = GlobalFocus(2, 2).double()
        x = torch.rand(1, 2, 4, 4, dtype=torch.float64)
        h = torch.rand(1, 2, 4, 4, dtype=torch.float64)

        def loss():
            out = gfm(x, h)
            return (out * torch.cos(out)).sum()

        err = fd_gradient_check(loss, list(gfm.parameters()))
        report("1 gfm gradient", err < 1e-4, f"max rel err {err:.3g}")

    def test_sam_gradients(self):
        torch.manual_seed(2)
        sam = SelfAttentionMemory(2, 2, kernel=3).double()
        hg = torch.rand(1, 2, 4, 4, dtype=torch.float64)
        m = torch.rand(1, 2, 4, 4, dtype=torch.float64)

        def loss():
            h_out, m_new = sam(hg, m)
            return (h_out ** 2).sum() + (m_new * torch.sin(m_new)).sum()

        err = fd_gradient_check(loss, list(sam.parameters()))
        report("1 sam gradient", err < 1e-4, f"max rel err {err:.3g}")

    def test_mgm_gradients(self):
        torch.manual_seed(3)
        mgm = MotionGuided(4, filter_size=3).double()
        hg = torch.rand(1, 4, 4, 4, dtype=torch.float64)
        f = torch.rand(1, 18, 2, 2, dtype=torch.float64) * 0.3
        d = torch.rand(1, 18, 2, 2, dtype=torch.float64) * 0.3

        def loss():
            x_out, f_new, d_new = mgm(hg, f, d, t_index=2)
            return (x_out ** 2).sum() + f_new.sum() + (d_new ** 2).sum()

        err = fd_gradient_check(loss, list(mgm.parameters()), max_per_param=40)
        report("1 mgm gradient", err < 1e-4, f"max rel err {err:.3g}")

    def test_end_to_end_gradients(self):
        torch.manual_seed(4)
        cfg = ModelConfig.for_variant("L", num_layers=2, num_hidden=4, patch_size=1,
                                      height=4, width=4, t_in=2, t_out=2,
                                      att_hidden=2, cell_kernel=3)
        model = GMG(cfg).double()
        frames = torch.rand(1, 2, 1, 4, 4, dtype=torch.float64)
        target = torch.rand(1, 2, 1, 4, 4, dtype=torch.float64)

        def loss():
            pred = model(frames, 2, clamp=False)
            return ((pred - target) ** 2).sum()

        start = time.perf_counter()
        err = fd_gradient_check(loss, list(model.parameters()), max_per_param=2)
        elapsed = time.perf_counter() - start
        report("1 end-to-end gradient", err < 1e-3,
               f"max rel err {err:.3g}, {elapsed:.0f}s")


# --------------------------------------------------------------------------
# 2. Scalar transcription oracles (100 random instances each, < 1e-10)
# --------------------------------------------------------------------------

class TestCriterion2ScalarOracles:
    N = 100

    def test_gated_memory_update_equations(self):
        torch.manual_seed(5)
        sam = SelfAttentionMemory(1, 1, kernel=3).double()
        with torch.no_grad():
            for p in sam.parameters():
                p.uniform_(-1, 1)

        def gate(mod, v):
            k = mod.depthwise.weight.shape[-1] // 2
            return (mod.depthwise.weight[0, 0, k, k] * mod.pointwise.weight[0, 0, 0, 0]).item() * v

        g = torch.Generator().manual_seed(6)
        worst = 0.0
        for _ in range(self.N):
            z, hg, m = (torch.rand(1, 1, 1, 1, generator=g, dtype=torch.float64) * 2 - 1
                        for _ in range(3))
            h_out, m_new = sam.update(z, hg, m)
            i = sigmoid(gate(sam.gate_zi, z.item()) + gate(sam.gate_hi, hg.item())
                        + sam.bias_i.item())
            cand = math.tanh(gate(sam.gate_zc, z.item()) + gate(sam.gate_hc, hg.item())
                             + sam.bias_c.item())
            m_want = (1 - i) * m.item() + i * cand
            o = sigmoid(gate(sam.gate_zo, z.item()) + gate(sam.gate_ho, hg.item())
                        + sam.bias_o.item())
            worst = max(worst, abs(m_new.item() - m_want), abs(h_out.item() - o * m_want))
        report("2 gated memory update oracle", worst < 1e-10, f"max abs {worst:.3g}")

    def test_motion_gru_equations(self):
        torch.manual_seed(7)
        mgm = MotionGuided(4, filter_size=1).double()
        with torch.no_grad():
            for p in mgm.parameters():
                p.uniform_(-1, 1)
        kc = mgm.gru_update.weight.shape[-1] // 2
        wu = mgm.gru_update.weight[:, :, kc, kc].detach().numpy()
        bu = mgm.gru_update.bias.detach().numpy()
        wr = mgm.gru_reset.weight[:, :, kc, kc].detach().numpy()
        br = mgm.gru_reset.bias.detach().numpy()
        wz = mgm.gru_cand.weight[:, :, kc, kc].detach().numpy()
        bz = mgm.gru_cand.bias.detach().numpy()
        g = torch.Generator().manual_seed(8)
        worst = 0.0
        for _ in range(self.N):
            h = torch.rand(1, 1, 1, 1, generator=g, dtype=torch.float64) * 2 - 1
            f = torch.rand(1, 2, 1, 1, generator=g, dtype=torch.float64) * 2 - 1
            out = mgm.motion_gru(h, f)
            hv, fv = h.item(), f.reshape(-1).numpy()
            r = [sigmoid(wr[c, 0] * hv + wr[c, 1] * fv[0] + wr[c, 2] * fv[1] + br[c])
                 for c in range(2)]
            for c in range(2):
                u = sigmoid(wu[c, 0] * hv + wu[c, 1] * fv[0] + wu[c, 2] * fv[1] + bu[c])
                zz = math.tanh(wz[c, 0] * hv + wz[c, 1] * fv[0] * r[0]
                               + wz[c, 2] * fv[1] * r[1] + bz[c])
                want = fv[c] * (1 - u) + zz * u
                worst = max(worst, abs(out[0, c].item() - want))
        report("2 motion GRU oracle", worst < 1e-10, f"max abs {worst:.3g}")

    def test_factor_delay_trend_equations(self):
        torch.manual_seed(9)
        mgm = MotionGuided(4, filter_size=1).double()  # 2 motion channels
        with torch.no_grad():
            for p in mgm.parameters():
                p.uniform_(-1, 1)
        w = mgm.factor_proj.weight.detach().numpy()
        b = mgm.factor_proj.bias.detach().numpy()
        ap = mgm.alpha_prior.detach().numpy()
        bp = mgm.beta_prior.detach().numpy()
        g = torch.Generator().manual_seed(10)
        worst = 0.0
        for k in range(self.N):
            h_enc = torch.full((1, 1, 1, 1),
                               (torch.rand((), generator=g, dtype=torch.float64) * 2 - 1).item(),
                               dtype=torch.float64)
            d_prev, f_prev = (torch.rand(1, 2, 1, 1, generator=g, dtype=torch.float64)
                              for _ in range(2))
            t_index = k % 10 + 1
            alpha, beta, alpha_d, beta_d = mgm.deform_factors(h_enc)
            delay = time_delay(beta, t_index)
            d_p, d_m, f_new = trend_update(d_prev, f_prev, delay, alpha, alpha_d)
            hv = h_enc.item()
            for c in range(2):
                ad = sigmoid(w[c, 0] * hv + b[c])
                bd = sigmoid(w[2 + c, 0] * hv + b[2 + c])
                a = 0.5 * (ad + ap[c])
                bb = 0.5 * (bd + bp[c])
                de = math.exp(-bb * t_index)
                dp_want = de * d_prev[0, c].item() + a * ad * d_prev[0, c].item()
                dm_want = 0.5 * dp_want + 0.5 * f_prev[0, c].item()
                worst = max(
                    worst,
                    abs(alpha_d[0, c].item() - ad), abs(beta_d[0, c].item() - bd),
                    abs(alpha[0, c].item() - a), abs(beta[0, c].item() - bb),
                    abs(delay[0, c, 0, 0].item() - de),
                    abs(d_p[0, c].item() - dp_want),
                    abs(d_m[0, c].item() - dm_want),
                    abs(f_new[0, c].item() - (dm_want + f_prev[0, c].item())))
        report("2 factor/delay/trend oracle", worst < 1e-10, f"max abs {worst:.3g}")


# --------------------------------------------------------------------------
# 3. Deformable degeneracy
# --------------------------------------------------------------------------

class TestCriterion3Deformable:
    def test_zero_offsets_standard_conv(self):
        g = torch.Generator().manual_seed(11)
        worst = 0.0
        for _ in range(10):
            x = torch.rand(2, 3, 9, 7, generator=g)
            w = torch.rand(4, 3, 3, 3, generator=g) - 0.5
            b = torch.rand(4, generator=g)
            got = deformable_conv2d(x, torch.zeros(2, 18, 9, 7), w, b)
            want = F.conv2d(x, w, b, padding=1)
            worst = max(worst, (got - want).abs().max().item())
        report("3 zero-offset degeneracy", worst < 1e-5, f"max abs diff {worst:.3g}")

    def test_integer_offsets_shift_then_convolve(self):
        g = torch.Generator().manual_seed(12)
        worst = 0.0
        for shift in (1, 2):
            x = torch.rand(1, 2, 8, 8, generator=g)
            w = torch.rand(2, 2, 3, 3, generator=g) - 0.5
            offsets = torch.zeros(1, 18, 8, 8)
            offsets[:, 1::2] = float(shift)
            got = deformable_conv2d(x, offsets, w)
            want = F.conv2d(F.pad(x, (0, shift)), w, padding=1)[:, :, :, shift:]
            worst = max(worst, (got - want).abs().max().item())
        report("3 integer-offset shift equivalence", worst <= 1e-6,
               f"max abs diff {worst:.3g}")


# --------------------------------------------------------------------------
# 4. Structural gates
# --------------------------------------------------------------------------

class TestCriterion4Gates:
    def test_fusion_convexity_1000_inputs(self):
        torch.manual_seed(13)
        gfm = GlobalFocus(1, 2)
        g = torch.Generator().manual_seed(14)
        ok = True
        for _ in range(1000):
            h = torch.rand(1, 2, 3, 3, generator=g) * 6 - 3
            xg = torch.rand(1, 2, 3, 3, generator=g) * 6 - 3
            with torch.no_grad():
                hg = gfm.gated_fuse(h, xg)
            lo, hi = torch.minimum(h, xg), torch.maximum(h, xg)
            ok &= bool((hg >= lo - 1e-6).all() and (hg <= hi + 1e-6).all())
        report("4 fusion gate convexity", ok)

    def test_softmax_rows_1000_inputs(self):
        g = torch.Generator().manual_seed(15)
        worst = 0.0
        for _ in range(1000):
            logits = torch.rand(1, 5, 5, generator=g) * 200 - 100
            s = stable_softmax(logits, dim=-1)
            worst = max(worst, (s.sum(-1) - 1.0).abs().max().item())
        report("4 softmax row normalization", worst < 1e-6, f"max |sum-1| {worst:.3g}")

    def test_time_delay_monotone_and_unit(self):
        beta = torch.full((1, 4), 0.3, dtype=torch.float64)
        vals = [time_delay(beta, t)[0, 0, 0, 0].item() for t in range(1, 11)]
        monotone = all(a > b for a, b in zip(vals, vals[1:]))
        zero = torch.zeros(1, 4, dtype=torch.float64)
        unit = all(torch.equal(time_delay(zero, t), torch.ones(1, 4, 1, 1,
                   dtype=torch.float64)) for t in range(1, 11))
        report("4 time delay", monotone and unit,
               f"monotone={monotone}, unit at beta=0={unit}")


# --------------------------------------------------------------------------
# 5. Complexity orderings (no training)
# --------------------------------------------------------------------------

class TestCriterion5Complexity:
    @staticmethod
    def _cfg(variant="L", layers=4):
        return ModelConfig.for_variant(variant, height=64, width=64, patch_size=4,
                                       num_layers=layers, att_hidden=32, num_hidden=64)

    def test_module_params_ordering(self):
        groups = parameter_groups(GMG(self._cfg()))
        ok = groups["mgm"] < groups["gfm"] < groups["sam"]
        report("5 params MGM < GFM < SAM", ok,
               f"{groups['mgm']} < {groups['gfm']} < {groups['sam']}")

    def test_variant_orderings(self):
        p_l = parameter_groups(GMG(self._cfg("L")))["total"]
        p_s = parameter_groups(GMG(self._cfg("s")))["total"]
        f_l = flops_estimate(self._cfg("L"))["total"]
        f_m = flops_estimate(self._cfg("m"))["total"]
        report("5 params(s) < params(L)", p_s < p_l, f"{p_s} < {p_l}")
        report("5 flops(m) < flops(L)", f_m < f_l, f"{f_m} < {f_l}")

    def test_params_increase_with_depth(self):
        counts = [parameter_groups(GMG(self._cfg(layers=n)))["total"]
                  for n in (2, 3, 4, 5)]
        ok = all(a < b for a, b in zip(counts, counts[1:]))
        report("5 params strictly increase with layers 2..5", ok, str(counts))


# --------------------------------------------------------------------------
# 7. Metric correctness
# --------------------------------------------------------------------------

class TestCriterion7Metrics:
    def test_csi_brute_force_1000_fields(self):
        rng = np.random.default_rng(16)
        ok = True
        for _ in range(1000):
            pred = rng.integers(0, 2, size=(8, 8)).astype(np.float64)
            target = rng.integers(0, 2, size=(8, 8)).astype(np.float64)
            tp = fp = fn = 0
            for i in range(8):
                for j in range(8):
                    p, t = pred[i, j] >= 0.5, target[i, j] >= 0.5
                    tp += p and t
                    fp += p and not t
                    fn += (not p) and t
            ok &= csi_counts(pred, target, 0.5) == (tp, fp, fn)
        report("7 CSI brute-force equality", ok)

    def test_constant_offset_psnr(self):
        rng = np.random.default_rng(17)
        target = rng.random((3, 16, 16)) * 0.8
        m = pixel_metrics(target + 0.1, target)
        err = abs(m["psnr"] - 20.0)
        report("7 constant-offset PSNR 20 dB", err < 1e-6, f"|psnr-20| {err:.3g}")

    def test_ssim_identity(self):
        x = np.random.default_rng(18).random((24, 24))
        err = abs(ssim(x, x) - 1.0)
        report("7 SSIM identity", err < 1e-9, f"|ssim-1| {err:.3g}")


# --------------------------------------------------------------------------
# 8. Reproducibility end to end
# --------------------------------------------------------------------------

class TestCriterion8Reproducibility:
    def test_two_seeded_runs_bit_identical(self, tmp_path):
        cfg = TrainConfig(
            model=ModelConfig.for_variant("L", num_layers=2, num_hidden=8,
                                          patch_size=2, height=16, width=16,
                                          t_in=3, t_out=2, att_hidden=4,
                                          cell_kernel=3),
            lr=1e-3, batch_size=4, max_steps=100, seed=11)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(cfg.to_json())
        outputs = []
        for run in ("one", "two"):
            root = tmp_path / run
            root.mkdir()
            data = root / "data.gmgs"
            assert cli_main(["gen-data", "--source", "blobs", "--seed", "21",
                             "--count", "4", "--size", "16", "--t-in", "3",
                             "--t-out", "2", "--out", str(data)]) == 0
            assert cli_main(["train", "--config", str(cfg_path), "--data",
                             str(data), "--out", str(root)]) == 0
            assert cli_main(["eval", "--checkpoint",
                             str(root / "checkpoint_final.gmgz"), "--data",
                             str(data), "--thresholds", "0.5",
                             "--out", str(root)]) == 0
            outputs.append((
                data.read_bytes(),
                (root / "checkpoint_final.gmgz").read_bytes(),
                (root / "metric_report.json").read_bytes(),
            ))
        same = all(a == b for a, b in zip(outputs[0], outputs[1]))
        report("8 seeded end-to-end runs bit-identical", same)
