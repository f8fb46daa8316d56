"""Independent loop-based reference implementations.

Everything here is written from the operation definitions with explicit
Python loops, deliberately avoiding the vectorized code paths under test.
Slow and only meant for toy sizes.
"""

from __future__ import annotations

import math

import torch

A_CUBIC = -0.75


def _cubic1(t, a=A_CUBIC):
    return ((a + 2) * t - (a + 3)) * t * t + 1


def _cubic2(t, a=A_CUBIC):
    return ((a * t - 5 * a) * t + 8 * a) * t - 4 * a


def bicubic_resize(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Per-pixel bicubic interpolation, half-pixel coordinate mapping, clamped borders."""
    C, H, W = x.shape
    out = torch.zeros(C, out_h, out_w, dtype=x.dtype)
    for oy in range(out_h):
        sy = (oy + 0.5) * H / out_h - 0.5
        iy = math.floor(sy)
        ty = sy - iy
        wy = [_cubic2(ty + 1), _cubic1(ty), _cubic1(1 - ty), _cubic2(2 - ty)]
        for ox in range(out_w):
            sx = (ox + 0.5) * W / out_w - 0.5
            ix = math.floor(sx)
            tx = sx - ix
            wx = [_cubic2(tx + 1), _cubic1(tx), _cubic1(1 - tx), _cubic2(2 - tx)]
            for c in range(C):
                acc = 0.0
                for dy in range(4):
                    yy = min(max(iy - 1 + dy, 0), H - 1)
                    for dx in range(4):
                        xx = min(max(ix - 1 + dx, 0), W - 1)
                        acc += wy[dy] * wx[dx] * float(x[c, yy, xx])
                out[c, oy, ox] = acc
    return out


def bilinear_resize(x: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Per-pixel bilinear interpolation, half-pixel mapping with source clamping."""
    C, H, W = x.shape
    out = torch.zeros(C, out_h, out_w, dtype=x.dtype)
    for oy in range(out_h):
        sy = max((oy + 0.5) * H / out_h - 0.5, 0.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, H - 1)
        ty = sy - y0
        for ox in range(out_w):
            sx = max((ox + 0.5) * W / out_w - 0.5, 0.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, W - 1)
            tx = sx - x0
            for c in range(C):
                out[c, oy, ox] = (
                    (1 - ty) * (1 - tx) * float(x[c, y0, x0])
                    + (1 - ty) * tx * float(x[c, y0, x1])
                    + ty * (1 - tx) * float(x[c, y1, x0])
                    + ty * tx * float(x[c, y1, x1])
                )
    return out


def nearest_upsample2(x: torch.Tensor) -> torch.Tensor:
    """Exact 2x nearest-neighbor upsampling of a (C, H, W) map."""
    C, H, W = x.shape
    out = torch.zeros(C, 2 * H, 2 * W, dtype=x.dtype)
    for c in range(C):
        for y in range(2 * H):
            for xx in range(2 * W):
                out[c, y, xx] = x[c, y // 2, xx // 2]
    return out


def bilinear_point(value: torch.Tensor, loc_x: float, loc_y: float) -> torch.Tensor:
    """Sample a (C, H, W) map at a normalized [0, 1] location with zero padding.

    The normalized location maps to pixel coordinates loc * size - 0.5 so that
    (i + 0.5) / size hits pixel i exactly.
    """
    C, H, W = value.shape
    px = loc_x * W - 0.5
    py = loc_y * H - 0.5
    x0, y0 = math.floor(px), math.floor(py)
    tx, ty = px - x0, py - y0
    out = torch.zeros(C, dtype=value.dtype)
    for yy, xx, wgt in (
        (y0, x0, (1 - ty) * (1 - tx)),
        (y0, x0 + 1, (1 - ty) * tx),
        (y0 + 1, x0, ty * (1 - tx)),
        (y0 + 1, x0 + 1, ty * tx),
    ):
        if 0 <= yy < H and 0 <= xx < W:
            out += wgt * value[:, yy, xx]
    return out


def softmax_1d(v: torch.Tensor) -> torch.Tensor:
    shifted = v - v.max()
    e = shifted.exp()
    return e / e.sum()


def layer_norm(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor,
               eps: float = 1e-6) -> torch.Tensor:
    """LayerNorm over the last dimension of a (..., D) tensor, row by row."""
    x, weight, bias = x.detach(), weight.detach(), bias.detach()
    flat = x.reshape(-1, x.shape[-1])
    out = torch.zeros_like(flat)
    for i in range(flat.shape[0]):
        row = flat[i]
        mean = row.mean()
        var = ((row - mean) ** 2).mean()
        out[i] = (row - mean) / torch.sqrt(var + eps) * weight + bias
    return out.reshape(x.shape)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
    out = x.detach() @ weight.detach().t()
    if bias is not None:
        out = out + bias.detach()
    return out


def msda(module, query: torch.Tensor, value: torch.Tensor, refs: torch.Tensor,
         shapes: tuple[tuple[int, int], ...]) -> torch.Tensor:
    """Quadruple-loop deformable attention over (query, head, level, point).

    Linear projections use the module's parameter matrices directly; the
    offset prediction, softmax weighting, bilinear sampling and head
    combination are all recomputed with explicit loops.
    """
    query, value, refs = query.detach(), value.detach(), refs.detach()
    B, Tq, D = query.shape
    heads, levels, points = module.num_heads, module.num_levels, module.num_points
    head_dim = D // heads
    v_proj = linear(value, module.value_proj.weight, module.value_proj.bias)
    level_maps = []
    start = 0
    for h, w in shapes:
        rows = v_proj[:, start : start + h * w, :]
        level_maps.append(rows.reshape(B, h, w, heads, head_dim))
        start += h * w
    out = torch.zeros(B, Tq, D, dtype=query.dtype)
    for b in range(B):
        for q in range(Tq):
            feat = query[b, q]
            offsets = (linear(feat, module.sampling_offsets.weight, module.sampling_offsets.bias)
                       .reshape(heads, levels, points, 2))
            logits = (linear(feat, module.attention_weights.weight, module.attention_weights.bias)
                      .reshape(heads, levels * points))
            combined = torch.zeros(D, dtype=query.dtype)
            for h in range(heads):
                weights = softmax_1d(logits[h]).reshape(levels, points)
                acc = torch.zeros(head_dim, dtype=query.dtype)
                for lvl, (hh, ww) in enumerate(shapes):
                    value_map = level_maps[lvl][b, :, :, h, :].permute(2, 0, 1)
                    for p in range(points):
                        loc_x = float(refs[b, q, lvl, 0]) + float(offsets[h, lvl, p, 0]) / ww
                        loc_y = float(refs[b, q, lvl, 1]) + float(offsets[h, lvl, p, 1]) / hh
                        acc = acc + float(weights[lvl, p]) * bilinear_point(value_map, loc_x, loc_y)
                combined[h * head_dim : (h + 1) * head_dim] = acc
            out[b, q] = linear(combined, module.output_proj.weight, module.output_proj.bias)
    return out


def attention(q_in: torch.Tensor, kv_in: torch.Tensor, module) -> torch.Tensor:
    """Dense multi-head attention with per-query loops, using the module's projections."""
    q_in, kv_in = q_in.detach(), kv_in.detach()
    B, Tq, D = q_in.shape
    Tk = kv_in.shape[1]
    heads = module.num_heads
    head_dim = D // heads
    q = linear(q_in, module.q_proj.weight, module.q_proj.bias)
    k = linear(kv_in, module.k_proj.weight, module.k_proj.bias)
    v = linear(kv_in, module.v_proj.weight, module.v_proj.bias)
    out = torch.zeros(B, Tq, D, dtype=q_in.dtype)
    scale = head_dim ** -0.5
    for b in range(B):
        for t in range(Tq):
            for h in range(heads):
                sl = slice(h * head_dim, (h + 1) * head_dim)
                scores = torch.zeros(Tk, dtype=q_in.dtype)
                for s in range(Tk):
                    scores[s] = (q[b, t, sl] * scale * k[b, s, sl]).sum()
                weights = softmax_1d(scores)
                acc = torch.zeros(head_dim, dtype=q_in.dtype)
                for s in range(Tk):
                    acc += weights[s] * v[b, s, sl]
                out[b, t, sl] = acc
    return linear(out, module.out_proj.weight, module.out_proj.bias)


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> torch.Tensor:
    """Naive direct convolution for (B, C, H, W)."""
    x, weight = x.detach(), weight.detach()
    bias = bias.detach() if bias is not None else None
    B, C, H, W = x.shape
    out_c, in_per_group, kh, kw = weight.shape
    out_h = (H + 2 * padding - kh) // stride + 1
    out_w = (W + 2 * padding - kw) // stride + 1
    group_out = out_c // groups
    out = torch.zeros(B, out_c, out_h, out_w, dtype=x.dtype)
    for b in range(B):
        for oc in range(out_c):
            g = oc // group_out
            for oy in range(out_h):
                for ox in range(out_w):
                    acc = 0.0
                    for ic in range(in_per_group):
                        cin = g * in_per_group + ic
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride + ky - padding
                                ix = ox * stride + kx - padding
                                if 0 <= iy < H and 0 <= ix < W:
                                    acc += float(weight[oc, ic, ky, kx]) * float(x[b, cin, iy, ix])
                    if bias is not None:
                        acc += float(bias[oc])
                    out[b, oc, oy, ox] = acc
    return out


def conv_transpose2x2(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Stride-2 kernel-2 transposed convolution: each input pixel paints a 2x2 block."""
    x, weight, bias = x.detach(), weight.detach(), bias.detach()
    B, in_c, H, W = x.shape
    out_c = weight.shape[1]
    out = torch.zeros(B, out_c, 2 * H, 2 * W, dtype=x.dtype)
    for b in range(B):
        for oc in range(out_c):
            for y in range(H):
                for xx in range(W):
                    for dy in range(2):
                        for dx in range(2):
                            acc = 0.0
                            for ic in range(in_c):
                                acc += float(weight[ic, oc, dy, dx]) * float(x[b, ic, y, xx])
                            out[b, oc, 2 * y + dy, 2 * xx + dx] = acc + float(bias[oc])
    return out


def batchnorm_eval(x: torch.Tensor, bn) -> torch.Tensor:
    """BatchNorm2d in eval mode: running statistics, per channel."""
    x = x.detach()
    weight, bias = bn.weight.detach(), bn.bias.detach()
    out = torch.zeros_like(x)
    for c in range(x.shape[1]):
        rm = float(bn.running_mean[c])
        rv = float(bn.running_var[c])
        w = float(weight[c])
        b = float(bias[c])
        out[:, c] = (x[:, c] - rm) / math.sqrt(rv + bn.eps) * w + b
    return out


def coordinate_attention(x: torch.Tensor, module) -> torch.Tensor:
    """Loop version of the pooled height/width gating."""
    x = x.detach()
    w1, b1 = module.conv1.weight.detach(), module.conv1.bias.detach()
    wh, bh = module.conv_h.weight.detach(), module.conv_h.bias.detach()
    ww_, bw = module.conv_w.weight.detach(), module.conv_w.bias.detach()
    B, C, H, W = x.shape
    out = torch.zeros_like(x)
    for b in range(B):
        pooled_h = x[b].mean(dim=2)   # (C, H)
        pooled_w = x[b].mean(dim=1)   # (C, W)
        stacked = torch.cat([pooled_h, pooled_w], dim=1)  # (C, H + W)
        mid = w1.shape[0]
        y = torch.zeros(mid, H + W, dtype=x.dtype)
        for m in range(mid):
            for t in range(H + W):
                acc = float(b1[m])
                for c in range(C):
                    acc += float(w1[m, c, 0, 0]) * float(stacked[c, t])
                y[m, t] = max(acc, 0.0)
        gate_h = torch.zeros(C, H, dtype=x.dtype)
        gate_w = torch.zeros(C, W, dtype=x.dtype)
        for c in range(C):
            for t in range(H):
                acc = float(bh[c])
                for m in range(mid):
                    acc += float(wh[c, m, 0, 0]) * float(y[m, t])
                gate_h[c, t] = 1.0 / (1.0 + math.exp(-acc))
            for t in range(W):
                acc = float(bw[c])
                for m in range(mid):
                    acc += float(ww_[c, m, 0, 0]) * float(y[m, H + t])
                gate_w[c, t] = 1.0 / (1.0 + math.exp(-acc))
        for c in range(C):
            for yy in range(H):
                for xx in range(W):
                    out[b, c, yy, xx] = x[b, c, yy, xx] * gate_h[c, yy] * gate_w[c, xx]
    return out


def relative_error(actual: torch.Tensor, expected: torch.Tensor) -> float:
    actual, expected = actual.detach(), expected.detach()
    diff = (actual.double() - expected.double()).abs().max()
    scale = expected.double().abs().max().clamp_min(1e-12)
    return float(diff / scale)
