"""
Numba kernels for tile-parallel alpha blending of 2D Gaussian discs

Each tile is processed by one worker and owns its pixels and its slice of
(tile, candidate) pair slots, so no two workers ever write the same location.
"""

import math

import numba
import numpy as np

# per-pair gradient slots
PAIR_CENTER = 0
PAIR_AXIS_U = 3
PAIR_AXIS_V = 6
PAIR_PLANE = 9
PAIR_SCALE = 12
PAIR_OPACITY = 14
PAIR_COLOR = 15
PAIR_WIDTH = 18

BRANCH_RAY = 0
BRANCH_LOWPASS = 1


@numba.njit(cache=True)
def pair_distortion(weights, depths):
    """Sum over pairs i<j of w_i w_j |z_i - z_j| and its partials w.r.t. w and z"""
    n = weights.shape[0]
    grad_w = np.zeros(n)
    grad_z = np.zeros(n)
    if n < 2:
        return 0.0, grad_w, grad_z
    order = np.argsort(depths)
    total_w = 0.0
    total_s = 0.0
    for k in range(n):
        total_w += weights[k]
        total_s += weights[k] * depths[k]
    value = 0.0
    below_w = 0.0
    below_s = 0.0
    for idx in range(n):
        k = order[idx]
        w = weights[k]
        z = depths[k]
        above_w = total_w - below_w - w
        above_s = total_s - below_s - w * z
        value += w * (z * below_w - below_s)
        grad_w[k] = z * (below_w - above_w) - (below_s - above_s)
        grad_z[k] = w * (below_w - above_w)
        below_w += w
        below_s += w * z
    return value, grad_w, grad_z


@numba.njit(cache=True)
def _intersect(s, ray_x, ray_y, pix_x, pix_y, centers, axes_u, axes_v, planes, scales,
               means2d, near, inv_lowpass2):
    """Ray-disc intersection and filtered Gaussian value

    Returns (ok, G, z, u, v, branch); ok is False when the ray misses the plane
    or meets it in front of the near plane.
    """
    nd = planes[s, 0] * ray_x + planes[s, 1] * ray_y + planes[s, 2]
    if abs(nd) < 1e-10:
        return False, 0.0, 0.0, 0.0, 0.0, BRANCH_RAY
    nc = planes[s, 0] * centers[s, 0] + planes[s, 1] * centers[s, 1] + planes[s, 2] * centers[s, 2]
    z = nc / nd
    if z <= near:
        return False, 0.0, z, 0.0, 0.0, BRANCH_RAY
    qx = z * ray_x - centers[s, 0]
    qy = z * ray_y - centers[s, 1]
    qz = z - centers[s, 2]
    u = (qx * axes_u[s, 0] + qy * axes_u[s, 1] + qz * axes_u[s, 2]) / scales[s, 0]
    v = (qx * axes_v[s, 0] + qy * axes_v[s, 1] + qz * axes_v[s, 2]) / scales[s, 1]
    ray2 = u * u + v * v
    dx = pix_x - means2d[s, 0]
    dy = pix_y - means2d[s, 1]
    low2 = (dx * dx + dy * dy) * inv_lowpass2
    if ray2 <= low2:
        return True, math.exp(-0.5 * ray2), z, u, v, BRANCH_RAY
    return True, math.exp(-0.5 * low2), z, u, v, BRANCH_LOWPASS


@numba.njit(parallel=True, cache=True)
def forward_kernel(tile_offsets, tile_splats, tiles_x, tile_size, width, height,
                   centers, axes_u, axes_v, planes, oriented_normals, scales, opacities,
                   colors, means2d, fx, fy, cx, cy, background,
                   near, min_alpha, t_floor, alpha_clip, lowpass_sigma,
                   out_color, out_alpha, out_median, out_depth_sum, out_normal,
                   out_distortion, out_final_t, pair_hit):
    n_tiles = tile_offsets.shape[0] - 1
    inv_lowpass2 = 1.0 / (lowpass_sigma * lowpass_sigma)
    for t in numba.prange(n_tiles):
        start = tile_offsets[t]
        n = tile_offsets[t + 1] - start
        tx = t % tiles_x
        ty = t // tiles_x
        w_buf = np.empty(max(n, 1))
        z_buf = np.empty(max(n, 1))
        for py in range(ty * tile_size, min((ty + 1) * tile_size, height)):
            for px in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                pix_x = px + 0.5
                pix_y = py + 0.5
                ray_x = (pix_x - cx) / fx
                ray_y = (pix_y - cy) / fy
                T = 1.0
                acc = 0.0
                depth_sum = 0.0
                median = 0.0
                median_set = False
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                n0 = 0.0
                n1 = 0.0
                n2 = 0.0
                k = 0
                for j in range(n):
                    s = tile_splats[start + j]
                    ok, G, z, u, v, branch = _intersect(
                        s, ray_x, ray_y, pix_x, pix_y, centers, axes_u, axes_v, planes,
                        scales, means2d, near, inv_lowpass2)
                    if not ok:
                        continue
                    alpha = min(opacities[s] * G, alpha_clip)
                    if alpha < min_alpha:
                        continue
                    w = alpha * T
                    if w > 0.0:
                        pair_hit[start + j] = True
                    c0 += w * colors[s, 0]
                    c1 += w * colors[s, 1]
                    c2 += w * colors[s, 2]
                    n0 += w * oriented_normals[s, 0]
                    n1 += w * oriented_normals[s, 1]
                    n2 += w * oriented_normals[s, 2]
                    depth_sum += w * z
                    acc += w
                    w_buf[k] = w
                    z_buf[k] = z
                    k += 1
                    if not median_set and acc >= 0.5:
                        median = z
                        median_set = True
                    T = T * (1.0 - alpha)
                    if T < t_floor:
                        break
                out_color[py, px, 0] = c0 + T * background[0]
                out_color[py, px, 1] = c1 + T * background[1]
                out_color[py, px, 2] = c2 + T * background[2]
                out_alpha[py, px] = acc
                out_median[py, px] = median
                out_depth_sum[py, px] = depth_sum
                out_normal[py, px, 0] = n0
                out_normal[py, px, 1] = n1
                out_normal[py, px, 2] = n2
                out_final_t[py, px] = T
                dist, _, _ = pair_distortion(w_buf[:k], z_buf[:k])
                out_distortion[py, px] = dist


@numba.njit(parallel=True, cache=True)
def backward_kernel(tile_offsets, tile_splats, tiles_x, tile_size, width, height,
                    centers, axes_u, axes_v, planes, oriented_normals, scales, opacities,
                    colors, means2d, fx, fy, cx, cy, background,
                    near, min_alpha, t_floor, alpha_clip, lowpass_sigma,
                    grad_color, grad_alpha, grad_depth, grad_normal, grad_distortion,
                    pair_grads):
    n_tiles = tile_offsets.shape[0] - 1
    inv_lowpass2 = 1.0 / (lowpass_sigma * lowpass_sigma)
    for t in numba.prange(n_tiles):
        start = tile_offsets[t]
        n = tile_offsets[t + 1] - start
        tx = t % tiles_x
        ty = t // tiles_x
        size = max(n, 1)
        j_buf = np.empty(size, dtype=np.int64)
        a_buf = np.empty(size)
        t_buf = np.empty(size)
        w_buf = np.empty(size)
        z_buf = np.empty(size)
        u_buf = np.empty(size)
        v_buf = np.empty(size)
        g_buf = np.empty(size)
        b_buf = np.empty(size, dtype=np.int64)
        clip_buf = np.empty(size, dtype=np.bool_)
        for py in range(ty * tile_size, min((ty + 1) * tile_size, height)):
            for px in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                pix_x = px + 0.5
                pix_y = py + 0.5
                ray_x = (pix_x - cx) / fx
                ray_y = (pix_y - cy) / fy

                # replay the forward blend
                T = 1.0
                acc = 0.0
                depth_sum = 0.0
                k = 0
                for j in range(n):
                    s = tile_splats[start + j]
                    ok, G, z, u, v, branch = _intersect(
                        s, ray_x, ray_y, pix_x, pix_y, centers, axes_u, axes_v, planes,
                        scales, means2d, near, inv_lowpass2)
                    if not ok:
                        continue
                    raw = opacities[s] * G
                    alpha = min(raw, alpha_clip)
                    if alpha < min_alpha:
                        continue
                    w = alpha * T
                    j_buf[k] = j
                    a_buf[k] = alpha
                    t_buf[k] = T
                    w_buf[k] = w
                    z_buf[k] = z
                    u_buf[k] = u
                    v_buf[k] = v
                    g_buf[k] = G
                    b_buf[k] = branch
                    clip_buf[k] = raw > alpha_clip
                    k += 1
                    acc += w
                    depth_sum += w * z
                    T = T * (1.0 - alpha)
                    if T < t_floor:
                        break
                if k == 0:
                    continue

                dC0 = grad_color[py, px, 0]
                dC1 = grad_color[py, px, 1]
                dC2 = grad_color[py, px, 2]
                dA = grad_alpha[py, px]
                dD = grad_depth[py, px]
                dN0 = grad_normal[py, px, 0]
                dN1 = grad_normal[py, px, 1]
                dN2 = grad_normal[py, px, 2]
                dDist = grad_distortion[py, px]
                mean_depth = depth_sum / acc if acc > 0.0 else 0.0
                inv_acc = 1.0 / acc if acc > 0.0 else 0.0
                _, dist_w, dist_z = pair_distortion(w_buf[:k], z_buf[:k])

                S = (dC0 * background[0] + dC1 * background[1] + dC2 * background[2]) * T
                for kk in range(k - 1, -1, -1):
                    j = j_buf[kk]
                    s = tile_splats[start + j]
                    slot = start + j
                    alpha = a_buf[kk]
                    w = w_buf[kk]
                    z = z_buf[kk]
                    g = (dC0 * colors[s, 0] + dC1 * colors[s, 1] + dC2 * colors[s, 2]
                         + dA
                         + dD * (z - mean_depth) * inv_acc
                         + dN0 * oriented_normals[s, 0] + dN1 * oriented_normals[s, 1]
                         + dN2 * oriented_normals[s, 2]
                         + dDist * dist_w[kk])
                    d_alpha = g * t_buf[kk] - S / (1.0 - alpha)
                    S += g * w

                    pair_grads[slot, PAIR_COLOR + 0] += dC0 * w
                    pair_grads[slot, PAIR_COLOR + 1] += dC1 * w
                    pair_grads[slot, PAIR_COLOR + 2] += dC2 * w
                    # oriented normal is +-plane; the sign is piecewise constant
                    sgn = oriented_normals[s, 0] * planes[s, 0] + oriented_normals[s, 1] * planes[s, 1] \
                        + oriented_normals[s, 2] * planes[s, 2]
                    pair_grads[slot, PAIR_PLANE + 0] += sgn * w * dN0
                    pair_grads[slot, PAIR_PLANE + 1] += sgn * w * dN1
                    pair_grads[slot, PAIR_PLANE + 2] += sgn * w * dN2

                    dz = dD * w * inv_acc + dDist * dist_z[kk]
                    if not clip_buf[kk]:
                        G = g_buf[kk]
                        pair_grads[slot, PAIR_OPACITY] += d_alpha * G
                        d_g2 = d_alpha * opacities[s] * G * -0.5
                        if b_buf[kk] == BRANCH_RAY:
                            u = u_buf[kk]
                            v = v_buf[kk]
                            du = d_g2 * 2.0 * u
                            dv = d_g2 * 2.0 * v
                            qx = z * ray_x - centers[s, 0]
                            qy = z * ray_y - centers[s, 1]
                            qz = z - centers[s, 2]
                            su = scales[s, 0]
                            sv = scales[s, 1]
                            dqx = du * axes_u[s, 0] / su + dv * axes_v[s, 0] / sv
                            dqy = du * axes_u[s, 1] / su + dv * axes_v[s, 1] / sv
                            dqz = du * axes_u[s, 2] / su + dv * axes_v[s, 2] / sv
                            pair_grads[slot, PAIR_AXIS_U + 0] += du * qx / su
                            pair_grads[slot, PAIR_AXIS_U + 1] += du * qy / su
                            pair_grads[slot, PAIR_AXIS_U + 2] += du * qz / su
                            pair_grads[slot, PAIR_AXIS_V + 0] += dv * qx / sv
                            pair_grads[slot, PAIR_AXIS_V + 1] += dv * qy / sv
                            pair_grads[slot, PAIR_AXIS_V + 2] += dv * qz / sv
                            pair_grads[slot, PAIR_SCALE + 0] += -du * u / su
                            pair_grads[slot, PAIR_SCALE + 1] += -dv * v / sv
                            dz += dqx * ray_x + dqy * ray_y + dqz
                            pair_grads[slot, PAIR_CENTER + 0] -= dqx
                            pair_grads[slot, PAIR_CENTER + 1] -= dqy
                            pair_grads[slot, PAIR_CENTER + 2] -= dqz
                        else:
                            dx = pix_x - means2d[s, 0]
                            dy = pix_y - means2d[s, 1]
                            # d(low2)/d(mean) = -2 delta / sigma^2
                            dmx = -d_g2 * 2.0 * dx * inv_lowpass2
                            dmy = -d_g2 * 2.0 * dy * inv_lowpass2
                            cz = centers[s, 2]
                            pair_grads[slot, PAIR_CENTER + 0] += dmx * fx / cz
                            pair_grads[slot, PAIR_CENTER + 1] += dmy * fy / cz
                            pair_grads[slot, PAIR_CENTER + 2] -= (dmx * fx * centers[s, 0]
                                                                  + dmy * fy * centers[s, 1]) / (cz * cz)

                    # z = (plane . centre) / (plane . ray)
                    nd = planes[s, 0] * ray_x + planes[s, 1] * ray_y + planes[s, 2]
                    pair_grads[slot, PAIR_PLANE + 0] += dz * (centers[s, 0] - z * ray_x) / nd
                    pair_grads[slot, PAIR_PLANE + 1] += dz * (centers[s, 1] - z * ray_y) / nd
                    pair_grads[slot, PAIR_PLANE + 2] += dz * (centers[s, 2] - z) / nd
                    pair_grads[slot, PAIR_CENTER + 0] += dz * planes[s, 0] / nd
                    pair_grads[slot, PAIR_CENTER + 1] += dz * planes[s, 1] / nd
                    pair_grads[slot, PAIR_CENTER + 2] += dz * planes[s, 2] / nd
