"""Numba kernels for the software ray caster.

Everything here works in volume index space: rays are transformed once per
pixel so the marching loop is three fused multiply-adds per step. Pixels
are fully independent, which makes tile renders bitwise-identical to whole
frames regardless of the decomposition. Keep fastmath off: determinism is
part of the renderer's contract.
"""

import numpy as np
from numba import njit

METHOD_DVR = 0
METHOD_MIP = 1
METHOD_ISO = 2

_EPS = 1e-12


@njit(nogil=True, cache=True)
def _trilinear(grid, x, y, z):
    nz, ny, nx = grid.shape
    i0 = int(x)
    j0 = int(y)
    k0 = int(z)
    if i0 > nx - 2:
        i0 = nx - 2 if nx > 1 else 0
    if j0 > ny - 2:
        j0 = ny - 2 if ny > 1 else 0
    if k0 > nz - 2:
        k0 = nz - 2 if nz > 1 else 0
    fx = x - i0
    fy = y - j0
    fz = z - k0
    i1 = i0 + 1 if nx > 1 else i0
    j1 = j0 + 1 if ny > 1 else j0
    k1 = k0 + 1 if nz > 1 else k0
    c00 = grid[k0, j0, i0] * (1.0 - fx) + grid[k0, j0, i1] * fx
    c10 = grid[k0, j1, i0] * (1.0 - fx) + grid[k0, j1, i1] * fx
    c01 = grid[k1, j0, i0] * (1.0 - fx) + grid[k1, j0, i1] * fx
    c11 = grid[k1, j1, i0] * (1.0 - fx) + grid[k1, j1, i1] * fx
    c0 = c00 * (1.0 - fy) + c10 * fy
    c1 = c01 * (1.0 - fy) + c11 * fy
    return c0 * (1.0 - fz) + c1 * fz


@njit(nogil=True, cache=True)
def _gradient_world(grid, x, y, z, mt):
    """Central-difference gradient mapped to world space via mt = (index map)ᵀ."""
    nz, ny, nx = grid.shape
    xp = x + 1.0 if x + 1.0 <= nx - 1 else nx - 1.0
    xm = x - 1.0 if x - 1.0 >= 0.0 else 0.0
    yp = y + 1.0 if y + 1.0 <= ny - 1 else ny - 1.0
    ym = y - 1.0 if y - 1.0 >= 0.0 else 0.0
    zp = z + 1.0 if z + 1.0 <= nz - 1 else nz - 1.0
    zm = z - 1.0 if z - 1.0 >= 0.0 else 0.0
    gx = (_trilinear(grid, xp, y, z) - _trilinear(grid, xm, y, z)) * 0.5
    gy = (_trilinear(grid, x, yp, z) - _trilinear(grid, x, ym, z)) * 0.5
    gz = (_trilinear(grid, x, y, zp) - _trilinear(grid, x, y, zm)) * 0.5
    wx = gx * mt[0, 0] + gy * mt[1, 0] + gz * mt[2, 0]
    wy = gx * mt[0, 1] + gy * mt[1, 1] + gz * mt[2, 1]
    wz = gx * mt[0, 2] + gy * mt[1, 2] + gz * mt[2, 2]
    return wx, wy, wz


@njit(nogil=True, cache=True)
def _slab(o, d, lo, hi, t0, t1):
    """Intersect one axis slab; returns updated (t0, t1) or t0 > t1 on miss."""
    if d > _EPS or d < -_EPS:
        ta = (lo - o) / d
        tb = (hi - o) / d
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    elif o < lo or o > hi:
        t0 = 1.0
        t1 = 0.0
    return t0, t1


@njit(nogil=True, cache=True)
def raycast_tile(grid, m, eye_idx, eye, right, up, fwd, tan_half, aspect,
                 lut, use_window, win_min, win_max, cscale, coffset, clo, chi,
                 method, iso_raw, iso_r, iso_g, iso_b,
                 step, early_alpha, lighting,
                 clip_a, clip_b,
                 bg, out, depth, x0, x1, y0, y1):
    """Render pixels [x0,x1)×[y0,y1) of the full image into out/depth.

    m maps world offsets to index offsets (rows of diag(1/s)·Rᵀ); eye_idx is
    the camera position already in index space, so marching is p = eye_idx +
    t·(m·d) with t in world mm. clip_a/clip_b hold half-space constraints in
    index space; a sample at p is cut away when a·p + b > 0.
    """
    nz, ny, nx = grid.shape
    height, width = depth.shape
    res = lut.shape[0]
    nplanes = clip_a.shape[0]
    inv_w = 1.0 / width
    inv_h = 1.0 / height

    for j in range(y0, y1):
        ndc_y = 1.0 - 2.0 * (j + 0.5) * inv_h
        for i in range(x0, x1):
            ndc_x = 2.0 * (i + 0.5) * inv_w - 1.0
            # world-space unit ray direction through the pixel center
            dx = fwd[0] + ndc_x * tan_half * aspect * right[0] + ndc_y * tan_half * up[0]
            dy = fwd[1] + ndc_x * tan_half * aspect * right[1] + ndc_y * tan_half * up[1]
            dz = fwd[2] + ndc_x * tan_half * aspect * right[2] + ndc_y * tan_half * up[2]
            dn = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
            dx *= dn
            dy *= dn
            dz *= dn

            ix = m[0, 0] * dx + m[0, 1] * dy + m[0, 2] * dz
            iy = m[1, 0] * dx + m[1, 1] * dy + m[1, 2] * dz
            iz = m[2, 0] * dx + m[2, 1] * dy + m[2, 2] * dz

            t0 = -1.0e300
            t1 = 1.0e300
            t0, t1 = _slab(eye_idx[0], ix, 0.0, nx - 1.0, t0, t1)
            t0, t1 = _slab(eye_idx[1], iy, 0.0, ny - 1.0, t0, t1)
            t0, t1 = _slab(eye_idx[2], iz, 0.0, nz - 1.0, t0, t1)
            if t0 < 0.0:
                t0 = 0.0

            out[j, i, 0] = bg[0]
            out[j, i, 1] = bg[1]
            out[j, i, 2] = bg[2]
            out[j, i, 3] = bg[3]
            depth[j, i] = np.inf
            if t1 < t0:
                continue

            if method == METHOD_DVR:
                cr = 0.0
                cg = 0.0
                cb = 0.0
                ca = 0.0
                hit_t = np.inf
                t = t0
                while t <= t1:
                    px = eye_idx[0] + t * ix
                    py = eye_idx[1] + t * iy
                    pz = eye_idx[2] + t * iz
                    cut = False
                    for p in range(nplanes):
                        if clip_a[p, 0] * px + clip_a[p, 1] * py + clip_a[p, 2] * pz + clip_b[p] > 0.0:
                            cut = True
                            break
                    if not cut:
                        raw = _trilinear(grid, px, py, pz)
                        if use_window and (raw < win_min or raw > win_max):
                            coord = 0.0
                        else:
                            coord = cscale * raw + coffset
                            if coord < clo:
                                coord = clo
                            elif coord > chi:
                                coord = chi
                        li = int(coord * (res - 1) + 0.5)
                        al = lut[li, 3]
                        if al > 0.0:
                            # zero-alpha samples cost nothing: pow and the
                            # gradient are only paid for visible material
                            acorr = 1.0 - (1.0 - al) ** step
                            ell = 1.0
                            if lighting:
                                gx, gy, gz = _gradient_world(grid, px, py, pz, m)
                                gn = np.sqrt(gx * gx + gy * gy + gz * gz)
                                if gn > _EPS:
                                    nd = (gx * dx + gy * dy + gz * dz) / gn
                                    ell = nd if nd >= 0.0 else -nd
                            w = (1.0 - ca) * acorr
                            cr += w * lut[li, 0] * ell
                            cg += w * lut[li, 1] * ell
                            cb += w * lut[li, 2] * ell
                            ca += w
                            if ca >= 0.5 and hit_t == np.inf:
                                hit_t = t
                            if ca >= early_alpha:
                                break
                    t += step
                out[j, i, 0] = cr + (1.0 - ca) * bg[0]
                out[j, i, 1] = cg + (1.0 - ca) * bg[1]
                out[j, i, 2] = cb + (1.0 - ca) * bg[2]
                out[j, i, 3] = ca + (1.0 - ca) * bg[3]
                depth[j, i] = hit_t

            elif method == METHOD_MIP:
                best = -1.0e300
                best_t = np.inf
                seen = False
                t = t0
                while t <= t1:
                    px = eye_idx[0] + t * ix
                    py = eye_idx[1] + t * iy
                    pz = eye_idx[2] + t * iz
                    cut = False
                    for p in range(nplanes):
                        if clip_a[p, 0] * px + clip_a[p, 1] * py + clip_a[p, 2] * pz + clip_b[p] > 0.0:
                            cut = True
                            break
                    if not cut:
                        raw = _trilinear(grid, px, py, pz)
                        if raw > best:
                            best = raw
                            best_t = t
                        seen = True
                    t += step
                if seen:
                    if use_window and (best < win_min or best > win_max):
                        coord = 0.0
                    else:
                        coord = cscale * best + coffset
                        if coord < clo:
                            coord = clo
                        elif coord > chi:
                            coord = chi
                    li = int(coord * (res - 1) + 0.5)
                    al = lut[li, 3]
                    out[j, i, 0] = al * lut[li, 0] + (1.0 - al) * bg[0]
                    out[j, i, 1] = al * lut[li, 1] + (1.0 - al) * bg[1]
                    out[j, i, 2] = al * lut[li, 2] + (1.0 - al) * bg[2]
                    out[j, i, 3] = al + (1.0 - al) * bg[3]
                    depth[j, i] = best_t

            else:  # METHOD_ISO
                prev_t = t0
                have_prev = False
                hit = False
                hit_t = 0.0
                t = t0
                while t <= t1:
                    px = eye_idx[0] + t * ix
                    py = eye_idx[1] + t * iy
                    pz = eye_idx[2] + t * iz
                    cut = False
                    for p in range(nplanes):
                        if clip_a[p, 0] * px + clip_a[p, 1] * py + clip_a[p, 2] * pz + clip_b[p] > 0.0:
                            cut = True
                            break
                    if cut:
                        diff = -1.0  # cut-away space counts as below threshold
                    else:
                        diff = _trilinear(grid, px, py, pz) - iso_raw
                    if diff > 0.0:
                        if not have_prev:
                            hit = True
                            hit_t = t
                        else:
                            lo_t = prev_t
                            hi_t = t
                            for _ in range(8):
                                mid = 0.5 * (lo_t + hi_t)
                                qx = eye_idx[0] + mid * ix
                                qy = eye_idx[1] + mid * iy
                                qz = eye_idx[2] + mid * iz
                                mcut = False
                                for p in range(nplanes):
                                    if clip_a[p, 0] * qx + clip_a[p, 1] * qy + clip_a[p, 2] * qz + clip_b[p] > 0.0:
                                        mcut = True
                                        break
                                if not mcut and _trilinear(grid, qx, qy, qz) - iso_raw > 0.0:
                                    hi_t = mid
                                else:
                                    lo_t = mid
                            hit = True
                            hit_t = 0.5 * (lo_t + hi_t)
                        break
                    prev_t = t
                    have_prev = True
                    t += step
                if hit:
                    hx = eye_idx[0] + hit_t * ix
                    hy = eye_idx[1] + hit_t * iy
                    hz = eye_idx[2] + hit_t * iz
                    ell = 1.0
                    if lighting:
                        gx, gy, gz = _gradient_world(grid, hx, hy, hz, m)
                        gn = np.sqrt(gx * gx + gy * gy + gz * gz)
                        if gn > _EPS:
                            nd = (gx * dx + gy * dy + gz * dz) / gn
                            ell = nd if nd >= 0.0 else -nd
                    out[j, i, 0] = iso_r * ell
                    out[j, i, 1] = iso_g * ell
                    out[j, i, 2] = iso_b * ell
                    out[j, i, 3] = 1.0
                    depth[j, i] = hit_t


@njit(nogil=True, cache=True)
def raster_mesh(cam_pts, sx, sy, tris, normals, centroids,
                color_r, color_g, color_b, eye,
                out, depth):
    """Z-buffered triangle fill over the volume image.

    cam_pts holds camera-space vertex coordinates (x right, y up, z forward);
    sx/sy are precomputed screen positions of each vertex. Shading is flat
    per-face headlight with an ambient floor. Depth is the eye distance, the
    same metric the ray caster writes, so meshes occlude correctly.
    """
    height, width = depth.shape
    near = 1e-6
    for f in range(tris.shape[0]):
        a = tris[f, 0]
        b = tris[f, 1]
        c = tris[f, 2]
        if cam_pts[a, 2] <= near or cam_pts[b, 2] <= near or cam_pts[c, 2] <= near:
            continue
        ax = sx[a]
        ay = sy[a]
        bx = sx[b]
        by = sy[b]
        cx = sx[c]
        cy = sy[c]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area < 1e-12 and area > -1e-12:
            continue
        inv_area = 1.0 / area

        vx = eye[0] - centroids[f, 0]
        vy = eye[1] - centroids[f, 1]
        vz = eye[2] - centroids[f, 2]
        vn = np.sqrt(vx * vx + vy * vy + vz * vz)
        ell = 1.0
        if vn > 1e-12:
            nd = (normals[f, 0] * vx + normals[f, 1] * vy + normals[f, 2] * vz) / vn
            if nd < 0.0:
                nd = -nd
            ell = 0.3 + 0.7 * nd

        lo_x = int(min(ax, min(bx, cx)))
        hi_x = int(max(ax, max(bx, cx))) + 1
        lo_y = int(min(ay, min(by, cy)))
        hi_y = int(max(ay, max(by, cy))) + 1
        if lo_x < 0:
            lo_x = 0
        if lo_y < 0:
            lo_y = 0
        if hi_x > width - 1:
            hi_x = width - 1
        if hi_y > height - 1:
            hi_y = height - 1

        iza = 1.0 / cam_pts[a, 2]
        izb = 1.0 / cam_pts[b, 2]
        izc = 1.0 / cam_pts[c, 2]

        for j in range(lo_y, hi_y + 1):
            for i in range(lo_x, hi_x + 1):
                px = float(i)
                py = float(j)
                w0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) * inv_area
                w1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                l0 = w0 * iza
                l1 = w1 * izb
                l2 = w2 * izc
                inv_sum = 1.0 / (l0 + l1 + l2)
                qx = (l0 * cam_pts[a, 0] + l1 * cam_pts[b, 0] + l2 * cam_pts[c, 0]) * inv_sum
                qy = (l0 * cam_pts[a, 1] + l1 * cam_pts[b, 1] + l2 * cam_pts[c, 1]) * inv_sum
                qz = (l0 * cam_pts[a, 2] + l1 * cam_pts[b, 2] + l2 * cam_pts[c, 2]) * inv_sum
                dist = np.sqrt(qx * qx + qy * qy + qz * qz)
                if dist < depth[j, i]:
                    depth[j, i] = dist
                    out[j, i, 0] = color_r * ell
                    out[j, i, 1] = color_g * ell
                    out[j, i, 2] = color_b * ell
                    out[j, i, 3] = 1.0
