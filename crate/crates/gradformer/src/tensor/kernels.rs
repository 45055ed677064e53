//! Raw numeric kernels on flat slices.
//!
//! Every kernel fixes its accumulation order per output element (documented
//! inline), which is what makes results bit-reproducible run to run and lets
//! naive reference loops reproduce them exactly. Nothing here records to the
//! tape; these are the bodies the tape's forward and backward rules call.

use super::Scalar;

// ── Reduction ───────────────────────────────────────────────────────────────

/// Balanced-tree sum of a slice. Besides better rounding behavior than a
/// running accumulator, the halving split gives an exact result whenever the
/// slice holds a power-of-two count of equal values — which is what lets a
/// mean over uniform per-pixel losses reproduce constants like ln 2 bitwise.
pub fn pairwise_sum<T: Scalar>(v: &[T]) -> T {
    match v.len() {
        0 => T::zero(),
        1 => v[0],
        2 => v[0] + v[1],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

// ── Matrix multiplication ───────────────────────────────────────────────────

/// `out[m,n] += a[m,k] · b[k,n]`. Row-major. Accumulates each output element
/// in ascending-k order, so pre-filling `out` (e.g. with a bias) contributes
/// first. The j-inner loop is contiguous and autovectorizes.
pub fn matmul_accum<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m,k] += a[m,n] · b[k,n]ᵀ` (dot-product form; both operands walk rows).
pub fn matmul_nt_accum<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            *o = *o + acc;
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · c[m,n]`. Each output row accumulates in ascending-m
/// order (i outer), keeping the order fixed for every output element.
pub fn matmul_tn_accum<T: Scalar>(a: &[T], c: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(c.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let crow = &c[i * n..(i + 1) * n];
        for j in 0..k {
            let av = a[i * k + j];
            let orow = &mut out[j * n..(j + 1) * n];
            for (o, &cv) in orow.iter_mut().zip(crow) {
                *o = *o + av * cv;
            }
        }
    }
}

// ── Convolution ─────────────────────────────────────────────────────────────

/// Output spatial extent of a padded strided correlation.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Gather input patches for a run of output positions into a column matrix.
///
/// `cols` is `[cin·kh·kw, count]`; row index r = (ic·kh_total + ky)·kw_total + kx.
/// Out-of-bounds (padding) positions contribute zero. `x` is one image `[cin,h,w]`.
#[allow(clippy::too_many_arguments)]
fn im2col_chunk<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ow: usize,
    pos_start: usize,
    count: usize,
    cols: &mut [T],
) {
    debug_assert_eq!(cols.len(), cin * kh * kw * count);
    for ic in 0..cin {
        let xc = &x[ic * h * w..(ic + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (ic * kh + ky) * kw + kx;
                let row = &mut cols[r * count..(r + 1) * count];
                if stride == 1 {
                    // A run of positions sharing one output row reads one input
                    // row shifted by (kx − padding): bulk-copy the in-bounds
                    // span and zero-fill the padded edges.
                    let mut oy = pos_start / ow;
                    let mut ox = pos_start % ow;
                    let mut p = 0;
                    while p < count {
                        let run = (ow - ox).min(count - p);
                        let seg = &mut row[p..p + run];
                        let iy = (oy + ky) as isize - padding as isize;
                        if iy < 0 || iy as usize >= h {
                            seg.fill(T::zero());
                        } else {
                            let xrow = &xc[iy as usize * w..iy as usize * w + w];
                            let ix0 = (ox + kx) as isize - padding as isize;
                            let lo = (-ix0).clamp(0, run as isize) as usize;
                            let hi = (w as isize - ix0).clamp(0, run as isize) as usize;
                            seg[..lo].fill(T::zero());
                            if hi > lo {
                                let s = (ix0 + lo as isize) as usize;
                                seg[lo..hi].copy_from_slice(&xrow[s..s + (hi - lo)]);
                            }
                            seg[hi.max(lo)..].fill(T::zero());
                        }
                        p += run;
                        ox = 0;
                        oy += 1;
                    }
                } else {
                    let mut oy = pos_start / ow;
                    let mut ox = pos_start % ow;
                    for slot in row.iter_mut() {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        *slot = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            xc[iy as usize * w + ix as usize]
                        } else {
                            T::zero()
                        };
                        ox += 1;
                        if ox == ow {
                            ox = 0;
                            oy += 1;
                        }
                    }
                }
            }
        }
    }
}

/// Gather the same patches as [`im2col_chunk`] but position-major: `cols` is
/// `[count, cin·kh·kw]`, one contiguous patch row per output position. This is
/// the layout that lets weight/input gradients run as axpy-style matmuls.
#[allow(clippy::too_many_arguments)]
fn im2col_chunk_rows<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ow: usize,
    pos_start: usize,
    count: usize,
    cols: &mut [T],
) {
    let krows = cin * kh * kw;
    debug_assert_eq!(cols.len(), count * krows);
    let mut oy = pos_start / ow;
    let mut ox = pos_start % ow;
    for p in 0..count {
        let row = &mut cols[p * krows..(p + 1) * krows];
        let iy0 = (oy * stride) as isize - padding as isize;
        let ix0 = (ox * stride) as isize - padding as isize;
        if iy0 >= 0 && iy0 as usize + kh <= h && ix0 >= 0 && ix0 as usize + kw <= w {
            // Fully interior patch: each kernel row is one contiguous run.
            // (An explicit element loop, not copy_from_slice: runs are a few
            // elements, far below where a memcpy call pays off.)
            let base = iy0 as usize * w + ix0 as usize;
            let mut r = 0;
            for ic in 0..cin {
                let xc = &x[ic * h * w + base..];
                for ky in 0..kh {
                    for (slot, &v) in row[r..r + kw].iter_mut().zip(&xc[ky * w..ky * w + kw]) {
                        *slot = v;
                    }
                    r += kw;
                }
            }
        } else {
            let mut r = 0;
            for ic in 0..cin {
                let xc = &x[ic * h * w..(ic + 1) * h * w];
                for ky in 0..kh {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy as usize >= h {
                        for slot in &mut row[r..r + kw] {
                            *slot = T::zero();
                        }
                        r += kw;
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for kx in 0..kw {
                        let ix = ix0 + kx as isize;
                        row[r] = if ix >= 0 && (ix as usize) < w { xrow[ix as usize] } else { T::zero() };
                        r += 1;
                    }
                }
            }
        }
        ox += 1;
        if ox == ow {
            ox = 0;
            oy += 1;
        }
    }
}

/// Scatter-add a position-major column gradient back onto an input image,
/// inverse of [`im2col_chunk_rows`]. Positions scatter in ascending
/// (position, in-channel, kernel-row, kernel-col) order.
#[allow(clippy::too_many_arguments)]
fn col2im_chunk_rows<T: Scalar>(
    cols: &[T],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ow: usize,
    pos_start: usize,
    count: usize,
    dx: &mut [T],
) {
    let krows = cin * kh * kw;
    let mut oy = pos_start / ow;
    let mut ox = pos_start % ow;
    for p in 0..count {
        let row = &cols[p * krows..(p + 1) * krows];
        let iy0 = (oy * stride) as isize - padding as isize;
        let ix0 = (ox * stride) as isize - padding as isize;
        let mut r = 0;
        for ic in 0..cin {
            let xc = &mut dx[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy as usize >= h {
                    r += kw;
                    continue;
                }
                let xrow = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                for kx in 0..kw {
                    let ix = ix0 + kx as isize;
                    if ix >= 0 && (ix as usize) < w {
                        xrow[ix as usize] = xrow[ix as usize] + row[r];
                    }
                    r += 1;
                }
            }
        }
        ox += 1;
        if ox == ow {
            ox = 0;
            oy += 1;
        }
    }
}

/// Output positions per im2col chunk. Small enough that one column block
/// (krows × chunk) stays cache-resident while every output channel sweeps it,
/// which matters more than amortizing the loop overhead. Chunking never
/// changes results: each output element lives in exactly one chunk, and the
/// gradient products accumulate element terms in the same order regardless of
/// where chunk boundaries fall.
const CONV_CHUNK: usize = 256;

/// Padded strided cross-correlation (what deep-learning frameworks call
/// convolution). `x` is `[b, cin, h, w]`; `weight` is `[cout, cin/groups, kh, kw]`;
/// output is `[b, cout, oh, ow]`.
///
/// Per output element the accumulator starts at the bias and adds terms in
/// ascending (in-channel, kernel-row, kernel-col) order — the contract a
/// reference loop must follow to match bit-for-bit.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Vec<T> {
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    let cin_g = cin / groups;
    let cout_g = cout / groups;
    let krows = cin_g * kh * kw;
    let mut out = vec![T::zero(); b * cout * oh * ow];
    let positions = oh * ow;
    let mut cols = vec![T::zero(); krows * CONV_CHUNK.min(positions.max(1))];

    for bi in 0..b {
        for g in 0..groups {
            let xg = &x[(bi * cin + g * cin_g) * h * w..(bi * cin + (g + 1) * cin_g) * h * w];
            let wg = &weight[g * cout_g * krows..(g + 1) * cout_g * krows];
            let mut pos = 0;
            while pos < positions {
                let count = CONV_CHUNK.min(positions - pos);
                let cols_slice = &mut cols[..krows * count];
                im2col_chunk(xg, cin_g, h, w, kh, kw, stride, padding, ow, pos, count, cols_slice);
                // Seed each output row with its bias so the bias is the first
                // addend, then accumulate the patch dot products.
                for ocl in 0..cout_g {
                    let oc = g * cout_g + ocl;
                    let bias_v = bias.map_or(T::zero(), |bb| bb[oc]);
                    let orow =
                        &mut out[(bi * cout + oc) * positions + pos..(bi * cout + oc) * positions + pos + count];
                    for o in orow.iter_mut() {
                        *o = bias_v;
                    }
                }
                let out_base = (bi * cout + g * cout_g) * positions;
                // matmul wants contiguous output rows; output positions for one
                // channel are contiguous, so multiply row-by-row.
                for ocl in 0..cout_g {
                    let oc_off = out_base + ocl * positions + pos;
                    matmul_accum(
                        &wg[ocl * krows..(ocl + 1) * krows],
                        cols_slice,
                        1,
                        krows,
                        count,
                        &mut out[oc_off..oc_off + count],
                    );
                }
                pos += count;
            }
        }
    }
    out
}

/// Gradients of `conv2d_forward` with respect to input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let oh = conv_out_dim(h, kh, stride, padding);
    let ow = conv_out_dim(w, kw, stride, padding);
    let positions = oh * ow;
    let cin_g = cin / groups;
    let cout_g = cout / groups;
    let krows = cin_g * kh * kw;

    // For stride-1 square kernels the input gradient is itself a correlation:
    // dx = conv(dout, ŵ) with ŵ[ic, oc] the spatially flipped weight. That
    // reuses the fast forward path and avoids scattering altogether; other
    // geometries fall back to scatter-adding patch gradients.
    let dx_as_conv = need_dx && stride == 1 && kh == kw && padding < kh;
    let dx_scatter = need_dx && !dx_as_conv;

    let mut dx = if dx_scatter { Some(vec![T::zero(); b * cin * h * w]) } else { None };
    let mut dw = if need_dw { Some(vec![T::zero(); cout * krows]) } else { None };
    let mut db = if need_db { Some(vec![T::zero(); cout]) } else { None };

    if let Some(db) = db.as_mut() {
        for bi in 0..b {
            for oc in 0..cout {
                let orow = &dout[(bi * cout + oc) * positions..(bi * cout + oc + 1) * positions];
                let mut acc = T::zero();
                for &v in orow {
                    acc = acc + v;
                }
                db[oc] = db[oc] + acc;
            }
        }
    }

    if dx_as_conv {
        let mut wflip = vec![T::zero(); cin * cout_g * kh * kw];
        for g in 0..groups {
            for ocl in 0..cout_g {
                let oc = g * cout_g + ocl;
                for icl in 0..cin_g {
                    let ic = g * cin_g + icl;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            wflip[((ic * cout_g + ocl) * kh + (kh - 1 - ky)) * kw + (kw - 1 - kx)] =
                                weight[(oc * cin_g + icl) * kh * kw + ky * kw + kx];
                        }
                    }
                }
            }
        }
        dx = Some(conv2d_forward(
            dout,
            &wflip,
            None,
            b,
            cout,
            oh,
            ow,
            cin,
            kh,
            kw,
            1,
            kh - 1 - padding,
            groups,
        ));
    }

    if dx_scatter || need_dw {
        // Position-major columns ([count, krows]) make both gradient products
        // run with contiguous inner loops: dw accumulates patch rows scaled by
        // dout, and the patch gradient is an outer product of dout with the
        // weight row.
        let chunk = CONV_CHUNK.min(positions.max(1));
        let mut cols = vec![T::zero(); krows * chunk];
        let mut colgrad = if dx_scatter { vec![T::zero(); krows * chunk] } else { Vec::new() };
        for bi in 0..b {
            for g in 0..groups {
                let xg = &x[(bi * cin + g * cin_g) * h * w..(bi * cin + (g + 1) * cin_g) * h * w];
                let wg = &weight[g * cout_g * krows..(g + 1) * cout_g * krows];
                let mut pos = 0;
                while pos < positions {
                    let count = CONV_CHUNK.min(positions - pos);
                    if need_dw {
                        let cols_slice = &mut cols[..count * krows];
                        im2col_chunk_rows(
                            xg, cin_g, h, w, kh, kw, stride, padding, ow, pos, count, cols_slice,
                        );
                        let dwg = &mut dw.as_mut().unwrap()[g * cout_g * krows..(g + 1) * cout_g * krows];
                        for ocl in 0..cout_g {
                            let oc = g * cout_g + ocl;
                            let dorow = &dout[(bi * cout + oc) * positions + pos
                                ..(bi * cout + oc) * positions + pos + count];
                            // dw[oc, :] += Σ_p dout[oc, p] · cols[p, :]
                            matmul_accum(
                                dorow,
                                cols_slice,
                                1,
                                count,
                                krows,
                                &mut dwg[ocl * krows..(ocl + 1) * krows],
                            );
                        }
                    }
                    if dx_scatter {
                        let colgrad_slice = &mut colgrad[..count * krows];
                        for v in colgrad_slice.iter_mut() {
                            *v = T::zero();
                        }
                        for ocl in 0..cout_g {
                            let oc = g * cout_g + ocl;
                            let dorow = &dout[(bi * cout + oc) * positions + pos
                                ..(bi * cout + oc) * positions + pos + count];
                            // colgrad[p, :] += dout[oc, p] · w[oc, :]
                            matmul_accum(
                                dorow,
                                &wg[ocl * krows..(ocl + 1) * krows],
                                count,
                                1,
                                krows,
                                colgrad_slice,
                            );
                        }
                        let dxg = &mut dx.as_mut().unwrap()
                            [(bi * cin + g * cin_g) * h * w..(bi * cin + (g + 1) * cin_g) * h * w];
                        col2im_chunk_rows(
                            colgrad_slice,
                            cin_g,
                            h,
                            w,
                            kh,
                            kw,
                            stride,
                            padding,
                            ow,
                            pos,
                            count,
                            dxg,
                        );
                    }
                    pos += count;
                }
            }
        }
    }
    (dx, dw, db)
}

/// Fractionally strided convolution as an explicit scatter-accumulate:
/// every input pixel adds its weighted kernel stamp into the output.
/// `x` is `[b, cin, h, w]`; `weight` is `[cin, cout, kh, kw]`; output spatial
/// size is `(h-1)·stride + kh` by `(w-1)·stride + kw` (no output padding).
///
/// Accumulation per output element: bias first, then ascending
/// (in-channel, input-row, input-col) scatter order.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<T> {
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;
    let mut out = vec![T::zero(); b * cout * oh * ow];
    if let Some(bias) = bias {
        for bi in 0..b {
            for oc in 0..cout {
                let orow = &mut out[(bi * cout + oc) * oh * ow..(bi * cout + oc + 1) * oh * ow];
                for o in orow.iter_mut() {
                    *o = bias[oc];
                }
            }
        }
    }
    for bi in 0..b {
        for ic in 0..cin {
            let xc = &x[(bi * cin + ic) * h * w..(bi * cin + ic + 1) * h * w];
            let wc = &weight[ic * cout * kh * kw..(ic + 1) * cout * kh * kw];
            for iy in 0..h {
                for ix in 0..w {
                    let xv = xc[iy * w + ix];
                    for oc in 0..cout {
                        let stamp = &wc[oc * kh * kw..(oc + 1) * kh * kw];
                        let obase = (bi * cout + oc) * oh * ow;
                        for ky in 0..kh {
                            let orow = obase + (iy * stride + ky) * ow + ix * stride;
                            for kx in 0..kw {
                                out[orow + kx] = out[orow + kx] + xv * stamp[ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of `conv_transpose2d_forward`.
///
/// The input gradient is a stride-`stride` correlation of `dout` with the
/// weight (each input pixel reads back the kernel window it stamped), and the
/// weight gradient pairs each input pixel with its `dout` window — so both run
/// through the im2col machinery on `dout`, with input positions as the
/// "output" grid. Per element, terms accumulate in ascending
/// (batch, input-position) order for `dw` and ascending
/// (out-channel, kernel-row, kernel-col) order for `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dout: &[T],
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;
    let mut dx = if need_dx { Some(vec![T::zero(); b * cin * h * w]) } else { None };
    let mut dw = if need_dw { Some(vec![T::zero(); cin * cout * kh * kw]) } else { None };
    let mut db = if need_db { Some(vec![T::zero(); cout]) } else { None };

    if let Some(db) = db.as_mut() {
        for bi in 0..b {
            for oc in 0..cout {
                let orow = &dout[(bi * cout + oc) * oh * ow..(bi * cout + oc + 1) * oh * ow];
                let mut acc = T::zero();
                for &v in orow {
                    acc = acc + v;
                }
                db[oc] = db[oc] + acc;
            }
        }
    }

    if need_dx || need_dw {
        // One column row per input position; r = (oc·kh + ky)·kw + kx matches
        // the [cout, kh, kw] block layout inside each weight in-channel.
        let positions = h * w;
        let krows = cout * kh * kw;
        let chunk = CONV_CHUNK.min(positions.max(1));
        let mut cols = vec![T::zero(); krows * chunk];
        let mut colst = vec![T::zero(); krows * chunk];
        for bi in 0..b {
            let doutb = &dout[bi * cout * oh * ow..(bi + 1) * cout * oh * ow];
            let mut pos = 0;
            while pos < positions {
                let count = CONV_CHUNK.min(positions - pos);
                if need_dx {
                    let cols_slice = &mut cols[..krows * count];
                    im2col_chunk(doutb, cout, oh, ow, kh, kw, stride, 0, w, pos, count, cols_slice);
                    let dx = dx.as_mut().unwrap();
                    for ic in 0..cin {
                        let run = (bi * cin + ic) * positions + pos;
                        // dx[ic, p] = Σ_r w[ic, r] · window[r, p]
                        matmul_accum(
                            &weight[ic * krows..(ic + 1) * krows],
                            cols_slice,
                            1,
                            krows,
                            count,
                            &mut dx[run..run + count],
                        );
                    }
                }
                if need_dw {
                    let colst_slice = &mut colst[..count * krows];
                    im2col_chunk_rows(doutb, cout, oh, ow, kh, kw, stride, 0, w, pos, count, colst_slice);
                    let dw = dw.as_mut().unwrap();
                    for ic in 0..cin {
                        let run = (bi * cin + ic) * positions + pos;
                        // dw[ic, :] += Σ_p x[ic, p] · window[p, :]
                        matmul_accum(
                            &x[run..run + count],
                            colst_slice,
                            1,
                            count,
                            krows,
                            &mut dw[ic * krows..(ic + 1) * krows],
                        );
                    }
                }
                pos += count;
            }
        }
    }
    (dx, dw, db)
}

// ── Softmax ─────────────────────────────────────────────────────────────────

/// Numerically stable softmax along `axis`: shift by the lane max, exponentiate,
/// normalize. Lane layout is (outer, axis, inner) with `inner` the product of
/// trailing extents.
pub fn softmax_forward<T: Scalar>(x: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut m = x[base];
            for j in 1..len {
                let v = x[base + j * inner];
                if v > m {
                    m = v;
                }
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - m).exp();
                out[base + j * inner] = e;
                sum = sum + e;
            }
            for j in 0..len {
                out[base + j * inner] = out[base + j * inner] / sum;
            }
        }
    }
    out
}

/// Softmax gradient from its output: dx = y ⊙ (dy − Σ_axis(dy ⊙ y)).
pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], shape: &[usize], axis: usize) -> Vec<T> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = T::zero();
            for j in 0..len {
                let idx = base + j * inner;
                dot = dot + dy[idx] * y[idx];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] = y[idx] * (dy[idx] - dot);
            }
        }
    }
    dx
}

// ── GELU ────────────────────────────────────────────────────────────────────

/// √(2/π) evaluated once in f64 so both precisions share the same constant.
pub const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const GELU_CUBIC: f64 = 0.044_715;

/// Tanh-approximation GELU: 0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³))).
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64(SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

/// Analytic derivative of the tanh-approximation GELU.
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64(SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

// ── Nearest-neighbour upsampling ────────────────────────────────────────────

/// Repeat each spatial element of `[b, c, h, w]` into an f×f block.
pub fn upsample_nearest_forward<T: Scalar>(x: &[T], b: usize, c: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![T::zero(); b * c * oh * ow];
    for bc in 0..b * c {
        let src = &x[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
        for oy in 0..oh {
            let sy = oy / f;
            let srow = &src[sy * w..(sy + 1) * w];
            let drow = &mut dst[oy * ow..(oy + 1) * ow];
            for (ox, d) in drow.iter_mut().enumerate() {
                *d = srow[ox / f];
            }
        }
    }
    out
}

/// Gradient of nearest upsampling: each source cell sums its f×f block, rows
/// scanned top-to-bottom then left-to-right.
pub fn upsample_nearest_backward<T: Scalar>(dy: &[T], b: usize, c: usize, h: usize, w: usize, f: usize) -> Vec<T> {
    let (oh, ow) = (h * f, w * f);
    let mut dx = vec![T::zero(); b * c * h * w];
    for bc in 0..b * c {
        let src = &dy[bc * oh * ow..(bc + 1) * oh * ow];
        let dst = &mut dx[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            let sy = oy / f;
            let srow = &src[oy * ow..(oy + 1) * ow];
            let drow = &mut dst[sy * w..(sy + 1) * w];
            for (ox, &v) in srow.iter().enumerate() {
                let sx = ox / f;
                drow[sx] = drow[sx] + v;
            }
        }
    }
    dx
}
