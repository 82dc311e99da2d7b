//! Convolution kernels over flat row-major buffers.
//!
//! `conv1d_*` lowers a dilated "same"-padded convolution to one GEMM per
//! batch item through an im2col buffer. `repeated_*` evaluates the same
//! convolution over an input that is a frame sequence upsampled by
//! repetition: taps that fall into the same frame collapse into one partial
//! kernel sum, so the cost scales with the number of frames a kernel spans
//! rather than with the kernel length.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub time: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }
}

/// `c = a·b + beta·c` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            for col in 0..n {
                c[r * rsc + col * csc] *= beta;
            }
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa, "gemm: lhs out of bounds");
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb, "gemm: rhs out of bounds");
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc, "gemm: out out of bounds");
    // SAFETY: the three asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Range of output positions `t` for which `t + offset` lies in `[0, time)`.
fn valid_range(time: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (time as isize - offset).clamp(0, time as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let t_len = g.time;
    let pad = g.pad() as isize;
    for i in 0..g.c_in {
        let src = &x[i * t_len..(i + 1) * t_len];
        for k in 0..g.kernel {
            let row = &mut col[(i * g.kernel + k) * t_len..(i * g.kernel + k + 1) * t_len];
            let off = (k * g.dilation) as isize - pad;
            let (lo, hi) = valid_range(t_len, off);
            row[..lo].fill(0.0);
            row[hi..].fill(0.0);
            if lo == hi {
                continue;
            }
            let s0 = (lo as isize + off) as usize;
            row[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
        }
    }
}

fn col2im(dcol: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let t_len = g.time;
    let pad = g.pad() as isize;
    for i in 0..g.c_in {
        let dst = &mut dx[i * t_len..(i + 1) * t_len];
        for k in 0..g.kernel {
            let row = &dcol[(i * g.kernel + k) * t_len..(i * g.kernel + k + 1) * t_len];
            let off = (k * g.dilation) as isize - pad;
            let (lo, hi) = valid_range(t_len, off);
            if lo == hi {
                continue;
            }
            let s0 = (lo as isize + off) as usize;
            for (d, r) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&row[lo..hi]) {
                *d += r;
            }
        }
    }
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let t_len = g.time;
    let ck = g.c_in * g.kernel;
    let mut out = vec![0.0; g.batch * g.c_out * t_len];
    let direct = g.kernel == 1;
    let mut col = if direct { Vec::new() } else { vec![0.0; ck * t_len] };
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * t_len..(b + 1) * g.c_in * t_len];
        let ob = &mut out[b * g.c_out * t_len..(b + 1) * g.c_out * t_len];
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                ob[o * t_len..(o + 1) * t_len].fill(bv);
            }
        }
        let rhs: &[f64] = if direct {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        gemm(g.c_out, ck, t_len, w, (ck, 1), rhs, (t_len, 1), 1.0, ob, (t_len, 1));
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    want: (bool, bool, bool),
) -> ConvGrads {
    let (want_x, want_w, want_b) = want;
    let t_len = g.time;
    let ck = g.c_in * g.kernel;
    let direct = g.kernel == 1;
    let mut dx = want_x.then(|| vec![0.0; x.len()]);
    let mut dw = want_w.then(|| vec![0.0; w.len()]);
    let mut db = want_b.then(|| vec![0.0; g.c_out]);
    let mut col = if direct || !want_w { Vec::new() } else { vec![0.0; ck * t_len] };
    let mut dcol = if direct || !want_x { Vec::new() } else { vec![0.0; ck * t_len] };
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * t_len..(b + 1) * g.c_in * t_len];
        let gb = &grad_out[b * g.c_out * t_len..(b + 1) * g.c_out * t_len];
        if let Some(db) = db.as_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += gb[o * t_len..(o + 1) * t_len].iter().sum::<f64>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let rhs: &[f64] = if direct {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            // dW[o, ik] += Σ_t g[o, t] · col[ik, t]
            gemm(g.c_out, t_len, ck, gb, (t_len, 1), rhs, (1, t_len), 1.0, dw, (ck, 1));
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * g.c_in * t_len..(b + 1) * g.c_in * t_len];
            if direct {
                gemm(g.c_in, g.c_out, t_len, w, (1, ck), gb, (t_len, 1), 1.0, dxb, (t_len, 1));
            } else {
                gemm(ck, g.c_out, t_len, w, (1, ck), gb, (t_len, 1), 0.0, &mut dcol, (t_len, 1));
                col2im(&dcol, g, dxb);
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct RepeatGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub frames: usize,
    pub hop: usize,
}

impl RepeatGeom {
    pub fn time(&self) -> usize {
        self.frames * self.hop
    }
}

/// Taps `[k_lo, k_hi)` of output phase `phase` all read frame `j + shift`
/// for output position `j·hop + phase`.
#[derive(Clone, Copy, Debug)]
struct Segment {
    phase: usize,
    shift: isize,
    k_lo: usize,
    k_hi: usize,
}

fn segments(g: &RepeatGeom) -> Vec<Segment> {
    let pad = ((g.kernel - 1) / 2) as isize;
    let hop = g.hop as isize;
    let mut segs = Vec::new();
    for phase in 0..g.hop {
        let mut k_lo = 0;
        while k_lo < g.kernel {
            let shift = (phase as isize + k_lo as isize - pad).div_euclid(hop);
            let mut k_hi = k_lo + 1;
            while k_hi < g.kernel && (phase as isize + k_hi as isize - pad).div_euclid(hop) == shift {
                k_hi += 1;
            }
            segs.push(Segment {
                phase,
                shift,
                k_lo,
                k_hi,
            });
            k_lo = k_hi;
        }
    }
    segs
}

/// Output frame indices `j` whose source frame `j + shift` exists.
fn frame_range(frames: usize, shift: isize) -> (usize, usize) {
    valid_range(frames, shift)
}

/// Partial kernel sums `Σ_{k∈[k_lo,k_hi)} w[o, i, k]` as a `[c_out, c_in]` block.
fn collapse(w: &[f64], g: &RepeatGeom, seg: &Segment) -> Vec<f64> {
    let mut block = vec![0.0; g.c_out * g.c_in];
    for o in 0..g.c_out {
        for i in 0..g.c_in {
            let base = (o * g.c_in + i) * g.kernel;
            block[o * g.c_in + i] = w[base + seg.k_lo..base + seg.k_hi].iter().sum();
        }
    }
    block
}

pub(crate) fn repeated_forward(f: &[f64], w: &[f64], bias: Option<&[f64]>, g: &RepeatGeom) -> Vec<f64> {
    let t_len = g.time();
    let mut out = vec![0.0; g.batch * g.c_out * t_len];
    if let Some(bias) = bias {
        for b in 0..g.batch {
            for (o, &bv) in bias.iter().enumerate() {
                let start = (b * g.c_out + o) * t_len;
                out[start..start + t_len].fill(bv);
            }
        }
    }
    for seg in segments(g) {
        let block = collapse(w, g, &seg);
        let (j0, j1) = frame_range(g.frames, seg.shift);
        if j0 >= j1 {
            continue;
        }
        let src0 = (j0 as isize + seg.shift) as usize;
        for b in 0..g.batch {
            let fb = &f[b * g.c_in * g.frames..(b + 1) * g.c_in * g.frames];
            let ob = &mut out[b * g.c_out * t_len..(b + 1) * g.c_out * t_len];
            gemm(
                g.c_out,
                g.c_in,
                j1 - j0,
                &block,
                (g.c_in, 1),
                &fb[src0..],
                (g.frames, 1),
                1.0,
                &mut ob[j0 * g.hop + seg.phase..],
                (t_len, g.hop),
            );
        }
    }
    out
}

pub(crate) fn repeated_backward(
    f: &[f64],
    w: &[f64],
    grad_out: &[f64],
    g: &RepeatGeom,
    want: (bool, bool, bool),
) -> ConvGrads {
    let (want_f, want_w, want_b) = want;
    let t_len = g.time();
    let mut df = want_f.then(|| vec![0.0; f.len()]);
    let mut dw = want_w.then(|| vec![0.0; w.len()]);
    let db = want_b.then(|| {
        let mut db = vec![0.0; g.c_out];
        for b in 0..g.batch {
            for (o, acc) in db.iter_mut().enumerate() {
                let start = (b * g.c_out + o) * t_len;
                *acc += grad_out[start..start + t_len].iter().sum::<f64>();
            }
        }
        db
    });
    if want_f || want_w {
        let mut dblock = vec![0.0; g.c_out * g.c_in];
        for seg in segments(g) {
            let (j0, j1) = frame_range(g.frames, seg.shift);
            if j0 >= j1 {
                continue;
            }
            let nj = j1 - j0;
            let src0 = (j0 as isize + seg.shift) as usize;
            let out0 = j0 * g.hop + seg.phase;
            let block = want_f.then(|| collapse(w, g, &seg));
            dblock.fill(0.0);
            for b in 0..g.batch {
                let fb = &f[b * g.c_in * g.frames..(b + 1) * g.c_in * g.frames];
                let gb = &grad_out[b * g.c_out * t_len..(b + 1) * g.c_out * t_len];
                if want_w {
                    gemm(
                        g.c_out,
                        nj,
                        g.c_in,
                        &gb[out0..],
                        (t_len, g.hop),
                        &fb[src0..],
                        (1, g.frames),
                        1.0,
                        &mut dblock,
                        (g.c_in, 1),
                    );
                }
                if let (Some(df), Some(block)) = (df.as_mut(), block.as_ref()) {
                    let dfb = &mut df[b * g.c_in * g.frames..(b + 1) * g.c_in * g.frames];
                    gemm(
                        g.c_in,
                        g.c_out,
                        nj,
                        block,
                        (1, g.c_in),
                        &gb[out0..],
                        (t_len, g.hop),
                        1.0,
                        &mut dfb[src0..],
                        (g.frames, 1),
                    );
                }
            }
            if let Some(dw) = dw.as_mut() {
                for o in 0..g.c_out {
                    for i in 0..g.c_in {
                        let v = dblock[o * g.c_in + i];
                        let base = (o * g.c_in + i) * g.kernel;
                        for slot in &mut dw[base + seg.k_lo..base + seg.k_hi] {
                            *slot += v;
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: df,
        weight: dw,
        bias: db,
    }
}
