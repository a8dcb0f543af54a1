//! Blocked, transposed im2col over a stack of maps.
//!
//! The patch matrix has one row per (channel, u, v) tap and one column per
//! output position, so a layer's pre-activation is `W (K x C) * patches (C x P)`.
//! Only a band of output rows is materialized at a time to bound memory.

use super::Padding;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub m: usize,
    pub n: usize,
    pub ho: usize,
    pub wo: usize,
    pub pt: usize,
    pub pl: usize,
}

/// Upper bound on elements in one patch band.
const BAND_ELEMS: usize = 1 << 20;

impl Geometry {
    pub fn new(channels: usize, (h, w): (usize, usize), (m, n): (usize, usize), padding: Padding) -> Option<Self> {
        let ho = padding.output_extent(h, m)?;
        let wo = padding.output_extent(w, n)?;
        Some(Geometry {
            channels,
            h,
            w,
            m,
            n,
            ho,
            wo,
            pt: padding.pads(m).0,
            pl: padding.pads(n).0,
        })
    }

    pub fn taps(&self) -> usize {
        self.channels * self.m * self.n
    }

    pub fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Output rows per band.
    pub fn band_rows(&self) -> usize {
        (BAND_ELEMS / (self.taps() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// Valid output column range for tap column `v`, and the source x of its first element.
    #[inline]
    fn col_span(&self, v: usize) -> (usize, usize) {
        let lo = self.pl.saturating_sub(v);
        let hi = (self.w + self.pl).saturating_sub(v).min(self.wo);
        (lo, hi.max(lo))
    }

    /// Fills `cols` (taps x ((r1 - r0) * wo)) for output rows `r0..r1`.
    pub fn gather(&self, src: &[f64], r0: usize, r1: usize, cols: &mut [f64]) {
        let width = (r1 - r0) * self.wo;
        let plane = self.h * self.w;
        for ch in 0..self.channels {
            let map = &src[ch * plane..(ch + 1) * plane];
            for u in 0..self.m {
                for v in 0..self.n {
                    let row = ((ch * self.m + u) * self.n + v) * width;
                    let dst = &mut cols[row..row + width];
                    let (lo, hi) = self.col_span(v);
                    for i in r0..r1 {
                        let out = &mut dst[(i - r0) * self.wo..(i - r0 + 1) * self.wo];
                        let y = (i + u).checked_sub(self.pt).filter(|&y| y < self.h);
                        match y {
                            Some(y) if hi > lo => {
                                out[..lo].fill(0.0);
                                let x0 = lo + v - self.pl;
                                out[lo..hi].copy_from_slice(&map[y * self.w + x0..y * self.w + x0 + hi - lo]);
                                out[hi..].fill(0.0);
                            }
                            _ => out.fill(0.0),
                        }
                    }
                }
            }
        }
    }

    /// Transpose of [`gather`](Self::gather): scatter-adds `cols` back onto `dst`.
    pub fn scatter_add(&self, cols: &[f64], r0: usize, r1: usize, dst: &mut [f64]) {
        let width = (r1 - r0) * self.wo;
        let plane = self.h * self.w;
        for ch in 0..self.channels {
            let map = &mut dst[ch * plane..(ch + 1) * plane];
            for u in 0..self.m {
                for v in 0..self.n {
                    let row = ((ch * self.m + u) * self.n + v) * width;
                    let srow = &cols[row..row + width];
                    let (lo, hi) = self.col_span(v);
                    if hi <= lo {
                        continue;
                    }
                    for i in r0..r1 {
                        let Some(y) = (i + u).checked_sub(self.pt).filter(|&y| y < self.h) else {
                            continue;
                        };
                        let x0 = lo + v - self.pl;
                        let d = &mut map[y * self.w + x0..y * self.w + x0 + hi - lo];
                        let s = &srow[(i - r0) * self.wo + lo..(i - r0) * self.wo + hi];
                        d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
                    }
                }
            }
        }
    }
}

/// `C = alpha * A * B + beta * C` over strided row/column views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
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
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len());
        assert!(last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: every index the kernel touches lies inside the slices (checked above)
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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
