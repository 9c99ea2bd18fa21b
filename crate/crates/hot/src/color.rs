//! Color transfer between RGB images over the CIE-Lab domain: exact 1D
//! monotone rearrangement on luminance, a 2D transport solve on binned
//! chrominance.
//!
//! The chrominance histograms are binned on a shared padded (a, b) range;
//! the reduced LP is solved with the Halpern iteration, the sparse plan is
//! recovered, and each occupied source bin moves to the barycenter of its
//! plan row. Pixels are displaced by their bin's displacement, which keeps
//! intra-bin detail.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::grid::{GridDims, Histogram2D, ReducedLP};
use crate::plan::{self, SparsePlan};
use crate::solver::{self, SolverConfig};

/// CIE-Lab image with D65 white point, sRGB companding.
#[derive(Debug, Clone)]
pub struct LabImage {
    pub width: u32,
    pub height: u32,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

// sRGB D65 primaries and white point.
const D65: [f64; 3] = [0.95047, 1.0, 1.08883];
const EPS: f64 = 216.0 / 24389.0; // (6/29)^3
const KAPPA: f64 = 24389.0 / 27.0;

#[inline]
fn srgb_to_linear(u: u8) -> f64 {
    let c = u as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn linear_to_srgb(c: f64) -> u8 {
    let c = c.clamp(0.0, 1.0);
    let v = if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > EPS {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(t: f64) -> f64 {
    let t3 = t * t * t;
    if t3 > EPS {
        t3
    } else {
        (116.0 * t - 16.0) / KAPPA
    }
}

/// Converts one sRGB pixel to Lab.
pub fn rgb_pixel_to_lab(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (rl, gl, bl) = (srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b));
    let x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    let y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    let z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    let fx = lab_f(x / D65[0]);
    let fy = lab_f(y / D65[1]);
    let fz = lab_f(z / D65[2]);
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// Converts one Lab triple back to sRGB, clamping out-of-gamut values.
pub fn lab_pixel_to_rgb(l: f64, a: f64, b: f64) -> (u8, u8, u8) {
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let x = lab_f_inv(fx) * D65[0];
    let y = if l > KAPPA * EPS {
        let t = (l + 16.0) / 116.0;
        t * t * t
    } else {
        l / KAPPA
    } * D65[1];
    let z = lab_f_inv(fz) * D65[2];
    let rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    let gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    let bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    (linear_to_srgb(rl), linear_to_srgb(gl), linear_to_srgb(bl))
}

/// Converts an 8-bit RGB image to Lab planes.
pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let (w, h) = img.dimensions();
    let npix = (w * h) as usize;
    let mut out = LabImage {
        width: w,
        height: h,
        l: Vec::with_capacity(npix),
        a: Vec::with_capacity(npix),
        b: Vec::with_capacity(npix),
    };
    for p in img.pixels() {
        let (l, a, b) = rgb_pixel_to_lab(p[0], p[1], p[2]);
        out.l.push(l);
        out.a.push(a);
        out.b.push(b);
    }
    out
}

/// Converts Lab planes back to an 8-bit RGB image.
pub fn lab_to_rgb(lab: &LabImage) -> RgbImage {
    let mut img = RgbImage::new(lab.width, lab.height);
    for (idx, p) in img.pixels_mut().enumerate() {
        let (r, g, b) = lab_pixel_to_rgb(lab.l[idx], lab.a[idx], lab.b[idx]);
        *p = image::Rgb([r, g, b]);
    }
    img
}

/// Monotone rearrangement: the source pixel at quantile `q` receives the
/// target's value at quantile `q`, linearly interpolated between order
/// statistics when the pixel counts differ.
pub fn luminance_transfer(src: &[f64], tgt: &[f64]) -> Result<Vec<f64>> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::DimensionMismatch(
            "luminance transfer needs nonempty pixel sets".into(),
        ));
    }
    let mut order: Vec<usize> = (0..src.len()).collect();
    order.sort_by(|&a, &b| src[a].total_cmp(&src[b]));
    let mut tgt_sorted = tgt.to_vec();
    tgt_sorted.sort_by(f64::total_cmp);

    let mut out = vec![0.0; src.len()];
    let p = src.len();
    let q = tgt_sorted.len();
    for (rank, &pix) in order.iter().enumerate() {
        let quantile = if p > 1 {
            rank as f64 / (p - 1) as f64
        } else {
            0.5
        };
        let pos = quantile * (q - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        out[pix] = tgt_sorted[lo] * (1.0 - frac) + tgt_sorted[hi] * frac;
    }
    Ok(out)
}

/// Shared chrominance binning for a pair of images.
#[derive(Debug, Clone)]
pub struct ChromaBinning {
    pub bins_a: usize,
    pub bins_b: usize,
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
}

impl ChromaBinning {
    /// Covers both images' chrominance with 1% range padding per side.
    pub fn covering(src: &LabImage, tgt: &LabImage, bins_a: usize, bins_b: usize) -> Result<Self> {
        if bins_a == 0 || bins_b == 0 {
            return Err(Error::InvalidConfig("bin counts must be positive".into()));
        }
        let all_a = src.a.iter().chain(&tgt.a);
        let all_b = src.b.iter().chain(&tgt.b);
        let (mut a_min, mut a_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in all_a {
            a_min = a_min.min(v);
            a_max = a_max.max(v);
        }
        let (mut b_min, mut b_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in all_b {
            b_min = b_min.min(v);
            b_max = b_max.max(v);
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            let range = *hi - *lo;
            let p = if range > 0.0 { 0.01 * range } else { 0.5 };
            *lo -= p;
            *hi += p;
        };
        pad(&mut a_min, &mut a_max);
        pad(&mut b_min, &mut b_max);
        Ok(Self {
            bins_a,
            bins_b,
            a_min,
            a_max,
            b_min,
            b_max,
        })
    }

    pub fn dims(&self) -> GridDims {
        GridDims::new(self.bins_a, self.bins_b).expect("bin counts validated at construction")
    }

    #[inline]
    fn width_a(&self) -> f64 {
        (self.a_max - self.a_min) / self.bins_a as f64
    }

    #[inline]
    fn width_b(&self) -> f64 {
        (self.b_max - self.b_min) / self.bins_b as f64
    }

    /// Bin of a chrominance pair: `(a bin i, b bin j)`.
    pub fn bin_of(&self, a: f64, b: f64) -> (usize, usize) {
        let i = ((a - self.a_min) / self.width_a()).floor() as isize;
        let j = ((b - self.b_min) / self.width_b()).floor() as isize;
        (
            i.clamp(0, self.bins_a as isize - 1) as usize,
            j.clamp(0, self.bins_b as isize - 1) as usize,
        )
    }

    /// Center of bin `(i, j)` in (a, b) coordinates.
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.a_min + (i as f64 + 0.5) * self.width_a(),
            self.b_min + (j as f64 + 0.5) * self.width_b(),
        )
    }

    /// Bins an image's chrominance into a histogram.
    pub fn histogram(&self, lab: &LabImage) -> Result<Histogram2D> {
        let dims = self.dims();
        let mut mass = vec![0.0; dims.num_bins()];
        for (&a, &b) in lab.a.iter().zip(&lab.b) {
            let (i, j) = self.bin_of(a, b);
            mass[dims.node(i, j)] += 1.0;
        }
        Histogram2D::from_unnormalized(dims, mass)
    }
}

/// Result of the chrominance stage: per-pixel mapped (a, b) values plus the
/// recovered plan for inspection.
pub struct ChromaTransfer {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub plan: SparsePlan,
}

/// Transports the source chroma histogram onto the target's and displaces
/// every pixel by its bin's barycentric displacement.
pub fn chroma_transfer(
    src: &LabImage,
    tgt: &LabImage,
    binning: &ChromaBinning,
    cfg: &SolverConfig,
) -> Result<ChromaTransfer> {
    let dims = binning.dims();
    let mu1 = binning.histogram(src)?;
    let mu2 = binning.histogram(tgt)?;
    let lp = ReducedLP::new(&mu1, &mu2)?;
    let (report, state) = solver::solve(&lp, cfg)?;
    let flows = crate::grid::FlowPair::from_concat(dims, &state.x)?;
    // The stopping test is relative, so absolute violations in the flows
    // scale with the residual denominators; budget the repairs the same way.
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = 1.0 + norm(&state.x) + norm(&state.z);
    let tol_eff = report.kkt_res.max(cfg.tol) * scale;
    let (clean, _) = plan::sanitize_flows(&flows, dims, tol_eff)?;
    let plan = plan::recover_plan(&clean, dims, 100.0 * tol_eff)?;

    // barycenter of each source bin's plan row
    let nbins = dims.num_bins();
    let mut mass_sum = vec![0.0; nbins];
    let mut a_sum = vec![0.0; nbins];
    let mut b_sum = vec![0.0; nbins];
    for &(srcbin, dstbin, mass) in &plan.entries {
        let (k, l) = (dstbin % dims.m, dstbin / dims.m);
        let (ca, cb) = binning.center(k, l);
        mass_sum[srcbin] += mass;
        a_sum[srcbin] += mass * ca;
        b_sum[srcbin] += mass * cb;
    }
    let mut disp_a = vec![0.0; nbins];
    let mut disp_b = vec![0.0; nbins];
    for idx in 0..nbins {
        if mass_sum[idx] > 0.0 {
            let (i, j) = (idx % dims.m, idx / dims.m);
            let (ca, cb) = binning.center(i, j);
            disp_a[idx] = a_sum[idx] / mass_sum[idx] - ca;
            disp_b[idx] = b_sum[idx] / mass_sum[idx] - cb;
        }
    }

    let mut out_a = Vec::with_capacity(src.a.len());
    let mut out_b = Vec::with_capacity(src.b.len());
    for (&a, &b) in src.a.iter().zip(&src.b) {
        let (i, j) = binning.bin_of(a, b);
        let idx = dims.node(i, j);
        out_a.push(a + disp_a[idx]);
        out_b.push(b + disp_b[idx]);
    }
    Ok(ChromaTransfer {
        a: out_a,
        b: out_b,
        plan,
    })
}

/// Full pipeline: Lab conversion, luminance rearrangement, chrominance
/// transport, inverse conversion.
pub fn transfer(
    src: &RgbImage,
    tgt: &RgbImage,
    bins_a: usize,
    bins_b: usize,
    cfg: &SolverConfig,
) -> Result<RgbImage> {
    let src_lab = rgb_to_lab(src);
    let tgt_lab = rgb_to_lab(tgt);
    let new_l = luminance_transfer(&src_lab.l, &tgt_lab.l)?;
    let binning = ChromaBinning::covering(&src_lab, &tgt_lab, bins_a, bins_b)?;
    let chroma = chroma_transfer(&src_lab, &tgt_lab, &binning, cfg)?;
    let mapped = LabImage {
        width: src_lab.width,
        height: src_lab.height,
        l: new_l,
        a: chroma.a,
        b: chroma.b,
    };
    Ok(lab_to_rgb(&mapped))
}
