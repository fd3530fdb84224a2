//! Restoration quality metrics: MAE, PSNR, SSIM and multi-scale SSIM.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::NormalizedImage;
use crate::error::{Error, Result};

/// Pixel types the metrics accept; all arithmetic happens in `f64`.
pub trait Sample: Copy {
    fn to_f64(self) -> f64;
}

impl Sample for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Sample for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

/// A single-channel image borrowed as a row-major plane.
#[derive(Clone, Copy, Debug)]
pub struct Plane<'a, T = f32> {
    pub data: &'a [T],
    pub height: usize,
    pub width: usize,
}

impl<'a, T: Sample> Plane<'a, T> {
    pub fn new(data: &'a [T], height: usize, width: usize) -> Self {
        assert_eq!(data.len(), height * width, "plane size");
        Self {
            data,
            height,
            width,
        }
    }

    fn widen(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }
}

impl<'a> From<&'a NormalizedImage> for Plane<'a, f32> {
    fn from(img: &'a NormalizedImage) -> Self {
        Plane::new(img.plane(0), img.height, img.width)
    }
}

fn same_shape<T: Sample>(a: Plane<'_, T>, b: Plane<'_, T>) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::shape(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

pub fn mae<T: Sample>(a: Plane<'_, T>, b: Plane<'_, T>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data
        .iter()
        .zip(b.data)
        .map(|(x, y)| (x.to_f64() - y.to_f64()).abs())
        .sum();
    Ok(s / a.data.len().max(1) as f64)
}

pub fn mse<T: Sample>(a: Plane<'_, T>, b: Plane<'_, T>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .data
        .iter()
        .zip(b.data)
        .map(|(x, y)| (x.to_f64() - y.to_f64()).powi(2))
        .sum();
    Ok(s / a.data.len().max(1) as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the inputs match.
pub fn psnr<T: Sample>(a: Plane<'_, T>, b: Plane<'_, T>, data_range: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window_size as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    fn validate(&self) -> Result<()> {
        if self.window_size == 0
            || !(self.sigma > 0.0)
            || !(self.k1 > 0.0)
            || !(self.k2 > 0.0)
            || !(self.data_range > 0.0)
        {
            return Err(Error::invalid(format!("bad SSIM parameters {self:?}")));
        }
        Ok(())
    }
}

/// Valid-mode separable filtering of a row-major `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let r = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&r[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (i, t) in taps.iter().enumerate() {
            let r = &rows[(y + i) * ow..(y + i + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(r) {
                *o += t * v;
            }
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term over all valid window positions.
pub fn ssim_components<T: Sample>(
    a: Plane<'_, T>,
    b: Plane<'_, T>,
    params: &SsimParams,
) -> Result<(f64, f64)> {
    same_shape(a, b)?;
    ssim_f64(&a.widen(), &b.widen(), a.height, a.width, params)
}

fn ssim_f64(x: &[f64], y: &[f64], h: usize, w: usize, params: &SsimParams) -> Result<(f64, f64)> {
    params.validate()?;
    let k = params.window_size;
    if h < k || w < k {
        return Err(Error::invalid(format!(
            "{h}x{w} image is smaller than the {k}x{k} window"
        )));
    }
    let taps = params.taps();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(x, h, w, &taps);
    let my = filter_valid(y, h, w, &taps);
    let mxx = filter_valid(&prod(x, x), h, w, &taps);
    let myy = filter_valid(&prod(y, y), h, w, &taps);
    let mxy = filter_valid(&prod(x, y), h, w, &taps);
    let (c1, c2) = (params.c1(), params.c2());
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cov = mxy[i] - ux * uy;
        let cs = (2.0 * cov + c2) / (vx + vy + c2);
        ssim_sum += (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1) * cs;
        cs_sum += cs;
    }
    let n = mx.len() as f64;
    Ok((ssim_sum / n, cs_sum / n))
}

pub fn ssim<T: Sample>(a: Plane<'_, T>, b: Plane<'_, T>, params: &SsimParams) -> Result<f64> {
    ssim_components(a, b, params).map(|(s, _)| s)
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSsim {
    pub value: f64,
    pub scales_used: usize,
    /// True when the image was too small for every requested scale and the
    /// remaining weights were renormalised.
    pub reduced: bool,
}

/// 2x2 mean pooling, dropping a trailing odd row or column.
pub fn downsample2(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let s = src[2 * y * w + 2 * x]
                + src[2 * y * w + 2 * x + 1]
                + src[(2 * y + 1) * w + 2 * x]
                + src[(2 * y + 1) * w + 2 * x + 1];
            out.push(s * 0.25);
        }
    }
    (out, oh, ow)
}

/// Number of dyadic scales an `h x w` image supports for a window size.
pub fn supported_scales(h: usize, w: usize, window: usize, max_scales: usize) -> usize {
    let (mut h, mut w) = (h, w);
    let mut n = 0;
    while n < max_scales && h >= window && w >= window {
        n += 1;
        h /= 2;
        w /= 2;
    }
    n
}

/// Multi-scale SSIM: contrast-structure terms at the finer scales and full
/// SSIM at the coarsest, each clamped at zero and raised to its weight.
pub fn ms_ssim<T: Sample>(
    a: Plane<'_, T>,
    b: Plane<'_, T>,
    params: &SsimParams,
    weights: &[f64],
) -> Result<MsSsim> {
    same_shape(a, b)?;
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid(format!("bad MS-SSIM weights {weights:?}")));
    }
    let scales = supported_scales(a.height, a.width, params.window_size, weights.len());
    if scales == 0 {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than the {} px window",
            a.height, a.width, params.window_size
        )));
    }
    let reduced = scales < weights.len();
    let mut w: Vec<f64> = weights[..scales].to_vec();
    if reduced {
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter_mut().for_each(|v| *v /= s);
        }
    }
    let (mut x, mut y) = (a.widen(), b.widen());
    let (mut h, mut wd) = (a.height, a.width);
    let mut value = 1.0;
    for (j, wj) in w.iter().enumerate() {
        let (s, cs) = ssim_f64(&x, &y, h, wd, params)?;
        let term = if j + 1 == scales { s } else { cs };
        value *= term.max(0.0).powf(*wj);
        if j + 1 < scales {
            let (nx, nh, nw) = downsample2(&x, h, wd);
            let (ny, _, _) = downsample2(&y, h, wd);
            x = nx;
            y = ny;
            h = nh;
            wd = nw;
        }
    }
    Ok(MsSsim {
        value,
        scales_used: scales,
        reduced,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub ssim: SsimParams,
    pub ms_ssim_weights: Vec<f64>,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            ssim: SsimParams::default(),
            ms_ssim_weights: MS_SSIM_WEIGHTS.to_vec(),
        }
    }
}

mod non_finite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Num(v) => v,
            Repr::Text(t) if t == "inf" => f64::INFINITY,
            Repr::Text(_) => f64::NAN,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pair_id: String,
    pub mae: f64,
    #[serde(with = "non_finite")]
    pub psnr: f64,
    pub ssim: f64,
    pub msssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_pairs: usize,
    pub mean_mae: f64,
    /// Mean over pairs with finite PSNR; `None` when every pair matched exactly.
    pub mean_psnr: Option<f64>,
    pub n_infinite_psnr: usize,
    pub mean_ssim: f64,
    pub mean_msssim: f64,
    pub scoring_height: usize,
    pub scoring_width: usize,
    pub msssim_scales: usize,
    pub msssim_reduced: bool,
    pub per_pair: Vec<PairMetrics>,
}

impl MetricReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["pair_id", "mae", "psnr", "ssim", "msssim"])
            .map_err(|e| csv_err(path, e))?;
        for p in &self.per_pair {
            w.write_record([
                p.pair_id.clone(),
                p.mae.to_string(),
                if p.psnr.is_finite() {
                    p.psnr.to_string()
                } else {
                    "inf".into()
                },
                p.ssim.to_string(),
                p.msssim.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Score restored images against aligned clean references. Both sets must
/// hold single-channel images of one common size; they are compared on the
/// unit scale.
pub fn evaluate_denoiser(
    restored: &[NormalizedImage],
    clean: &[NormalizedImage],
    ids: Option<&[String]>,
    params: &MetricParams,
) -> Result<MetricReport> {
    if restored.len() != clean.len() {
        return Err(Error::shape(format!(
            "{} restored images for {} clean ones",
            restored.len(),
            clean.len()
        )));
    }
    if let Some(ids) = ids {
        if ids.len() != restored.len() {
            return Err(Error::shape(format!(
                "{} ids for {} pairs",
                ids.len(),
                restored.len()
            )));
        }
    }
    if restored.is_empty() {
        return Err(Error::invalid("no pairs to evaluate"));
    }
    let (h, w) = (restored[0].height, restored[0].width);
    let mut per_pair = Vec::with_capacity(restored.len());
    let mut scales = (0, false);
    for (i, (r, c)) in restored.iter().zip(clean).enumerate() {
        if r.channels != 1 || c.channels != 1 {
            return Err(Error::shape(format!("pair {i} is not single-channel")));
        }
        if (r.height, r.width) != (h, w) || (c.height, c.width) != (h, w) {
            return Err(Error::shape(format!(
                "pair {i} is {}x{} / {}x{}, expected {h}x{w}",
                r.height, r.width, c.height, c.width
            )));
        }
        let (ru, cu) = (r.to_unit(), c.to_unit());
        let (a, b) = (Plane::new(&ru, h, w), Plane::new(&cu, h, w));
        let ms = ms_ssim(a, b, &params.ssim, &params.ms_ssim_weights)?;
        scales = (ms.scales_used, ms.reduced);
        per_pair.push(PairMetrics {
            pair_id: ids.map_or_else(|| i.to_string(), |ids| ids[i].clone()),
            mae: mae(a, b)?,
            psnr: psnr(a, b, params.ssim.data_range)?,
            ssim: ssim(a, b, &params.ssim)?,
            msssim: ms.value,
        });
    }
    Ok(summarize(per_pair, (h, w), scales))
}

/// Aggregate per-pair rows, summing in order.
pub fn summarize(
    per_pair: Vec<PairMetrics>,
    dims: (usize, usize),
    scales: (usize, bool),
) -> MetricReport {
    let n = per_pair.len();
    let mean =
        |f: &dyn Fn(&PairMetrics) -> f64| per_pair.iter().map(f).sum::<f64>() / n.max(1) as f64;
    let finite: Vec<f64> = per_pair
        .iter()
        .map(|p| p.psnr)
        .filter(|v| v.is_finite())
        .collect();
    MetricReport {
        n_pairs: n,
        mean_mae: mean(&|p| p.mae),
        mean_psnr: if finite.is_empty() {
            None
        } else {
            Some(finite.iter().sum::<f64>() / finite.len() as f64)
        },
        n_infinite_psnr: n - finite.len(),
        mean_ssim: mean(&|p| p.ssim),
        mean_msssim: mean(&|p| p.msssim),
        scoring_height: dims.0,
        scoring_width: dims.1,
        msssim_scales: scales.0,
        msssim_reduced: scales.1,
        per_pair,
    }
}
