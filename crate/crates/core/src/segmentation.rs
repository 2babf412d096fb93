//! Color-stripe segmentation: directional blur, color balancing by local
//! channel means, and local thresholding of the green-minus-blue score.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::StripeColor;

/// Default zero guard on window means, in 8-bit intensity units.
pub const DEFAULT_ZERO_GUARD: f64 = 1.0;

/// Per-pixel classification result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum Label {
    #[default]
    Invalid = 0,
    Green = 1,
    Blue = 2,
}

impl Label {
    pub fn color(self) -> Option<StripeColor> {
        match self {
            Label::Invalid => None,
            Label::Green => Some(StripeColor::Green),
            Label::Blue => Some(StripeColor::Blue),
        }
    }

    pub fn from_color(color: StripeColor) -> Self {
        match color {
            StripeColor::Green => Label::Green,
            StripeColor::Blue => Label::Blue,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::Invalid),
            1 => Some(Label::Green),
            2 => Some(Label::Blue),
            _ => None,
        }
    }

    pub fn is_valid(self) -> bool {
        self != Label::Invalid
    }

    /// Green <-> Blue; Invalid stays Invalid.
    pub fn flipped(self) -> Self {
        match self {
            Label::Invalid => Label::Invalid,
            Label::Green => Label::Blue,
            Label::Blue => Label::Green,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<Label>,
}

impl ClassMap {
    pub fn new(width: u32, height: u32, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::domain(format!(
                "{} labels do not fill a {width}x{height} map",
                labels.len()
            )));
        }
        Ok(ClassMap {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: u32, height: u32, label: Label) -> Self {
        ClassMap {
            width,
            height,
            labels: vec![label; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Label {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn row(&self, y: u32) -> &[Label] {
        let w = self.width as usize;
        &self.labels[y as usize * w..(y as usize + 1) * w]
    }

    pub fn valid_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_valid()).count()
    }

    pub fn transposed(&self) -> ClassMap {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut labels = vec![Label::Invalid; w * h];
        for y in 0..h {
            for x in 0..w {
                labels[x * h + y] = self.labels[y * w + x];
            }
        }
        ClassMap {
            width: self.height,
            height: self.width,
            labels,
        }
    }
}

/// Read access to a three-channel image with real-valued samples.
pub trait RgbSource: Sync {
    fn dimensions(&self) -> (u32, u32);
    fn channel(&self, x: u32, y: u32, c: usize) -> f64;

    fn max_channel(&self, x: u32, y: u32) -> f64 {
        (0..3)
            .map(|c| self.channel(x, y, c))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl RgbSource for RgbImage {
    fn dimensions(&self) -> (u32, u32) {
        RgbImage::dimensions(self)
    }

    fn channel(&self, x: u32, y: u32, c: usize) -> f64 {
        self.get_pixel(x, y).0[c] as f64
    }
}

/// Real-valued RGB image, used for pre-quantization data.
#[derive(Debug, Clone, PartialEq)]
pub struct RealRgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f64; 3]>,
}

impl RealRgbImage {
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        RealRgbImage {
            width,
            height,
            data,
        }
    }
}

impl RgbSource for RealRgbImage {
    fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn channel(&self, x: u32, y: u32, c: usize) -> f64 {
        self.data[y as usize * self.width as usize + x as usize][c]
    }
}

/// Image axis along which the directional blur runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurAxis {
    /// Along columns (y); the stripe direction for vertical stripes.
    #[default]
    Vertical,
    Horizontal,
}

/// Normalized, odd-length Gaussian kernel. `sigma == 0` yields a delta.
pub fn gaussian_kernel(sigma: f64, support: usize) -> Result<Vec<f64>> {
    if support == 0 || support % 2 == 0 {
        return Err(Error::config(format!(
            "blur support must be odd and >= 1, got {support}"
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::config(format!(
            "blur sigma must be >= 0, got {sigma}"
        )));
    }
    let half = (support / 2) as i64;
    if sigma == 0.0 {
        let mut k = vec![0.0; support];
        k[support / 2] = 1.0;
        return Ok(k);
    }
    let raw: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// 1-D Gaussian blur along `axis` with clamp-to-edge borders.
pub fn directional_blur(
    img: &RgbImage,
    axis: BlurAxis,
    sigma: f64,
    support: usize,
) -> Result<RgbImage> {
    let kernel = gaussian_kernel(sigma, support)?;
    let (w, h) = img.dimensions();
    let half = (support / 2) as i64;
    let src = img.as_raw();
    let mut out = vec![0u8; src.len()];
    let row_len = w as usize * 3;
    if row_len == 0 {
        return Ok(img.clone());
    }
    out.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w as usize {
                let mut acc = [0.0f64; 3];
                for (k, weight) in kernel.iter().enumerate() {
                    let offset = k as i64 - half;
                    let (sx, sy) = match axis {
                        BlurAxis::Vertical => {
                            (x, (y as i64 + offset).clamp(0, h as i64 - 1) as usize)
                        }
                        BlurAxis::Horizontal => {
                            ((x as i64 + offset).clamp(0, w as i64 - 1) as usize, y)
                        }
                    };
                    let base = (sy * w as usize + sx) * 3;
                    for c in 0..3 {
                        acc[c] += weight * src[base + c] as f64;
                    }
                }
                for c in 0..3 {
                    row[x * 3 + c] = acc[c].round().clamp(0.0, 255.0) as u8;
                }
            }
        });
    Ok(RgbImage::from_raw(w, h, out).expect("buffer sized from source"))
}

/// Averaging window for color balancing and thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Window {
    Pixels([u32; 2]),
    /// The literal string `"whole"`: every pixel averages the entire image.
    WholeImage(WholeImage),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WholeImage {
    Whole,
}

impl Window {
    pub const fn pixels(wx: u32, wy: u32) -> Self {
        Window::Pixels([wx, wy])
    }

    pub const fn whole() -> Self {
        Window::WholeImage(WholeImage::Whole)
    }

    fn validate(&self) -> Result<()> {
        match self {
            Window::Pixels([wx, wy]) if *wx == 0 || *wy == 0 => Err(Error::config(format!(
                "window size must be at least 1x1, got {wx}x{wy}"
            ))),
            _ => Ok(()),
        }
    }

    /// Inclusive clipped window bounds `(x0, x1, y0, y1)` around `(x, y)`.
    fn bounds(&self, x: u32, y: u32, width: u32, height: u32) -> (usize, usize, usize, usize) {
        match *self {
            Window::WholeImage(_) => (0, width as usize - 1, 0, height as usize - 1),
            Window::Pixels([wx, wy]) => {
                let clip = |c: u32, size: u32, n: u32| {
                    let lo = c as i64 - (size / 2) as i64;
                    let hi = lo + size as i64 - 1;
                    (lo.max(0) as usize, hi.min(n as i64 - 1) as usize)
                };
                let (x0, x1) = clip(x, wx, width);
                let (y0, y1) = clip(y, wy, height);
                (x0, x1, y0, y1)
            }
        }
    }
}

/// Summed-area table over `width x height` real values.
struct Integral {
    stride: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(width: usize, height: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0.0;
            for x in 0..width {
                row += value(x, y);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Integral { stride, sums }
    }

    fn rect(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> f64 {
        let s = self.stride;
        self.sums[(y1 + 1) * s + x1 + 1] - self.sums[y0 * s + x1 + 1] - self.sums[(y1 + 1) * s + x0]
            + self.sums[y0 * s + x0]
    }
}

/// Per-pixel window means of the three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMeans {
    pub width: u32,
    pub height: u32,
    pub means: Vec<[f64; 3]>,
}

/// Mean of each channel over the window centered at every pixel, clipped to
/// the image (the mean is over the intersection).
pub fn window_mean(img: &impl RgbSource, window: Window) -> Result<WindowMeans> {
    window.validate()?;
    let (w, h) = img.dimensions();
    let tables: Vec<Integral> = (0..3)
        .map(|c| {
            Integral::new(w as usize, h as usize, |x, y| {
                img.channel(x as u32, y as u32, c)
            })
        })
        .collect();
    let mut means = vec![[0.0; 3]; w as usize * h as usize];
    if w > 0 {
        means
            .par_chunks_mut(w as usize)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, out) in row.iter_mut().enumerate() {
                    let (x0, x1, y0, y1) = window.bounds(x as u32, y as u32, w, h);
                    let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
                    for c in 0..3 {
                        out[c] = tables[c].rect(x0, x1, y0, y1) / n;
                    }
                }
            });
    }
    Ok(WindowMeans {
        width: w,
        height: h,
        means,
    })
}

/// Channel values divided by their window means. A channel is `None` where
/// its window mean falls below the zero guard.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedImage {
    pub width: u32,
    pub height: u32,
    pub window: Window,
    pub values: Vec<[Option<f64>; 3]>,
}

impl BalancedImage {
    pub fn get(&self, x: u32, y: u32) -> [Option<f64>; 3] {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Green-minus-blue balanced score, if both channels are defined.
    pub fn score(&self, x: u32, y: u32) -> Option<f64> {
        let [_, g, b] = self.get(x, y);
        Some(g? - b?)
    }
}

pub fn color_balance(img: &impl RgbSource, window: Window) -> Result<BalancedImage> {
    color_balance_with_guard(img, window, DEFAULT_ZERO_GUARD)
}

pub fn color_balance_with_guard(
    img: &impl RgbSource,
    window: Window,
    zero_guard: f64,
) -> Result<BalancedImage> {
    let means = window_mean(img, window)?;
    let (w, h) = img.dimensions();
    let mut values = vec![[None; 3]; w as usize * h as usize];
    if w > 0 {
        values
            .par_chunks_mut(w as usize)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, out) in row.iter_mut().enumerate() {
                    let mean = means.means[y * w as usize + x];
                    for c in 0..3 {
                        out[c] = (mean[c] >= zero_guard)
                            .then(|| img.channel(x as u32, y as u32, c) / mean[c]);
                    }
                }
            });
    }
    Ok(BalancedImage {
        width: w,
        height: h,
        window,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyParams {
    pub threshold_window: Window,
    pub margin: f64,
    pub intensity_floor: f64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams {
            threshold_window: Window::pixels(31, 31),
            margin: 0.05,
            intensity_floor: 16.0,
        }
    }
}

impl ClassifyParams {
    pub fn validate(&self) -> Result<()> {
        self.threshold_window.validate()?;
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(Error::config(format!(
                "margin must be >= 0, got {}",
                self.margin
            )));
        }
        if !self.intensity_floor.is_finite() {
            return Err(Error::config("intensity floor must be finite"));
        }
        Ok(())
    }
}

/// Scores `d = c_G - c_B` where usable; `None` marks pixels that are dark or
/// have an undefined balanced channel.
fn scores(balanced: &BalancedImage, raw: &impl RgbSource, floor: f64) -> Result<Vec<Option<f64>>> {
    let (w, h) = raw.dimensions();
    if (w, h) != (balanced.width, balanced.height) {
        return Err(Error::domain(format!(
            "balanced image is {}x{}, raw image is {w}x{h}",
            balanced.width, balanced.height
        )));
    }
    let mut out = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
        for x in 0..w {
            let lit = raw.max_channel(x, y) >= floor;
            out.push(if lit { balanced.score(x, y) } else { None });
        }
    }
    Ok(out)
}

fn label_scores(
    width: u32,
    height: u32,
    scores: &[Option<f64>],
    margin: f64,
    threshold: impl Fn(usize, usize) -> Option<f64> + Sync,
) -> ClassMap {
    let mut labels = vec![Label::Invalid; scores.len()];
    if width > 0 {
        labels
            .par_chunks_mut(width as usize)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, out) in row.iter_mut().enumerate() {
                    let Some(d) = scores[y * width as usize + x] else {
                        continue;
                    };
                    let Some(t) = threshold(x, y) else { continue };
                    *out = if d > t + margin {
                        Label::Green
                    } else if d < t - margin {
                        Label::Blue
                    } else {
                        Label::Invalid
                    };
                }
            });
    }
    ClassMap {
        width,
        height,
        labels,
    }
}

/// Local-threshold classification: the threshold at each pixel is the mean
/// score over the usable pixels of the threshold window.
pub fn classify(
    balanced: &BalancedImage,
    raw: &impl RgbSource,
    params: &ClassifyParams,
) -> Result<ClassMap> {
    params.validate()?;
    let (w, h) = (balanced.width, balanced.height);
    let d = scores(balanced, raw, params.intensity_floor)?;
    let sum = Integral::new(w as usize, h as usize, |x, y| {
        d[y * w as usize + x].unwrap_or(0.0)
    });
    let count = Integral::new(w as usize, h as usize, |x, y| {
        d[y * w as usize + x].map_or(0.0, |_| 1.0)
    });
    let window = params.threshold_window;
    Ok(label_scores(w, h, &d, params.margin, |x, y| {
        let (x0, x1, y0, y1) = window.bounds(x as u32, y as u32, w, h);
        let n = count.rect(x0, x1, y0, y1);
        (n > 0.0).then(|| sum.rect(x0, x1, y0, y1) / n)
    }))
}

/// Baseline classification with one threshold for the whole image.
pub fn global_classify(
    balanced: &BalancedImage,
    raw: &impl RgbSource,
    params: &ClassifyParams,
    threshold: f64,
) -> Result<ClassMap> {
    params.validate()?;
    let d = scores(balanced, raw, params.intensity_floor)?;
    Ok(label_scores(
        balanced.width,
        balanced.height,
        &d,
        params.margin,
        |_, _| Some(threshold),
    ))
}

/// Full segmentation parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentParams {
    pub blur_axis: BlurAxis,
    pub blur_sigma: f64,
    pub blur_support: usize,
    pub balance_window: Window,
    pub zero_guard: f64,
    pub threshold_window: Window,
    pub margin: f64,
    pub intensity_floor: f64,
    /// When set, classify with this global threshold instead of the local one.
    pub global_threshold: Option<f64>,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            blur_axis: BlurAxis::Vertical,
            blur_sigma: 1.0,
            blur_support: 7,
            balance_window: Window::pixels(33, 33),
            zero_guard: DEFAULT_ZERO_GUARD,
            threshold_window: Window::pixels(31, 31),
            margin: 0.05,
            intensity_floor: 16.0,
            global_threshold: None,
        }
    }
}

impl SegmentParams {
    pub fn classify_params(&self) -> ClassifyParams {
        ClassifyParams {
            threshold_window: self.threshold_window,
            margin: self.margin,
            intensity_floor: self.intensity_floor,
        }
    }
}

/// Blur, balance and classify a captured image.
pub fn segment(img: &RgbImage, params: &SegmentParams) -> Result<ClassMap> {
    let blurred = directional_blur(
        img,
        params.blur_axis,
        params.blur_sigma,
        params.blur_support,
    )?;
    let balanced = color_balance_with_guard(&blurred, params.balance_window, params.zero_guard)?;
    let classify_params = params.classify_params();
    match params.global_threshold {
        Some(t) => global_classify(&balanced, &blurred, &classify_params, t),
        None => classify(&balanced, &blurred, &classify_params),
    }
}
