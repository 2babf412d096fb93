//! Green-blue stripe projection pattern.
//!
//! The pattern is a period-two repetition of a green stripe followed by a
//! blue stripe, each `stripe_width` projector pixels wide. Stripe `s` covers
//! cross-stripe coordinates `[s * w, (s + 1) * w)`; even stripes are green and
//! odd stripes are blue. Every other module relies on this indexing.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction in which the stripes run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Stripes are vertical bands; the stripe index varies with the column.
    #[default]
    VerticalStripes,
    /// Stripes are horizontal bands; the stripe index varies with the row.
    HorizontalStripes,
}

/// Parameters of a projected stripe pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_stripe_width")]
    pub stripe_width: u32,
    #[serde(default)]
    pub orientation: Orientation,
}

fn default_stripe_width() -> u32 {
    2
}

/// One of the two projected colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StripeColor {
    Green,
    Blue,
}

impl StripeColor {
    pub const fn rgb(self) -> [u8; 3] {
        match self {
            StripeColor::Green => [0, 255, 0],
            StripeColor::Blue => [0, 0, 255],
        }
    }

    /// Color of stripe `index`: green for even indices, blue for odd ones.
    pub const fn of_stripe(index: i64) -> Self {
        if index.rem_euclid(2) == 0 {
            StripeColor::Green
        } else {
            StripeColor::Blue
        }
    }

    /// Parity (0 or 1) shared by all stripe indices of this color.
    pub const fn parity(self) -> i64 {
        match self {
            StripeColor::Green => 0,
            StripeColor::Blue => 1,
        }
    }

    pub const fn other(self) -> Self {
        match self {
            StripeColor::Green => StripeColor::Blue,
            StripeColor::Blue => StripeColor::Green,
        }
    }
}

impl PatternSpec {
    pub fn new(width: u32, height: u32, stripe_width: u32) -> Result<Self> {
        let spec = PatternSpec {
            width,
            height,
            stripe_width,
            orientation: Orientation::VerticalStripes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Result<Self> {
        self.orientation = orientation;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain(format!(
                "pattern dimensions must be nonzero, got {}x{}",
                self.width, self.height
            )));
        }
        if self.stripe_width == 0 {
            return Err(Error::domain("stripe width must be at least 1"));
        }
        let extent = self.cross_extent();
        if (extent as u64) < 2 * self.stripe_width as u64 {
            return Err(Error::domain(format!(
                "pattern extent {extent} holds less than one green-blue period of stripe width {}",
                self.stripe_width
            )));
        }
        Ok(())
    }

    /// Size of the pattern along the coordinate the stripe index varies with.
    pub fn cross_extent(&self) -> u32 {
        match self.orientation {
            Orientation::VerticalStripes => self.width,
            Orientation::HorizontalStripes => self.height,
        }
    }

    /// Number of (possibly partial) stripes in the pattern.
    pub fn stripe_count(&self) -> u32 {
        self.cross_extent().div_ceil(self.stripe_width)
    }

    /// Projector coordinate of the center line of stripe `index`, in the
    /// continuous convention where pixel `x` spans `[x, x + 1)`.
    pub fn stripe_center(&self, index: u32) -> f64 {
        (index as f64 + 0.5) * self.stripe_width as f64
    }
}

/// Stripe index of cross-stripe coordinate `x` (the column for vertical
/// stripes, the row for horizontal ones).
pub fn stripe_index_of_column(spec: &PatternSpec, x: u32) -> Result<u32> {
    if spec.stripe_width == 0 {
        return Err(Error::domain("stripe width must be at least 1"));
    }
    let extent = spec.cross_extent();
    if x >= extent {
        return Err(Error::domain(format!(
            "coordinate {x} outside pattern extent 0..{extent}"
        )));
    }
    Ok(x / spec.stripe_width)
}

/// Render the stripe pattern as an 8-bit RGB image.
pub fn generate_pattern(spec: &PatternSpec) -> Result<RgbImage> {
    spec.validate()?;
    let w = spec.stripe_width;
    let img = RgbImage::from_fn(spec.width, spec.height, |x, y| {
        let cross = match spec.orientation {
            Orientation::VerticalStripes => x,
            Orientation::HorizontalStripes => y,
        };
        Rgb(StripeColor::of_stripe((cross / w) as i64).rgb())
    });
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(width: u32, height: u32, w: u32) -> PatternSpec {
        PatternSpec::new(width, height, w).unwrap()
    }

    #[test]
    fn first_stripe_is_green() {
        let s = spec(16, 4, 2);
        assert_eq!(stripe_index_of_column(&s, 0).unwrap(), 0);
        assert_eq!(StripeColor::of_stripe(0), StripeColor::Green);
    }

    #[test]
    fn column_three_is_blue_with_width_two() {
        let s = spec(16, 4, 2);
        let idx = stripe_index_of_column(&s, 3).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(StripeColor::of_stripe(idx as i64), StripeColor::Blue);
    }

    #[test]
    fn last_column_of_wide_pattern_by_enumeration() {
        // Count color transitions walking the generated image left to right.
        let s = spec(1024, 1, 4);
        let img = generate_pattern(&s).unwrap();
        let mut transitions = 0u32;
        for x in 1..1024 {
            if img.get_pixel(x, 0) != img.get_pixel(x - 1, 0) {
                transitions += 1;
            }
        }
        assert_eq!(transitions, 255);
        assert_eq!(stripe_index_of_column(&s, 1023).unwrap(), transitions);
    }

    #[test]
    fn out_of_range_column_is_domain_error() {
        let s = spec(16, 4, 2);
        assert!(matches!(
            stripe_index_of_column(&s, 16),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn projector_resolution_pattern() {
        let s = spec(1024, 768, 2);
        let img = generate_pattern(&s).unwrap();
        assert_eq!(img.dimensions(), (1024, 768));
        assert!(img.pixels().all(|p| p.0[0] == 0));
    }

    #[test]
    fn small_pattern_column_sequence() {
        let img = generate_pattern(&spec(16, 4, 2)).unwrap();
        let seq: String = (0..16)
            .map(|x| {
                if img.get_pixel(x, 0).0[1] == 255 {
                    'G'
                } else {
                    'B'
                }
            })
            .collect();
        assert_eq!(seq, "GGBBGGBBGGBBGGBB");
        for y in 1..4 {
            for x in 0..16 {
                assert_eq!(img.get_pixel(x, y), img.get_pixel(x, 0));
            }
        }
    }

    #[test]
    fn horizontal_stripes_are_the_transpose() {
        let v = generate_pattern(&spec(12, 8, 3)).unwrap();
        let h = generate_pattern(
            &PatternSpec::new(8, 12, 3)
                .unwrap()
                .with_orientation(Orientation::HorizontalStripes)
                .unwrap(),
        )
        .unwrap();
        for y in 0..8 {
            for x in 0..12 {
                assert_eq!(v.get_pixel(x, y), h.get_pixel(y, x));
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(PatternSpec::new(0, 4, 2).is_err());
        assert!(PatternSpec::new(16, 0, 2).is_err());
        assert!(PatternSpec::new(16, 4, 0).is_err());
        assert!(PatternSpec::new(3, 4, 2).is_err());
        assert!(PatternSpec::new(4, 4, 2).is_ok());
    }

    #[test]
    fn stripe_count_rounds_up() {
        assert_eq!(spec(10, 1, 4).stripe_count(), 3);
        assert_eq!(spec(1024, 1, 2).stripe_count(), 512);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn parity_periodicity_and_count(w in 1u32..9, periods in 1u32..20, extra in 0u32..8, h in 1u32..4) {
                let width = 2 * w * periods + extra;
                let s = spec(width, h, w);
                let img = generate_pattern(&s).unwrap();
                for x in 0..width {
                    let idx = stripe_index_of_column(&s, x).unwrap();
                    let px = img.get_pixel(x, 0).0;
                    let green = px == StripeColor::Green.rgb();
                    prop_assert!(green || px == StripeColor::Blue.rgb());
                    prop_assert_eq!(green, idx % 2 == 0);
                    if x + 2 * w < width {
                        prop_assert_eq!(img.get_pixel(x, 0), img.get_pixel(x + 2 * w, 0));
                    }
                }
                let last = stripe_index_of_column(&s, width - 1).unwrap();
                prop_assert_eq!(last + 1, s.stripe_count());
                prop_assert_eq!(s.stripe_count(), width.div_ceil(w));
            }
        }
    }
}
