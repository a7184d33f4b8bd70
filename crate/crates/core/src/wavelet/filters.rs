use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported wavelet families (one representative order each).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "haar")]
    Haar,
    #[serde(rename = "db2")]
    Db2,
    #[serde(rename = "db4")]
    Db4,
    #[serde(rename = "coif1")]
    Coif1,
    #[serde(rename = "sym4")]
    Sym4,
    #[serde(rename = "bior2.2")]
    Bior22,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Haar,
        Family::Db2,
        Family::Db4,
        Family::Coif1,
        Family::Sym4,
        Family::Bior22,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Haar => "haar",
            Family::Db2 => "db2",
            Family::Db4 => "db4",
            Family::Coif1 => "coif1",
            Family::Sym4 => "sym4",
            Family::Bior22 => "bior2.2",
        }
    }

    pub fn is_orthogonal(self) -> bool {
        !matches!(self, Family::Bior22)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" | "db1" => Ok(Family::Haar),
            "db2" => Ok(Family::Db2),
            "db4" => Ok(Family::Db4),
            "coif1" => Ok(Family::Coif1),
            "sym4" => Ok(Family::Sym4),
            "bior2.2" | "bior22" => Ok(Family::Bior22),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

/// A filter placed on the periodic signal: coefficient `n` of output `k`
/// touches sample `2k + start + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    pub coeffs: Vec<f64>,
    pub start: isize,
}

impl Taps {
    fn new(coeffs: &[f64], start: isize) -> Self {
        Self {
            coeffs: coeffs.to_vec(),
            start,
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// Two-channel filter bank.
///
/// Analysis rows and synthesis columns share the placement rule of [`Taps`]:
/// `approx[k] = Σ_n lo[n] x[2k + start + n]` and synthesis scatters
/// `approx[k] * lo_s[n]` onto sample `2k + start_s + n`. For orthogonal
/// families the synthesis taps equal the analysis taps, i.e. synthesis is the
/// transpose of analysis (in convolution orientation the synthesis kernels
/// are the time-reversed analysis kernels).
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub family: Family,
    pub analysis_lo: Taps,
    pub analysis_hi: Taps,
    pub synthesis_lo: Taps,
    pub synthesis_hi: Taps,
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

// Scaling filters (Daubechies' h_n orientation), exact to double precision.
const DB4: [f64; 8] = [
    0.230_377_813_308_896_5,
    0.714_846_570_552_915_7,
    0.630_880_767_929_858_9,
    -0.027_983_769_416_859_854,
    -0.187_034_811_719_093_1,
    0.030_841_381_835_560_764,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_032,
];

const SYM4: [f64; 8] = [
    0.032_223_100_604_051_466,
    -0.012_603_967_262_031_304,
    -0.099_219_543_576_633_53,
    0.297_857_795_605_306_06,
    0.803_738_751_805_132_1,
    0.497_618_667_632_775,
    -0.029_635_527_646_002_493,
    -0.075_765_714_789_502_21,
];

fn db2() -> Vec<f64> {
    let s3 = 3f64.sqrt();
    let d = 4.0 * SQRT_2;
    vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
}

fn coif1() -> Vec<f64> {
    let s7 = 7f64.sqrt();
    [-3.0 + s7, 1.0 - s7, 14.0 - 2.0 * s7, 14.0 + 2.0 * s7, 5.0 + s7, 1.0 - s7]
        .iter()
        .map(|v| v * SQRT_2 / 32.0)
        .collect()
}

/// Quadrature mirror: `hi[n] = (-1)^n lo[L-1-n]`.
fn qmf(lo: &[f64]) -> Vec<f64> {
    let l = lo.len();
    (0..l)
        .map(|n| if n % 2 == 0 { lo[l - 1 - n] } else { -lo[l - 1 - n] })
        .collect()
}

fn orthogonal(family: Family, lo: Vec<f64>) -> FilterBank {
    let hi = qmf(&lo);
    let lo = Taps { coeffs: lo, start: 0 };
    let hi = Taps { coeffs: hi, start: 0 };
    FilterBank {
        family,
        synthesis_lo: lo.clone(),
        synthesis_hi: hi.clone(),
        analysis_lo: lo,
        analysis_hi: hi,
    }
}

/// Filter bank for a named family.
pub fn wavelet_filters(family: Family) -> FilterBank {
    match family {
        Family::Haar => orthogonal(family, vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2]),
        Family::Db2 => orthogonal(family, db2()),
        Family::Db4 => orthogonal(family, DB4.to_vec()),
        Family::Coif1 => orthogonal(family, coif1()),
        Family::Sym4 => orthogonal(family, SYM4.to_vec()),
        // CDF 5/3: low-pass centred on 2k, high-pass centred on 2k+1.
        Family::Bior22 => FilterBank {
            family,
            analysis_lo: Taps::new(
                &[-0.125 * SQRT_2, 0.25 * SQRT_2, 0.75 * SQRT_2, 0.25 * SQRT_2, -0.125 * SQRT_2],
                -2,
            ),
            analysis_hi: Taps::new(&[0.25 * SQRT_2, -0.5 * SQRT_2, 0.25 * SQRT_2], 0),
            synthesis_lo: Taps::new(&[0.25 * SQRT_2, 0.5 * SQRT_2, 0.25 * SQRT_2], -1),
            synthesis_hi: Taps::new(
                &[0.125 * SQRT_2, 0.25 * SQRT_2, -0.75 * SQRT_2, 0.25 * SQRT_2, 0.125 * SQRT_2],
                -1,
            ),
        },
    }
}

/// Lookup by family name; unknown names are an error.
pub fn wavelet_filters_by_name(name: &str) -> Result<FilterBank> {
    Ok(wavelet_filters(name.parse()?))
}
