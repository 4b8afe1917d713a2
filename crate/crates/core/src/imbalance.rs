//! Class-size profiles for linear, step and long-tail imbalance, plus the
//! imbalance ratio.
//!
//! A profile describes how many samples each of `n_classes` classes holds.
//! Which concrete dataset class receives which profile entry is decided
//! downstream (see `data::induce_imbalance`); here profiles are always
//! reported in class-index order, non-decreasing for `linear` and `longtail`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Rounding constant used by the linear profile; makes the rounded sequence
/// hit `k_min` and `k_max` exactly at the endpoints.
const LINEAR_C: f64 = 0.499;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImbalanceKind {
    Balanced,
    Linear,
    Step,
    Longtail,
}

impl ImbalanceKind {
    pub fn name(self) -> &'static str {
        match self {
            ImbalanceKind::Balanced => "balanced",
            ImbalanceKind::Linear => "linear",
            ImbalanceKind::Step => "step",
            ImbalanceKind::Longtail => "longtail",
        }
    }
}

/// A class-size distribution: kind plus the (k_min, k_max, n, m-or-power)
/// tuple. Applies equally to datasets and to per-episode support sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceSpec {
    pub kind: ImbalanceKind,
    pub k_min: usize,
    pub k_max: usize,
    pub n_classes: usize,
    /// Number of minority classes; step only.
    pub m_minority: Option<usize>,
    /// Power-law exponent; longtail only.
    pub power: Option<f64>,
}

impl ImbalanceSpec {
    pub fn balanced(k: usize, n_classes: usize) -> Self {
        ImbalanceSpec {
            kind: ImbalanceKind::Balanced,
            k_min: k,
            k_max: k,
            n_classes,
            m_minority: None,
            power: None,
        }
    }

    pub fn linear(k_min: usize, k_max: usize, n_classes: usize) -> Self {
        ImbalanceSpec {
            kind: ImbalanceKind::Linear,
            k_min,
            k_max,
            n_classes,
            m_minority: None,
            power: None,
        }
    }

    pub fn step(k_min: usize, k_max: usize, n_classes: usize, m_minority: usize) -> Self {
        ImbalanceSpec {
            kind: ImbalanceKind::Step,
            k_min,
            k_max,
            n_classes,
            m_minority: Some(m_minority),
            power: None,
        }
    }

    pub fn longtail(k_min: usize, k_max: usize, n_classes: usize, power: f64) -> Self {
        ImbalanceSpec {
            kind: ImbalanceKind::Longtail,
            k_min,
            k_max,
            n_classes,
            m_minority: None,
            power: Some(power),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_max == 0 || self.n_classes == 0 {
            return Err(Error::InvalidInput(format!(
                "imbalance spec {self} requires positive k_min, k_max and n_classes"
            )));
        }
        if self.k_min > self.k_max {
            return Err(Error::InvalidInput(format!(
                "imbalance spec {self}: k_min > k_max"
            )));
        }
        match self.kind {
            ImbalanceKind::Balanced => {
                if self.k_min != self.k_max {
                    return Err(Error::InvalidInput(format!(
                        "balanced spec {self} requires k_min = k_max"
                    )));
                }
            }
            ImbalanceKind::Step => {
                let m = self.m_minority.ok_or_else(|| {
                    Error::InvalidInput(format!("step spec {self} requires m_minority"))
                })?;
                if m > self.n_classes {
                    return Err(Error::InvalidInput(format!(
                        "step spec {self}: m_minority exceeds n_classes"
                    )));
                }
            }
            ImbalanceKind::Longtail => {
                let p = self.power.unwrap_or(10.0);
                // NaN powers must also be rejected, hence no `p < 1.0`.
                #[allow(clippy::neg_cmp_op_on_partial_ord)]
                if !(p >= 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "longtail spec {self} requires power >= 1, got {p}"
                    )));
                }
            }
            ImbalanceKind::Linear => {}
        }
        Ok(())
    }

    /// Generate the class-size profile for this spec.
    pub fn sizes(&self) -> Result<SizeProfile> {
        self.validate()?;
        match self.kind {
            ImbalanceKind::Balanced => Ok(SizeProfile {
                sizes: vec![self.k_min; self.n_classes],
            }),
            ImbalanceKind::Linear => linear_sizes(self),
            ImbalanceKind::Step => step_sizes(self),
            ImbalanceKind::Longtail => longtail_sizes(self),
        }
    }
}

/// Textual form `kind(k_min,k_max,n[,m|p])`, e.g. `linear(30,570,64)` or
/// `step(25,444,64,22)`. This is the form accepted in config files and on
/// the command line.
impl fmt::Display for ImbalanceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({},{},{}", self.kind.name(), self.k_min, self.k_max, self.n_classes)?;
        match self.kind {
            ImbalanceKind::Step => write!(f, ",{}", self.m_minority.unwrap_or(0))?,
            ImbalanceKind::Longtail => write!(f, ",{}", self.power.unwrap_or(10.0))?,
            _ => {}
        }
        write!(f, ")")
    }
}

impl FromStr for ImbalanceSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("imbalance spec {text:?}: {msg}"));
        let text = text.trim();
        let open = text.find('(').ok_or_else(|| bad("expected kind(args)"))?;
        if !text.ends_with(')') {
            return Err(bad("expected closing parenthesis"));
        }
        let kind = &text[..open];
        let args: Vec<&str> = text[open + 1..text.len() - 1]
            .split(',')
            .map(str::trim)
            .collect();
        let int = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| bad(&format!("not an integer: {s:?}")))
        };
        if args.len() < 3 {
            return Err(bad("expected at least k_min,k_max,n"));
        }
        let (k_min, k_max, n) = (int(args[0])?, int(args[1])?, int(args[2])?);
        let spec = match kind {
            "balanced" => {
                if args.len() != 3 {
                    return Err(bad("balanced takes exactly 3 arguments"));
                }
                ImbalanceSpec {
                    kind: ImbalanceKind::Balanced,
                    k_min,
                    k_max,
                    n_classes: n,
                    m_minority: None,
                    power: None,
                }
            }
            "linear" => {
                if args.len() != 3 {
                    return Err(bad("linear takes exactly 3 arguments"));
                }
                ImbalanceSpec::linear(k_min, k_max, n)
            }
            "step" => {
                if args.len() != 4 {
                    return Err(bad("step takes exactly 4 arguments"));
                }
                ImbalanceSpec::step(k_min, k_max, n, int(args[3])?)
            }
            "longtail" => {
                let power = match args.len() {
                    3 => 10.0,
                    4 => args[3]
                        .parse()
                        .map_err(|_| bad(&format!("not a number: {:?}", args[3])))?,
                    _ => return Err(bad("longtail takes 3 or 4 arguments")),
                };
                ImbalanceSpec::longtail(k_min, k_max, n, power)
            }
            other => return Err(bad(&format!("unknown kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Per-class sample counts, in class-index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeProfile {
    sizes: Vec<usize>,
}

impl SizeProfile {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn into_sizes(self) -> Vec<usize> {
        self.sizes
    }
}

/// Round to nearest, ties away from zero (this is `f64::round` semantics).
fn round_half_away(x: f64) -> usize {
    x.round() as usize
}

/// Linearly interpolated class sizes:
/// `K_i = round(k_min - c + (i-1) * (k_max + 2c - k_min) / (n-1))` with
/// `c = 0.499`. Endpoints land exactly on `k_min` and `k_max`.
///
/// A one-class spec degenerates to `[k_max]`; the harness never produces it
/// but the generator stays total.
pub fn linear_sizes(spec: &ImbalanceSpec) -> Result<SizeProfile> {
    spec.validate()?;
    let n = spec.n_classes;
    if n == 1 {
        return Ok(SizeProfile {
            sizes: vec![spec.k_max],
        });
    }
    let k_min = spec.k_min as f64;
    let k_max = spec.k_max as f64;
    let slope = (k_max + 2.0 * LINEAR_C - k_min) / (n as f64 - 1.0);
    let sizes = (0..n)
        .map(|i| round_half_away(k_min - LINEAR_C + i as f64 * slope))
        .collect();
    Ok(SizeProfile { sizes })
}

/// Two-plateau profile: the first `m_minority` classes get `k_min`, the
/// rest get `k_max`.
pub fn step_sizes(spec: &ImbalanceSpec) -> Result<SizeProfile> {
    spec.validate()?;
    let m = spec.m_minority.unwrap_or(0);
    let mut sizes = vec![spec.k_min; m];
    sizes.resize(spec.n_classes, spec.k_max);
    Ok(SizeProfile { sizes })
}

/// Power-law profile: `K_i = round(k_min + (k_max - k_min) * ((i-1)/(n-1))^p)`.
///
/// With (20, 1300, 900, p=10) this lands on the usual long-tail anchors:
/// mean class size ~137, max/min ratio exactly 65, and the top 20% of
/// classes holding ~80% of all samples.
pub fn longtail_sizes(spec: &ImbalanceSpec) -> Result<SizeProfile> {
    spec.validate()?;
    let n = spec.n_classes;
    if n == 1 {
        return Ok(SizeProfile {
            sizes: vec![spec.k_max],
        });
    }
    let k_min = spec.k_min as f64;
    let range = spec.k_max as f64 - k_min;
    let power = spec.power.unwrap_or(10.0);
    let sizes = (0..n)
        .map(|i| {
            let t = i as f64 / (n as f64 - 1.0);
            round_half_away(k_min + range * t.powf(power))
        })
        .collect();
    Ok(SizeProfile { sizes })
}

/// Imbalance ratio: largest class size over smallest class size.
pub fn imbalance_ratio(profile: &SizeProfile) -> f64 {
    let max = profile.sizes.iter().copied().max().unwrap_or(0);
    let min = profile.sizes.iter().copied().min().unwrap_or(0);
    max as f64 / min as f64
}
