//! Parametric densities on ℝ^r used both as integrand factors and as
//! importance proposals.
//!
//! A [`Density`] is an immutable value; adaptation builds new values rather
//! than mutating old ones. Serialization goes through [`DensitySpec`], the
//! `{"family", "params", "support"}` JSON shape.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::error::{bail, Error, Result};
use crate::normal;

/// Θ or Θ_i: either all of ℝ^r or a closed box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportRegion {
    AllOfRr { dim: usize },
    Box(BoxDomain),
}

impl SupportRegion {
    pub fn dim(&self) -> usize {
        match self {
            SupportRegion::AllOfRr { dim } => *dim,
            SupportRegion::Box(b) => b.dim(),
        }
    }

    /// Closed membership test; errors on dimension mismatch.
    pub fn contains(&self, theta: &[f64]) -> Result<bool> {
        if theta.len() != self.dim() {
            bail!(Input, "point has dimension {} but support has dimension {}", theta.len(), self.dim());
        }
        Ok(self.contains_unchecked(theta))
    }

    #[inline]
    pub fn contains_unchecked(&self, theta: &[f64]) -> bool {
        match self {
            SupportRegion::AllOfRr { .. } => true,
            SupportRegion::Box(b) => b.contains(theta),
        }
    }

    /// Whether `other` ⊂ `self`.
    pub fn covers(&self, other: &SupportRegion) -> bool {
        match (self, other) {
            (SupportRegion::AllOfRr { dim }, o) => *dim == o.dim(),
            (SupportRegion::Box(_), SupportRegion::AllOfRr { .. }) => false,
            (SupportRegion::Box(a), SupportRegion::Box(b)) => {
                a.dim() == b.dim()
                    && a.lo.iter().zip(&b.lo).all(|(x, y)| x <= y)
                    && a.hi.iter().zip(&b.hi).all(|(x, y)| x >= y)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Family {
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
    UniformBox { bounds: BoxDomain, inv_volume: f64 },
    TruncatedGaussian { mean: Vec<f64>, sd: Vec<f64>, bounds: BoxDomain, mass: Vec<f64> },
    Mixture { weights: Vec<f64>, components: Vec<Density> },
}

/// A validated probability density with diagonal structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    family: Family,
    support: SupportRegion,
}

fn check_scales(mean: &[f64], sd: &[f64]) -> Result<()> {
    if mean.is_empty() || mean.len() != sd.len() {
        bail!(Input, "mean and sd must be nonempty and of equal length");
    }
    if mean.iter().any(|m| !m.is_finite()) {
        bail!(Input, "non-finite mean {mean:?}");
    }
    if sd.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        bail!(Input, "scale parameters must be finite and strictly positive, got {sd:?}");
    }
    Ok(())
}

/// Probability mass of N(0,1) on [a, b], accurate in either tail.
fn standard_mass(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        normal::sf(a) - normal::sf(b)
    } else {
        normal::cdf(b) - normal::cdf(a)
    }
}

fn sample_standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a > 0.0 {
        return -sample_standard_truncated(-b, -a, rng);
    }
    let (pa, pb) = (normal::cdf(a), normal::cdf(b));
    let u: f64 = rng.random();
    let p = pa + u * (pb - pa);
    let z = if p <= 0.0 || p >= 1.0 { if u < 0.5 { a } else { b } } else { normal::quantile(p) };
    z.clamp(a, b)
}

impl Density {
    pub fn gaussian(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        check_scales(&mean, &sd)?;
        let dim = mean.len();
        Ok(Self { family: Family::Gaussian { mean, sd }, support: SupportRegion::AllOfRr { dim } })
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        Self::gaussian(vec![0.0; dim], vec![1.0; dim]).expect("valid standard gaussian")
    }

    pub fn uniform_box(bounds: BoxDomain) -> Result<Self> {
        bounds.validate()?;
        let inv_volume = 1.0 / bounds.volume();
        Ok(Self { support: SupportRegion::Box(bounds.clone()), family: Family::UniformBox { bounds, inv_volume } })
    }

    /// Gaussian restricted to `bounds` and renormalized by its mass there.
    pub fn truncated_gaussian(mean: Vec<f64>, sd: Vec<f64>, bounds: BoxDomain) -> Result<Self> {
        check_scales(&mean, &sd)?;
        bounds.validate()?;
        if bounds.dim() != mean.len() {
            bail!(Input, "truncation box has dimension {} but mean has {}", bounds.dim(), mean.len());
        }
        let mut mass = Vec::with_capacity(mean.len());
        for k in 0..mean.len() {
            let a = (bounds.lo[k] - mean[k]) / sd[k];
            let b = (bounds.hi[k] - mean[k]) / sd[k];
            let m = standard_mass(a, b);
            if !(m > 0.0) {
                bail!(Domain, "truncated gaussian has no representable mass on dimension {k}");
            }
            mass.push(m);
        }
        Ok(Self {
            support: SupportRegion::Box(bounds.clone()),
            family: Family::TruncatedGaussian { mean, sd, bounds, mass },
        })
    }

    /// Finite mixture; weights must be nonnegative and sum to 1 within 1e-12.
    pub fn mixture(weights: Vec<f64>, components: Vec<Density>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            bail!(Input, "mixture needs one weight per component");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            bail!(Input, "mixture weights must be nonnegative, got {weights:?}");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            bail!(Input, "mixture weights sum to {total}, not 1");
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            bail!(Input, "mixture components disagree on dimension");
        }
        let support = if components.iter().any(|c| matches!(c.support, SupportRegion::AllOfRr { .. })) {
            SupportRegion::AllOfRr { dim }
        } else {
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for c in &components {
                if let SupportRegion::Box(b) = &c.support {
                    for k in 0..dim {
                        lo[k] = lo[k].min(b.lo[k]);
                        hi[k] = hi[k].max(b.hi[k]);
                    }
                }
            }
            SupportRegion::Box(BoxDomain { lo, hi })
        };
        Ok(Self { family: Family::Mixture { weights, components }, support })
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn support(&self) -> &SupportRegion {
        &self.support
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Gaussian { .. } => "gaussian",
            Family::UniformBox { .. } => "uniform_box",
            Family::TruncatedGaussian { .. } => "truncated_gaussian",
            Family::Mixture { .. } => "mixture",
        }
    }

    /// Location and scale for the gaussian families.
    pub fn location_scale(&self) -> Option<(&[f64], &[f64])> {
        match &self.family {
            Family::Gaussian { mean, sd } | Family::TruncatedGaussian { mean, sd, .. } => Some((mean, sd)),
            _ => None,
        }
    }

    /// Exact pdf value; zero outside the support.
    pub fn evaluate(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            bail!(Input, "point has dimension {} but density has dimension {}", theta.len(), self.dim());
        }
        if theta.iter().any(|t| !t.is_finite()) {
            bail!(Input, "non-finite evaluation point {theta:?}");
        }
        Ok(self.pdf(theta))
    }

    /// Unchecked [`Density::evaluate`] for hot loops; the caller guarantees
    /// dimension and finiteness.
    #[inline]
    pub fn pdf(&self, theta: &[f64]) -> f64 {
        match &self.family {
            Family::Gaussian { mean, sd } => {
                let mut p = 1.0;
                for k in 0..mean.len() {
                    p *= normal::pdf((theta[k] - mean[k]) / sd[k]) / sd[k];
                }
                p
            }
            Family::UniformBox { bounds, inv_volume } => {
                if bounds.contains(theta) {
                    *inv_volume
                } else {
                    0.0
                }
            }
            Family::TruncatedGaussian { mean, sd, bounds, mass } => {
                if !bounds.contains(theta) {
                    return 0.0;
                }
                let mut p = 1.0;
                for k in 0..mean.len() {
                    p *= normal::pdf((theta[k] - mean[k]) / sd[k]) / (sd[k] * mass[k]);
                }
                p
            }
            Family::Mixture { weights, components } => {
                weights.iter().zip(components).map(|(w, c)| if *w > 0.0 { w * c.pdf(theta) } else { 0.0 }).sum()
            }
        }
    }

    /// One draw; identical generator state gives identical draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.sample_into(rng, &mut out);
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        match &self.family {
            Family::Gaussian { mean, sd } => {
                for k in 0..mean.len() {
                    let z: f64 = rng.sample(StandardNormal);
                    out.push(mean[k] + sd[k] * z);
                }
            }
            Family::UniformBox { bounds, .. } => {
                for k in 0..bounds.dim() {
                    let u: f64 = rng.random();
                    let v = bounds.lo[k] + (bounds.hi[k] - bounds.lo[k]) * u;
                    out.push(v.min(bounds.hi[k]));
                }
            }
            Family::TruncatedGaussian { mean, sd, bounds, .. } => {
                for k in 0..mean.len() {
                    let a = (bounds.lo[k] - mean[k]) / sd[k];
                    let b = (bounds.hi[k] - mean[k]) / sd[k];
                    let z = sample_standard_truncated(a, b, rng);
                    out.push((mean[k] + sd[k] * z).clamp(bounds.lo[k], bounds.hi[k]));
                }
            }
            Family::Mixture { weights, components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = components.len() - 1;
                for (j, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = j;
                        break;
                    }
                }
                while weights[chosen] == 0.0 && chosen > 0 {
                    chosen -= 1;
                }
                components[chosen].sample_into(rng, out);
            }
        }
    }

    pub fn to_spec(&self) -> DensitySpec {
        match &self.family {
            Family::Gaussian { mean, sd } => DensitySpec {
                family: FamilyName::Gaussian,
                params: mean.iter().chain(sd).copied().collect(),
                support: Some(self.support.clone()),
                components: Vec::new(),
            },
            Family::UniformBox { .. } => DensitySpec {
                family: FamilyName::UniformBox,
                params: Vec::new(),
                support: Some(self.support.clone()),
                components: Vec::new(),
            },
            Family::TruncatedGaussian { mean, sd, .. } => DensitySpec {
                family: FamilyName::TruncatedGaussian,
                params: mean.iter().chain(sd).copied().collect(),
                support: Some(self.support.clone()),
                components: Vec::new(),
            },
            Family::Mixture { weights, components } => DensitySpec {
                family: FamilyName::Mixture,
                params: weights.clone(),
                support: Some(self.support.clone()),
                components: components.iter().map(Density::to_spec).collect(),
            },
        }
    }

    /// Flattened parameter vector (means then scales, or mixture weights
    /// followed by each component's parameters).
    pub fn params(&self) -> Vec<f64> {
        let spec = self.to_spec();
        let mut out = spec.params;
        for c in spec.components {
            out.extend(c.params);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Gaussian,
    UniformBox,
    TruncatedGaussian,
    #[serde(alias = "gaussian_mixture")]
    Mixture,
}

/// Serialized form of a [`Density`].
///
/// `params` holds `[means…, sds…]` for the gaussian families, nothing for
/// `uniform_box` (the box is the support) and the weights for `mixture`,
/// whose components are listed under `components`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub family: FamilyName,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<SupportRegion>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<DensitySpec>,
}

fn split_location_scale(params: &[f64], dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if params.len() != 2 * dim {
        bail!(Input, "expected {} params (means then sds) for dimension {dim}, got {}", 2 * dim, params.len());
    }
    Ok((params[..dim].to_vec(), params[dim..].to_vec()))
}

impl TryFrom<DensitySpec> for Density {
    type Error = Error;

    fn try_from(spec: DensitySpec) -> Result<Self> {
        match spec.family {
            FamilyName::Gaussian => {
                let dim = match &spec.support {
                    Some(SupportRegion::AllOfRr { dim }) => *dim,
                    None => spec.params.len() / 2,
                    Some(SupportRegion::Box(_)) => bail!(Input, "gaussian support must be all_of_rr"),
                };
                let (mean, sd) = split_location_scale(&spec.params, dim)?;
                Density::gaussian(mean, sd)
            }
            FamilyName::UniformBox => match spec.support {
                Some(SupportRegion::Box(b)) if spec.params.is_empty() => Density::uniform_box(b),
                Some(SupportRegion::Box(_)) => bail!(Input, "uniform_box takes no params"),
                _ => bail!(Input, "uniform_box requires a box support"),
            },
            FamilyName::TruncatedGaussian => match spec.support {
                Some(SupportRegion::Box(b)) => {
                    let (mean, sd) = split_location_scale(&spec.params, b.dim())?;
                    Density::truncated_gaussian(mean, sd, b)
                }
                _ => bail!(Input, "truncated_gaussian requires a box support"),
            },
            FamilyName::Mixture => {
                let components = spec.components.into_iter().map(Density::try_from).collect::<Result<Vec<_>>>()?;
                let d = Density::mixture(spec.params, components)?;
                if let Some(s) = spec.support {
                    if s != d.support {
                        bail!(Input, "declared mixture support {s:?} differs from the components' hull");
                    }
                }
                Ok(d)
            }
        }
    }
}

impl Serialize for Density {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_spec().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Density {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let spec = DensitySpec::deserialize(deserializer)?;
        Density::try_from(spec).map_err(serde::de::Error::custom)
    }
}
