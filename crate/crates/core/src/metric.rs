//! Distances, the Gaussian radial-basis mapping, triplet loss and semi-hard
//! triplet mining.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on vector norms in the cosine denominator, so that a zero
/// embedding sits at distance 1 from everything.
pub const COSINE_EPS: f64 = 1e-12;

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn guarded_norm_sq(x: &[f64]) -> f64 {
    dot(x, x).max(COSINE_EPS * COSINE_EPS)
}

/// `1 - x.y / (max(|x|, eps) * max(|y|, eps))`, clamped below at 0.
///
/// For non-negative inputs the result lies in `[0, 1]`; identical non-zero
/// vectors give exactly 0.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "cosine_distance: dimension mismatch");
    // sqrt(a * a) == a exactly in IEEE arithmetic, so x == y yields cos == 1.
    let denom = (guarded_norm_sq(x) * guarded_norm_sq(y)).sqrt();
    (1.0 - dot(x, y) / denom).max(0.0)
}

/// Cosine distance together with its gradients with respect to `x` and `y`.
pub fn cosine_distance_grad(x: &[f64], y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    assert_eq!(x.len(), y.len(), "cosine_distance: dimension mismatch");
    let nx2 = dot(x, x);
    let ny2 = dot(y, y);
    let gx2 = nx2.max(COSINE_EPS * COSINE_EPS);
    let gy2 = ny2.max(COSINE_EPS * COSINE_EPS);
    let denom = (gx2 * gy2).sqrt();
    let cos = dot(x, y) / denom;
    let d = 1.0 - cos;
    if d < 0.0 {
        return (0.0, vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    // Norm terms only vary with the input when the eps guard is inactive.
    let kx = if nx2 > COSINE_EPS * COSINE_EPS { cos / gx2 } else { 0.0 };
    let ky = if ny2 > COSINE_EPS * COSINE_EPS { cos / gy2 } else { 0.0 };
    let dx = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| -(yi / denom - kx * xi))
        .collect();
    let dy = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| -(xi / denom - ky * yi))
        .collect();
    (d, dx, dy)
}

pub fn euclidean_distance(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "euclidean_distance: dimension mismatch");
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Whether the Gaussian exponent uses the distance itself or its square.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMapping {
    #[default]
    Linear,
    Squared,
}

/// `exp(-distance / (2 sigma^2))`.
pub fn gaussian_rbf(distance: f64, sigma: f64) -> Result<f64> {
    gaussian_rbf_with(distance, sigma, DistanceMapping::Linear)
}

pub fn gaussian_rbf_with(distance: f64, sigma: f64, mapping: DistanceMapping) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "RBF bandwidth must be positive, got {sigma}"
        )));
    }
    if !(distance >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "RBF distance must be non-negative, got {distance}"
        )));
    }
    let d = match mapping {
        DistanceMapping::Linear => distance,
        DistanceMapping::Squared => distance * distance,
    };
    Ok((-d / (2.0 * sigma * sigma)).exp())
}

/// Default bandwidth: `2 sigma^2 = 1`, so the kernel output is `exp(-d)`.
pub const DEFAULT_SIGMA: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Triplet-loss margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Margin(f64);

impl Margin {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidArgument(format!(
                "margin must be positive, got {alpha}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Margin {
    fn default() -> Self {
        Self(0.3)
    }
}

impl TryFrom<f64> for Margin {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Margin::new(v)
    }
}

impl From<Margin> for f64 {
    fn from(m: Margin) -> f64 {
        m.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a> {
    pub anchor: &'a [f64],
    pub positive: &'a [f64],
    pub negative: &'a [f64],
}

impl<'a> Triplet<'a> {
    pub fn new(anchor: &'a [f64], positive: &'a [f64], negative: &'a [f64]) -> Result<Self> {
        if anchor.len() != positive.len() || anchor.len() != negative.len() {
            return Err(Error::InvalidArgument(format!(
                "triplet dimensions differ: {}, {}, {}",
                anchor.len(),
                positive.len(),
                negative.len()
            )));
        }
        Ok(Self {
            anchor,
            positive,
            negative,
        })
    }
}

/// `max(0, d_ap + alpha - d_an)`.
pub fn hinge(d_ap: f64, d_an: f64, margin: Margin) -> f64 {
    (d_ap + margin.0 - d_an).max(0.0)
}

/// Triplet loss with cosine distance.
pub fn triplet_loss(t: &Triplet<'_>, margin: Margin) -> f64 {
    hinge(
        cosine_distance(t.anchor, t.positive),
        cosine_distance(t.anchor, t.negative),
        margin,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Triplet loss and its gradient with respect to each embedding. The gradient
/// is zero whenever the hinge is inactive, including at exactly zero loss.
pub fn triplet_loss_grad(t: &Triplet<'_>, margin: Margin) -> TripletGrad {
    let (d_ap, ga_p, gp) = cosine_distance_grad(t.anchor, t.positive);
    let (d_an, ga_n, gn) = cosine_distance_grad(t.anchor, t.negative);
    let loss = hinge(d_ap, d_an, margin);
    let dim = t.anchor.len();
    if loss <= 0.0 {
        return TripletGrad {
            loss: 0.0,
            anchor: vec![0.0; dim],
            positive: vec![0.0; dim],
            negative: vec![0.0; dim],
        };
    }
    TripletGrad {
        loss,
        anchor: ga_p.iter().zip(&ga_n).map(|(p, n)| p - n).collect(),
        positive: gp,
        negative: gn.into_iter().map(|g| -g).collect(),
    }
}

/// How a mined negative relates to its positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeKind {
    /// `d_ap < d_an < d_ap + alpha`
    SemiHard,
    /// No band negative; nearest negative beyond the positive.
    BeyondBand,
    /// Every negative is at or inside `d_ap`; the farthest one.
    Farthest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinedTriplet {
    pub positive: usize,
    pub negative: usize,
    pub d_ap: f64,
    pub d_an: f64,
    pub kind: NegativeKind,
}

/// Selects one negative per positive from precomputed anchor distances.
///
/// Preference order: the nearest negative inside the semi-hard band, then the
/// nearest negative beyond `d_ap`, then the farthest negative. Ties go to the
/// lowest candidate index.
pub fn mine_semi_hard_distances(
    d_ap: &[f64],
    d_an: &[f64],
    margin: Margin,
) -> Result<Vec<MinedTriplet>> {
    if d_ap.is_empty() {
        return Err(Error::EmptyCandidates("no positive candidates"));
    }
    if d_an.is_empty() {
        return Err(Error::EmptyCandidates("no negative candidates"));
    }
    let alpha = margin.value();
    Ok(d_ap
        .iter()
        .enumerate()
        .map(|(pi, &dp)| {
            let mut nearest_beyond: Option<usize> = None;
            let mut farthest = 0;
            for (ni, &dn) in d_an.iter().enumerate() {
                if dn > dp && nearest_beyond.is_none_or(|b| dn < d_an[b]) {
                    nearest_beyond = Some(ni);
                }
                if dn > d_an[farthest] {
                    farthest = ni;
                }
            }
            let (negative, kind) = match nearest_beyond {
                Some(ni) if d_an[ni] < dp + alpha => (ni, NegativeKind::SemiHard),
                Some(ni) => (ni, NegativeKind::BeyondBand),
                None => (farthest, NegativeKind::Farthest),
            };
            MinedTriplet {
                positive: pi,
                negative,
                d_ap: dp,
                d_an: d_an[negative],
                kind,
            }
        })
        .collect())
}

/// Semi-hard mining over embeddings using cosine distance to `anchor`.
pub fn mine_semi_hard<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    anchor: &[f64],
    positives: &[P],
    negatives: &[N],
    margin: Margin,
) -> Result<Vec<MinedTriplet>> {
    let d_ap: Vec<f64> = positives
        .iter()
        .map(|p| cosine_distance(anchor, p.as_ref()))
        .collect();
    let d_an: Vec<f64> = negatives
        .iter()
        .map(|n| cosine_distance(anchor, n.as_ref()))
        .collect();
    mine_semi_hard_distances(&d_ap, &d_an, margin)
}
