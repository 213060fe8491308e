use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, sub, Vec3};
use crate::volume::LandmarkSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreStats {
    pub mean_mm: f64,
    /// Population standard deviation.
    pub std_mm: f64,
    pub per_point_mm: Vec<f64>,
}

/// Point-wise Euclidean errors; the two sets must be aligned by index.
pub fn tre(est: &LandmarkSet, gt: &LandmarkSet) -> Result<TreStats> {
    if est.len() != gt.len() {
        return Err(Error::Contract(format!(
            "{} estimated landmarks vs {} ground-truth landmarks",
            est.len(),
            gt.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Contract("no landmarks to compare".into()));
    }
    let per_point_mm: Vec<f64> = est
        .points
        .iter()
        .zip(&gt.points)
        .map(|(a, b)| norm(sub(*a, *b)))
        .collect();
    let n = per_point_mm.len() as f64;
    let mean_mm = per_point_mm.iter().sum::<f64>() / n;
    let var = per_point_mm.iter().map(|e| (e - mean_mm).powi(2)).sum::<f64>() / n;
    Ok(TreStats {
        mean_mm,
        std_mm: var.sqrt(),
        per_point_mm,
    })
}

/// Fraction of runs whose mean error exceeds `threshold_mm`.
pub fn failure_rate(mean_tre_mm: &[f64], threshold_mm: f64) -> f64 {
    if mean_tre_mm.is_empty() {
        return 0.0;
    }
    // NaN means never counts as success
    let failed = mean_tre_mm.iter().filter(|&&m| !(m <= threshold_mm)).count();
    failed as f64 / mean_tre_mm.len() as f64
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Coordinate-wise median across seeds for every landmark.
pub fn propagation_consensus(trajectories: &[LandmarkSet]) -> Result<LandmarkSet> {
    if trajectories.len() < 3 {
        return Err(Error::Contract(format!(
            "consensus needs at least 3 runs, got {}",
            trajectories.len()
        )));
    }
    let n = trajectories[0].len();
    if trajectories.iter().any(|t| t.len() != n) {
        return Err(Error::Contract("runs have different landmark counts".into()));
    }
    let points = (0..n)
        .map(|i| {
            std::array::from_fn(|k| {
                let mut c: Vec<f64> = trajectories.iter().map(|t| t.points[i][k]).collect();
                median(&mut c)
            })
        })
        .collect::<Vec<Vec3>>();
    Ok(LandmarkSet {
        points,
        labels: trajectories[0].labels.clone(),
    })
}

/// Per run: median point-to-consensus distance within each landmark group,
/// averaged over groups. `groups[i]` is the group of landmark `i`; `None`
/// puts every landmark in one group.
pub fn propagation_discrepancy(
    trajectories: &[LandmarkSet],
    consensus: &LandmarkSet,
    groups: Option<&[usize]>,
) -> Result<Vec<f64>> {
    let n = consensus.len();
    if let Some(g) = groups {
        if g.len() != n {
            return Err(Error::Contract("one group id per landmark required".into()));
        }
    }
    let mut ids: Vec<usize> = groups.map(|g| g.to_vec()).unwrap_or_else(|| vec![0; n]);
    let group_of = ids.clone();
    ids.sort_unstable();
    ids.dedup();
    trajectories
        .iter()
        .map(|t| {
            if t.len() != n {
                return Err(Error::Contract("run and consensus differ in landmark count".into()));
            }
            let d: Vec<f64> = t
                .points
                .iter()
                .zip(&consensus.points)
                .map(|(a, b)| norm(sub(*a, *b)))
                .collect();
            let per_group: Vec<f64> = ids
                .iter()
                .map(|&g| {
                    let mut v: Vec<f64> = d
                        .iter()
                        .zip(&group_of)
                        .filter(|(_, &gi)| gi == g)
                        .map(|(x, _)| *x)
                        .collect();
                    median(&mut v)
                })
                .collect();
            Ok(per_group.iter().sum::<f64>() / per_group.len() as f64)
        })
        .collect()
}

/// Pearson correlation between uncertainty and error.
pub fn uncertainty_correlation(uncertainty_mm: &[f64], error_mm: &[f64]) -> Result<f64> {
    if uncertainty_mm.len() != error_mm.len() {
        return Err(Error::Contract("uncertainty and error lengths differ".into()));
    }
    if uncertainty_mm.len() < 3 {
        return Err(Error::Contract("correlation needs at least 3 pairs".into()));
    }
    let n = uncertainty_mm.len() as f64;
    let mu = uncertainty_mm.iter().sum::<f64>() / n;
    let me = error_mm.iter().sum::<f64>() / n;
    let (mut suu, mut see, mut sue) = (0.0, 0.0, 0.0);
    for (u, e) in uncertainty_mm.iter().zip(error_mm) {
        suu += (u - mu) * (u - mu);
        see += (e - me) * (e - me);
        sue += (u - mu) * (e - me);
    }
    if suu == 0.0 || see == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the inputs has zero variance".into(),
        ));
    }
    Ok(sue / (suu * see).sqrt())
}

/// Whether a single threshold on `score` puts every positive above every
/// negative; returns the midpoint threshold if so.
pub fn separating_threshold(positive: &[f64], negative: &[f64]) -> Option<f64> {
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = negative.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo > hi).then_some((lo + hi) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(points: Vec<Vec3>) -> LandmarkSet {
        LandmarkSet::new(points)
    }

    #[test]
    fn tre_examples() {
        let a = set(vec![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]]);
        assert_eq!(tre(&a, &a).unwrap().mean_mm, 0.0);
        let b = set(vec![[0.0, 0.0, 0.0]]);
        let c = set(vec![[3.0, 4.0, 0.0]]);
        assert_eq!(tre(&c, &b).unwrap().mean_mm, 5.0);
        let swapped = set(vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        assert!(tre(&swapped, &a).unwrap().mean_mm > 0.0);
        assert!(tre(&a, &b).is_err());
        let s = tre(&set(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]), &set(vec![[0.0; 3]; 2])).unwrap();
        assert_eq!((s.mean_mm, s.std_mm), (2.0, 1.0));
    }

    #[test]
    fn failure_rate_examples() {
        assert_eq!(failure_rate(&[1.0; 10], 2.0), 0.0);
        let mut means = vec![1.0; 50];
        means[7] = 2.5;
        assert_eq!(failure_rate(&means, 2.0), 0.02);
        assert_eq!(failure_rate(&[f64::NAN, 1.0], 2.0), 0.5);
    }

    proptest! {
        #[test]
        fn failure_rate_bounded_and_monotone(
            means in proptest::collection::vec(0.0f64..10.0, 1..40),
            t1 in 0.0f64..10.0,
            dt in 0.0f64..5.0,
        ) {
            let a = failure_rate(&means, t1);
            let b = failure_rate(&means, t1 + dt);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b <= a);
        }
    }

    #[test]
    fn consensus_examples() {
        let one = set(vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let copies = vec![one.clone(); 4];
        assert_eq!(propagation_consensus(&copies).unwrap(), one);
        let runs: Vec<LandmarkSet> = [0.0, 1.0, 2.0, 3.0, 100.0]
            .iter()
            .map(|&x| set(vec![[x, 0.0, 0.0]]))
            .collect();
        assert_eq!(propagation_consensus(&runs).unwrap().points[0], [2.0, 0.0, 0.0]);
        let mut outlier = runs.clone();
        outlier[4] = set(vec![[1e6, 0.0, 0.0]]);
        assert_eq!(propagation_consensus(&outlier).unwrap(), propagation_consensus(&runs).unwrap());
        assert!(propagation_consensus(&runs[..2]).is_err());
    }

    #[test]
    fn discrepancy_examples() {
        let c = set(vec![[0.0; 3], [5.0, 5.0, 5.0], [1.0, 0.0, 0.0]]);
        let shifted = set(c.points.iter().map(|p| [p[0], p[1] + 1.0, p[2]]).collect());
        let d = propagation_discrepancy(&[c.clone(), shifted], &c, None).unwrap();
        assert_eq!(d, vec![0.0, 1.0]);
        // groups: medians 1 (group 0 of two points at distance 1) and 3
        let mut far = shifted_points(&c, 1.0);
        far.points[2] = [4.0, 0.0, 0.0];
        let d = propagation_discrepancy(&[far], &c, Some(&[0, 0, 1])).unwrap();
        assert_eq!(d, vec![2.0]);
    }

    fn shifted_points(c: &LandmarkSet, dy: f64) -> LandmarkSet {
        set(c.points.iter().map(|p| [p[0], p[1] + dy, p[2]]).collect())
    }

    #[test]
    fn correlation_examples() {
        let u = [1.0, 2.0, 3.0, 4.0];
        assert!((uncertainty_correlation(&u, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((uncertainty_correlation(&u, &[-1.0, -2.0, -3.0, -4.0]).unwrap() + 1.0).abs() < 1e-15);
        // hand formula: u = (1,2,3,4,5), e = (2,1,4,3,6)
        // means 3 and 3.2; cov sum = 10; var sums 10 and 14.8
        let r = uncertainty_correlation(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 6.0]).unwrap();
        assert!((r - 10.0 / (10.0f64 * 14.8).sqrt()).abs() < 1e-14);
        assert!(matches!(
            uncertainty_correlation(&[1.0; 4], &[1.0, 2.0, 3.0, 4.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(uncertainty_correlation(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn separation() {
        assert_eq!(separating_threshold(&[5.0, 6.0], &[1.0, 2.0]), Some(3.5));
        assert_eq!(separating_threshold(&[5.0, 1.5], &[1.0, 2.0]), None);
    }
}
