use serde::{Deserialize, Serialize};

use super::kmeans::kmeans_cluster;
use crate::lor::mix_seed;
use crate::{Error, Result};

/// Knee of a decreasing SSE curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knee {
    pub k: usize,
    /// Distance below the endpoint chord after scaling both axes to `[0, 1]`.
    pub distance: f64,
}

/// Point of the curve farthest below the chord joining its endpoints, with
/// both axes scaled to `[0, 1]`. `None` when no point lies below the chord.
pub fn knee_of(curve: &[(usize, f64)]) -> Option<Knee> {
    let (&(k0, s0), &(k1, s1)) = (curve.first()?, curve.last()?);
    if k1 <= k0 {
        return None;
    }
    let span_y = s0 - s1;
    let best = curve
        .iter()
        .map(|&(k, s)| {
            let x = (k - k0) as f64 / (k1 - k0) as f64;
            let y = if span_y.abs() > 0.0 { (s - s1) / span_y } else { 0.0 };
            // chord runs from (0, 1) to (1, 0)
            (k, (1.0 - x - y) / std::f64::consts::SQRT_2)
        })
        .fold(None::<(usize, f64)>, |acc, cur| match acc {
            Some(a) if a.1 >= cur.1 => Some(a),
            _ => Some(cur),
        })?;
    (best.1 > 1e-9).then_some(Knee { k: best.0, distance: best.1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elbow {
    pub k: usize,
    /// Set when no knee exists and `k` fell back to the lower bound.
    pub no_knee: bool,
    pub coarse: Vec<(usize, f64)>,
    /// Interval re-swept at step 1.
    pub bracket: Option<(usize, usize)>,
    pub fine: Vec<(usize, f64)>,
}

fn grid(lo: usize, hi: usize, step: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (lo..=hi).step_by(step).collect();
    if *ks.last().unwrap() != hi {
        ks.push(hi);
    }
    ks
}

fn sweep<F: FnMut(usize) -> Result<f64>>(ks: &[usize], sse: &mut F) -> Result<Vec<(usize, f64)>> {
    if ks.len() < 3 {
        return Err(Error::InvalidArgument(format!("an elbow sweep needs at least 3 points, got {}", ks.len())));
    }
    ks.iter().map(|&k| Ok((k, sse(k)?))).collect()
}

/// Two-phase elbow search over any SSE function: sweep `[k_min, k_max]` at
/// `coarse_step`, take the knee, then re-sweep from the knee to the next
/// coarse point at step 1 and return that knee.
pub fn elbow_search_with<F>(k_min: usize, k_max: usize, coarse_step: usize, mut sse: F) -> Result<Elbow>
where
    F: FnMut(usize) -> Result<f64>,
{
    if k_min == 0 || k_min >= k_max {
        return Err(Error::InvalidArgument(format!("need 0 < k_min < k_max, got {k_min}..{k_max}")));
    }
    if coarse_step == 0 {
        return Err(Error::InvalidArgument("coarse step must be at least 1".into()));
    }
    let ks = grid(k_min, k_max, coarse_step);
    let coarse = sweep(&ks, &mut sse)?;
    let Some(knee) = knee_of(&coarse) else {
        log::warn!("SSE curve has no knee in {k_min}..={k_max}; using k = {k_min}");
        return Ok(Elbow { k: k_min, no_knee: true, coarse, bracket: None, fine: Vec::new() });
    };
    let mut result = Elbow { k: knee.k, no_knee: false, coarse, bracket: None, fine: Vec::new() };
    let pos = ks.iter().position(|&k| k == knee.k).unwrap();
    let upper = ks[pos + 1];
    if coarse_step == 1 || upper - knee.k < 2 {
        return Ok(result);
    }
    let fine = sweep(&(knee.k..=upper).collect::<Vec<_>>(), &mut sse)?;
    if let Some(f) = knee_of(&fine) {
        result.k = f.k;
    }
    result.bracket = Some((knee.k, upper));
    result.fine = fine;
    Ok(result)
}

/// Elbow search with k-means SSE on `features`.
pub fn elbow_search(features: &[Vec<f64>], k_min: usize, k_max: usize, coarse_step: usize, seed: u64, restarts: usize) -> Result<Elbow> {
    if k_max > features.len() {
        return Err(Error::InvalidArgument(format!("k_max {k_max} exceeds {} entries", features.len())));
    }
    elbow_search_with(k_min, k_max, coarse_step, |k| {
        Ok(kmeans_cluster(features, k, mix_seed(seed, k as u64), restarts)?.sse)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn linear_curve_has_no_knee() {
        let e = elbow_search_with(2, 12, 1, |k| Ok(100.0 - 5.0 * k as f64)).unwrap();
        assert!(e.no_knee);
        assert_eq!(e.k, 2);
        assert!(knee_of(&[(1, 3.0), (2, 2.0), (3, 1.0)]).is_none());
    }

    #[test]
    fn obvious_knee() {
        let curve: Vec<(usize, f64)> = [100.0, 40.0, 10.0, 8.0, 6.0, 4.0].iter().enumerate().map(|(i, &s)| (i + 1, s)).collect();
        assert_eq!(knee_of(&curve).unwrap().k, 3);
    }

    #[test]
    fn fine_phase_stays_in_coarse_bracket() {
        // knee near 430 on a 100-step grid from 100 to 1000
        let f = |k: usize| Ok(if k <= 430 { 1e6 - 2000.0 * k as f64 } else { 1e6 - 2000.0 * 430.0 - 10.0 * (k - 430) as f64 });
        let mut seen = Vec::new();
        let e = elbow_search_with(100, 1000, 100, |k| {
            seen.push(k);
            f(k)
        })
        .unwrap();
        assert_eq!(e.bracket, Some((400, 500)));
        assert!(e.fine.iter().all(|&(k, _)| (400..=500).contains(&k)));
        assert_eq!(e.fine.len(), 101);
        assert_eq!(e.k, 430);
        assert_eq!(&seen[..10], &[100, 200, 300, 400, 500, 600, 700, 800, 900, 1000]);
    }

    #[test]
    fn planted_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 0.4).unwrap();
        let centres = [[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [8.0, 8.0], [4.0, 14.0]];
        let pts: Vec<Vec<f64>> = centres
            .iter()
            .flat_map(|c| (0..20).map(|_| vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]).collect::<Vec<_>>())
            .collect();
        let e = elbow_search(&pts, 2, 12, 1, 3, 4).unwrap();
        assert!((4..=6).contains(&e.k), "{e:?}");
    }

    #[test]
    fn too_few_points() {
        assert!(elbow_search_with(2, 3, 1, |_| Ok(1.0)).is_err());
        assert!(elbow_search_with(5, 5, 1, |_| Ok(1.0)).is_err());
        assert!(elbow_search_with(2, 9, 0, |_| Ok(1.0)).is_err());
    }
}
