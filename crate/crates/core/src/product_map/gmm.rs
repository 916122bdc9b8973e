//! Two-component 1-D Gaussian mixture for separating foreground from background depth.

use super::MapError;

pub const MIN_DEPTH_SAMPLES: usize = 8;
const MAX_ITERATIONS: usize = 100;
const LOG_LIKELIHOOD_TOL: f64 = 1e-6;
/// Component means closer than this are treated as one mode.
const UNIMODAL_SEPARATION: f64 = 0.05;
const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mixture {
    /// Ordered by mean, nearer first.
    pub components: [Component; 2],
    pub log_likelihood: f64,
    pub iterations: usize,
}

fn log_normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / variance + (2.0 * std::f64::consts::PI * variance).ln())
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    percentile(&s, 0.5)
}

pub fn mixture_log_likelihood(samples: &[f64], comps: &[Component; 2]) -> f64 {
    samples
        .iter()
        .map(|&x| {
            log_sum_exp(
                comps[0].weight.ln() + log_normal_pdf(x, comps[0].mean, comps[0].variance),
                comps[1].weight.ln() + log_normal_pdf(x, comps[1].mean, comps[1].variance),
            )
        })
        .sum()
}

/// Fit by EM, seeded with means at the 25th and 75th percentiles and a
/// nearest-mean split for the initial weights and variances.
pub fn fit_two_component(samples: &[f64]) -> Result<Mixture, MapError> {
    if samples.len() < MIN_DEPTH_SAMPLES {
        return Err(MapError::InsufficientSamples(samples.len()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(MapError::NonFiniteDepth);
    }
    let n = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let means = [percentile(&sorted, 0.25), percentile(&sorted, 0.75)];
    let overall_var = {
        let m = samples.iter().sum::<f64>() / n;
        (samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR)
    };

    let mut comps = {
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        let mut cnt = [0.0; 2];
        for &x in samples {
            let k = ((x - means[1]).abs() < (x - means[0]).abs()) as usize;
            sum[k] += x;
            sq[k] += x * x;
            cnt[k] += 1.0;
        }
        std::array::from_fn(|k| {
            if cnt[k] == 0.0 {
                Component {
                    weight: 0.5,
                    mean: means[k],
                    variance: overall_var,
                }
            } else {
                let m = sum[k] / cnt[k];
                Component {
                    weight: cnt[k] / n,
                    mean: m,
                    variance: (sq[k] / cnt[k] - m * m).max(VARIANCE_FLOOR),
                }
            }
        })
    };

    let mut ll = mixture_log_likelihood(samples, &comps);
    let mut iterations = 0;
    let mut resp = vec![0.0; samples.len()];
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        // E step: responsibility of component 1
        for (r, &x) in resp.iter_mut().zip(samples) {
            let a = comps[0].weight.ln() + log_normal_pdf(x, comps[0].mean, comps[0].variance);
            let b = comps[1].weight.ln() + log_normal_pdf(x, comps[1].mean, comps[1].variance);
            *r = (b - log_sum_exp(a, b)).exp();
        }
        // M step
        let n1: f64 = resp.iter().sum();
        let n0 = n - n1;
        if n0 < 1e-12 || n1 < 1e-12 {
            break;
        }
        let m0 = samples
            .iter()
            .zip(&resp)
            .map(|(x, r)| (1.0 - r) * x)
            .sum::<f64>()
            / n0;
        let m1 = samples.iter().zip(&resp).map(|(x, r)| r * x).sum::<f64>() / n1;
        let v0 = samples
            .iter()
            .zip(&resp)
            .map(|(x, r)| (1.0 - r) * (x - m0).powi(2))
            .sum::<f64>()
            / n0;
        let v1 = samples
            .iter()
            .zip(&resp)
            .map(|(x, r)| r * (x - m1).powi(2))
            .sum::<f64>()
            / n1;
        comps = [
            Component {
                weight: n0 / n,
                mean: m0,
                variance: v0.max(VARIANCE_FLOOR),
            },
            Component {
                weight: n1 / n,
                mean: m1,
                variance: v1.max(VARIANCE_FLOOR),
            },
        ];
        let next = mixture_log_likelihood(samples, &comps);
        let done = (next - ll).abs() < LOG_LIKELIHOOD_TOL;
        ll = next;
        if done {
            break;
        }
    }
    if comps[1].mean < comps[0].mean {
        comps.swap(0, 1);
    }
    Ok(Mixture {
        components: comps,
        log_likelihood: ll,
        iterations,
    })
}

/// Depth of the foreground object in a bounding box: the nearer mixture mean, or the
/// median when the two modes are not separated. Never farther than the median.
pub fn foreground_depth(samples: &[f64]) -> Result<f64, MapError> {
    let mix = fit_two_component(samples)?;
    let med = median(samples);
    let [near, far] = mix.components;
    if far.mean - near.mean < UNIMODAL_SEPARATION {
        return Ok(med);
    }
    Ok(near.mean.min(med))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn bimodal(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(0.5, 0.02).unwrap();
        let b = Normal::new(1.2, 0.02).unwrap();
        let mut v: Vec<f64> = (0..50).map(|_| a.sample(&mut rng)).collect();
        v.extend((0..50).map(|_| b.sample(&mut rng)));
        v
    }

    #[test]
    fn bimodal_recovers_foreground() {
        for seed in 0..100 {
            let d = foreground_depth(&bimodal(seed)).unwrap();
            assert!((d - 0.5).abs() < 0.01, "seed {seed}: {d}");
        }
    }

    /// Grid search over the two means with the other parameters at their EM values.
    #[test]
    fn em_means_match_grid_search_oracle() {
        let xs = bimodal(7);
        let mix = fit_two_component(&xs).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=200 {
            for j in 0..=200 {
                let m0 = 0.45 + i as f64 * 0.0005;
                let m1 = 1.15 + j as f64 * 0.0005;
                let mut c = mix.components;
                c[0].mean = m0;
                c[1].mean = m1;
                let ll = mixture_log_likelihood(&xs, &c);
                if ll > best.0 {
                    best = (ll, m0, m1);
                }
            }
        }
        assert!((mix.components[0].mean - best.1).abs() < 0.001);
        assert!((mix.components[1].mean - best.2).abs() < 0.001);
        assert!(mix.log_likelihood >= best.0 - 1e-6);
    }

    #[test]
    fn constant_samples_return_median() {
        assert_eq!(foreground_depth(&[0.75; 20]).unwrap(), 0.75);
    }

    #[test]
    fn unimodal_returns_median_exactly() {
        let xs: Vec<f64> = (0..41).map(|i| 0.9 + (i as f64 - 20.0) * 0.001).collect();
        assert_eq!(foreground_depth(&xs).unwrap(), median(&xs));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            foreground_depth(&[1.0; 7]),
            Err(MapError::InsufficientSamples(7))
        ));
    }

    proptest! {
        #[test]
        fn never_farther_than_median(xs in proptest::collection::vec(0.2f64..3.0, 8..60)) {
            let d = foreground_depth(&xs).unwrap();
            prop_assert!(d <= median(&xs) + 1e-12);
        }
    }
}
