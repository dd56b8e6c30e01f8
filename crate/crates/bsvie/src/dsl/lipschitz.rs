//! Sampling-based estimation of the generator's Lipschitz constants in
//! `y`, `z`, and `zeta`.
//!
//! The estimate is the maximum difference quotient over sampled argument
//! pairs, so it is a lower bound on the true constant. Half of the pairs are
//! drawn independently across the box, half are short-range perturbations,
//! which picks up the local slope sup much faster. Sampling is seeded and
//! the maxima are folded in a fixed order, so estimates are reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalError, Expr, GeneratorArgs};

/// Axis-aligned sampling bounds for the generator arguments. Scalar ranges
/// apply to every component of the corresponding block.
#[derive(Debug, Clone, Copy)]
pub struct SampleBox {
    pub time: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
    pub zeta: (f64, f64),
    pub w: (f64, f64),
}

impl SampleBox {
    /// Default box for a problem with horizon `t`: times in `[0, T]`, state
    /// blocks in `[-b, b]` with `b = 3 * max(1, sqrt(T))`.
    pub fn for_horizon(horizon: f64) -> Self {
        let b = 3.0 * horizon.sqrt().max(1.0);
        Self {
            time: (0.0, horizon),
            y: (-b, b),
            z: (-b, b),
            zeta: (-b, b),
            w: (-b, b),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn fill(rng: &mut ChaCha8Rng, range: (f64, f64), out: &mut [f64]) {
    for v in out {
        *v = draw(rng, range);
    }
}

fn perturb(rng: &mut ChaCha8Rng, range: (f64, f64), base: &[f64], out: &mut [f64]) {
    let scale = (range.1 - range.0) * 1e-3;
    for (o, b) in out.iter_mut().zip(base) {
        *o = (b + rng.random_range(-scale..=scale)).clamp(range.0, range.1);
    }
}

fn norm2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Estimate `(L1, L2, L3)` for a (possibly vector-valued) generator.
///
/// `dims = (m, d)`. A degenerate box yields zero estimates. User-declared
/// constants should take precedence over these estimates when available.
pub fn estimate_lipschitz(
    generator: &[Expr],
    dims: (usize, usize),
    sample_box: &SampleBox,
    samples: usize,
    seed: u64,
) -> Result<[f64; 3], EvalError> {
    assert!(samples >= 1, "need at least one sample");
    let (m, d) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; m];
    let mut z = vec![0.0; m * d];
    let mut zeta = vec![0.0; m * d];
    let mut w = vec![0.0; d];
    let mut y2 = y.clone();
    let mut z2 = z.clone();
    let mut zeta2 = zeta.clone();
    let mut g_base = vec![0.0; generator.len()];
    let mut g_pert = vec![0.0; generator.len()];
    let mut out = [0.0f64; 3];

    let eval_into = |y: &[f64],
                         z: &[f64],
                         zeta: &[f64],
                         w: &[f64],
                         t: f64,
                         s: f64,
                         buf: &mut [f64]|
     -> Result<(), EvalError> {
        let args = GeneratorArgs { t, s, y, z, zeta: Some(zeta), w, dim_w: d };
        for (g, slot) in generator.iter().zip(buf.iter_mut()) {
            *slot = g.eval(&args)?;
        }
        Ok(())
    };

    for sample in 0..samples {
        let a = draw(&mut rng, sample_box.time);
        let b = draw(&mut rng, sample_box.time);
        let (t, s) = if a <= b { (a, b) } else { (b, a) };
        fill(&mut rng, sample_box.y, &mut y);
        fill(&mut rng, sample_box.z, &mut z);
        fill(&mut rng, sample_box.zeta, &mut zeta);
        fill(&mut rng, sample_box.w, &mut w);
        eval_into(&y, &z, &zeta, &w, t, s, &mut g_base)?;

        let local = sample % 2 == 1;
        for (arg, range) in [(0usize, sample_box.y), (1, sample_box.z), (2, sample_box.zeta)] {
            y2.copy_from_slice(&y);
            z2.copy_from_slice(&z);
            zeta2.copy_from_slice(&zeta);
            let (block, block2): (&[f64], &mut [f64]) = match arg {
                0 => (&y, &mut y2),
                1 => (&z, &mut z2),
                _ => (&zeta, &mut zeta2),
            };
            if local {
                perturb(&mut rng, range, block, block2);
            } else {
                fill(&mut rng, range, block2);
            }
            let dist = norm2(block, block2);
            if dist == 0.0 {
                continue;
            }
            eval_into(&y2, &z2, &zeta2, &w, t, s, &mut g_pert)?;
            let diff = norm2(&g_base, &g_pert);
            let quotient = diff / dist;
            if quotient > out[arg] {
                out[arg] = quotient;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_expr, ExprContext};

    fn gen(src: &str) -> Vec<Expr> {
        vec![parse_expr(src, ExprContext::Generator, (1, 1)).unwrap()]
    }

    #[test]
    fn linear_map_is_exact() {
        let g = gen("0.5 * y_0");
        let b = SampleBox::for_horizon(1.0);
        let [l1, l2, l3] = estimate_lipschitz(&g, (1, 1), &b, 200, 11).unwrap();
        assert!((l1 - 0.5).abs() < 1e-12, "{l1}");
        assert_eq!(l2, 0.0);
        assert_eq!(l3, 0.0);
    }

    #[test]
    fn constant_generator_is_zero() {
        let g = gen("1.0");
        let b = SampleBox::for_horizon(1.0);
        assert_eq!(estimate_lipschitz(&g, (1, 1), &b, 50, 1).unwrap(), [0.0; 3]);
    }

    #[test]
    fn sine_slope_found_near_one() {
        // Oracle first: dense 1-D scan of |sin(y) - sin(y')| / |y - y'| over
        // a fine grid bounds the true constant sup|cos| = 1 from below.
        let mut scan_max: f64 = 0.0;
        let n = 2000;
        for i in 0..n {
            let a = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let b = a + 1e-4;
            scan_max = scan_max.max((b.sin() - a.sin()).abs() / (b - a));
        }
        assert!(scan_max > 0.999 && scan_max <= 1.0 + 1e-12, "scan {scan_max}");

        let g = gen("sin(y_0)");
        let bx = SampleBox {
            time: (0.0, 1.0),
            y: (-std::f64::consts::PI, std::f64::consts::PI),
            z: (-1.0, 1.0),
            zeta: (-1.0, 1.0),
            w: (-1.0, 1.0),
        };
        let [l1, l2, l3] = estimate_lipschitz(&g, (1, 1), &bx, 10_000, 5).unwrap();
        assert!((0.95..=1.0 + 1e-9).contains(&l1), "{l1}");
        assert!(l1 <= scan_max + 1e-9);
        assert_eq!(l2, 0.0);
        assert_eq!(l3, 0.0);
    }

    #[test]
    fn never_exceeds_declared_bound_on_linear_catalog() {
        let b = SampleBox::for_horizon(1.0);
        for (src, bound) in [
            ("0.5 * y_0", [0.5, 0.0, 0.0]),
            ("0.5 * y_0 + 0.3 * zeta_0_0", [0.5, 0.0, 0.3]),
            ("0.25 * z_0_0 - 0.1 * y_0", [0.1, 0.25, 0.0]),
        ] {
            let est = estimate_lipschitz(&gen(src), (1, 1), &b, 500, 3).unwrap();
            for (e, d) in est.iter().zip(bound) {
                assert!(*e <= d + 1e-10, "{src}: {e} > {d}");
            }
        }
    }

    #[test]
    fn degenerate_box_gives_zero() {
        let g = gen("sin(y_0)");
        let bx = SampleBox { time: (0.0, 1.0), y: (2.0, 2.0), z: (0.0, 0.0), zeta: (0.0, 0.0), w: (0.0, 0.0) };
        assert_eq!(estimate_lipschitz(&g, (1, 1), &bx, 100, 9).unwrap(), [0.0; 3]);
    }
}
