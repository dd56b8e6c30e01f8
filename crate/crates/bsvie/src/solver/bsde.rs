//! One member of the parametrised family of backward recursions: for a
//! fixed outer node `t_i`, recurse terminal data from `terminal_node` down
//! to `stop`, producing the value row `lambda(t_i, .)` and the coefficient
//! row `Z(t_i, t_j)`.
//!
//! Each step `j + 1 -> j` computes the coefficient from the increment
//! covariation first and then applies the explicit Euler update
//!
//! ```text
//! Z_ij      = (1/h) E[lambda_{j+1} dW_j | F_j]
//! lambda_j  = E[lambda_{j+1} | F_j] + h g(t_i, t_j, y_j, Z_ij, z[j][i])
//! ```
//!
//! where `(y, z)` is the frozen outer iterate: in the Picard loop the
//! previous iterate, in the Fredholm pass the already-solved surface. The
//! `z[j][i]` read is the below-diagonal (or diagonal) cell of the frozen
//! field and is absent in adapted mode.

use crate::dsl::GeneratorArgs;
use crate::surface::{AdaptedProcess, TwoParamField};

use super::{SolveContext, SolverError};

/// The frozen `(y, z)` pair a recursion evaluates the generator against.
/// `z` is `None` in adapted mode.
pub struct FrozenIterate<'a> {
    pub y: &'a AdaptedProcess,
    pub z: Option<&'a TwoParamField>,
}

/// Output of one family member: the value row at `stop` and the coefficient
/// cells for `j in [stop, terminal_node)`, each `paths * m * d` path-major.
#[derive(Debug)]
pub struct BsdeRow {
    pub lambda: Vec<f64>,
    pub z_cells: Vec<Vec<f64>>,
}

pub fn bsde_family_step(
    ctx: &SolveContext<'_>,
    outer: usize,
    terminal_node: usize,
    stop: usize,
    terminal: &[f64],
    frozen: &FrozenIterate<'_>,
) -> Result<BsdeRow, SolverError> {
    let ens = ctx.ensemble;
    let est = ctx.estimator;
    let paths = ens.paths();
    let m = ctx.spec.dim_y;
    let d = ctx.spec.dim_w;
    let h = ctx.h();
    let t_outer = ctx.node(outer);
    debug_assert!(stop <= terminal_node);
    debug_assert_eq!(terminal.len(), paths * m);

    let mut lambda = terminal.to_vec();
    let mut z_cells = vec![Vec::new(); terminal_node - stop];
    let mut column = vec![0.0; paths];

    for j in (stop..terminal_node).rev() {
        // Coefficient row from the increment covariation, per component.
        let mut cell = vec![0.0; paths * m * d];
        let mut cond = vec![0.0; paths * m];
        for k in 0..m {
            for p in 0..paths {
                column[p] = lambda[p * m + k];
            }
            let coeffs = est.martingale_coeffs(&column, ens, j)?;
            for p in 0..paths {
                for l in 0..d {
                    cell[(p * m + k) * d + l] = coeffs[p * d + l];
                }
            }
            let ce = est.cond_exp(&column, ens, j)?;
            for p in 0..paths {
                cond[p * m + k] = ce.values[p];
            }
        }

        // Explicit update through the generator at the frozen iterate.
        let s = ctx.node(j);
        let w = ens.values_at(j);
        let zeta_block = match frozen.z {
            Some(field) => Some(field.block(j, outer)?),
            None => None,
        };
        for p in 0..paths {
            let args = GeneratorArgs {
                t: t_outer,
                s,
                y: frozen.y.components(j, p),
                z: &cell[p * m * d..(p + 1) * m * d],
                zeta: zeta_block.map(|b| &b[p * m * d..(p + 1) * m * d]),
                w: &w[p * d..(p + 1) * d],
                dim_w: d,
            };
            for (k, g) in ctx.spec.generator.iter().enumerate() {
                lambda[p * m + k] = cond[p * m + k] + h * g.eval(&args)?;
            }
        }
        z_cells[j - stop] = cell;
    }

    Ok(BsdeRow { lambda, z_cells })
}
