use super::{EstimatorSpec, Method, PenaltyKind};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::FittedModel;
use crate::shape::{Curvature, Monotonicity};
use crate::solver::{
    ConicProgram, CsrBuilder, CsrMatrix, PairwiseHint, SolverSolution, VarBlock,
};

/// Objective scaling for the CSVR quadratic program. Both share constraints
/// and minimizer; `Constrained` multiplies the penalized objective by C.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum CsvrScaling {
    /// Loss at weight 1, squared-norm penalty at weight 1/(2C).
    Penalized,
    /// Loss at weight C, squared-norm penalty at weight 1/2.
    Constrained,
}

/// An assembled solver program plus the bookkeeping needed to turn a solution
/// vector back into model coefficients.
#[derive(Clone, Debug)]
pub struct ProgramBundle {
    program: ConicProgram,
    spec: EstimatorSpec,
    d: usize,
    alpha_idx: Vec<usize>,
    beta_idx: Vec<usize>,
}

impl ProgramBundle {
    pub fn program(&self) -> &ConicProgram {
        &self.program
    }

    pub fn into_program(self) -> ConicProgram {
        self.program
    }

    pub fn spec(&self) -> &EstimatorSpec {
        &self.spec
    }

    /// Splits a solution vector into `(alpha, beta)` coefficients, where
    /// `beta` is row-major with one row per piece.
    pub fn coefficients(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if z.len() != self.program.nvar() {
            return Err(Error::invalid(format!(
                "solution has {} entries, program has {} variables",
                z.len(),
                self.program.nvar()
            )));
        }
        let alpha: Vec<f64> = self.alpha_idx.iter().map(|&i| z[i]).collect();
        let beta: Vec<f64> = self.beta_idx.iter().map(|&i| z[i]).collect();
        Ok((alpha, beta))
    }

    pub fn extract_model(&self, solution: &SolverSolution) -> FittedModel {
        let (alpha, beta) =
            self.coefficients(&solution.z).expect("solution produced by this bundle's program");
        FittedModel::new(alpha, beta, self.d, self.spec.shape, self.spec.method, solution.report())
    }
}

pub(crate) fn assemble(
    data: &Dataset,
    spec: &EstimatorSpec,
    scaling: CsvrScaling,
) -> Result<ProgramBundle> {
    match spec.method {
        Method::SvrLinear => assemble_svr(data, spec),
        _ => assemble_blocky(data, spec, scaling),
    }
}

/// Slot layout inside one per-observation variable block. The evaluation
/// coefficients `(alpha, beta)` always occupy the leading `d + 1` slots; the
/// structured solver path relies on that.
struct BlockLayout {
    bw: usize,
    t_off: Option<usize>,
    t_count: usize,
    xi_off: Option<usize>,
}

fn block_layout(method: &Method, d: usize) -> BlockLayout {
    let w = d + 1;
    match method {
        Method::Cr | Method::Lcr => BlockLayout { bw: w, t_off: None, t_count: 0, xi_off: None },
        Method::Csvr { penalty: PenaltyKind::SquaredL2 } => {
            BlockLayout { bw: w + 2, t_off: None, t_count: 0, xi_off: Some(w) }
        }
        Method::Csvr { penalty: PenaltyKind::L1 } => {
            BlockLayout { bw: w + d + 2, t_off: Some(w), t_count: d, xi_off: Some(w + d) }
        }
        Method::Csvr { penalty: PenaltyKind::LInf } => {
            BlockLayout { bw: w + 3, t_off: Some(w), t_count: 1, xi_off: Some(w + 1) }
        }
        Method::SvrLinear => unreachable!("svr uses a global layout"),
    }
}

/// Assembles the per-observation block programs (CR, LCR, CSVR family).
fn assemble_blocky(
    data: &Dataset,
    spec: &EstimatorSpec,
    scaling: CsvrScaling,
) -> Result<ProgramBundle> {
    let n = data.n();
    let d = data.dim();
    let w = d + 1;
    let lay = block_layout(&spec.method, d);
    let bw = lay.bw;
    let nvar = n * bw;
    let c = spec.params.c;
    let epsilon = spec.params.epsilon;

    // Evaluation vectors u_i = (1, x_i).
    let mut u_eval = Vec::with_capacity(n * w);
    for i in 0..n {
        u_eval.push(1.0);
        u_eval.extend_from_slice(data.row(i));
    }

    // Quadratic term and linear term.
    let mut p_trips: Vec<(usize, usize, f64)> = Vec::new();
    let mut q = vec![0.0f64; nvar];
    match spec.method {
        Method::Cr | Method::Lcr => {
            // 0.5 sum_i (y_i - u_i' v_i)^2 up to the constant 0.5 ||y||^2:
            // P block = u_i u_i', q block = -y_i u_i.
            for i in 0..n {
                let u = &u_eval[i * w..(i + 1) * w];
                let off = i * bw;
                for s in 0..w {
                    for t in 0..w {
                        p_trips.push((off + s, off + t, u[s] * u[t]));
                    }
                    q[off + s] = -data.y()[i] * u[s];
                }
            }
        }
        Method::Csvr { penalty: PenaltyKind::SquaredL2 } => {
            let (pen, loss) = match scaling {
                CsvrScaling::Penalized => (1.0 / c, 1.0),
                CsvrScaling::Constrained => (1.0, c),
            };
            let xi = lay.xi_off.unwrap();
            for i in 0..n {
                let off = i * bw;
                for j in 0..d {
                    p_trips.push((off + 1 + j, off + 1 + j, pen));
                }
                q[off + xi] = loss;
                q[off + xi + 1] = loss;
            }
        }
        Method::Csvr { penalty: _ } => {
            // Linear programs: loss weight 1, penalty weight 1/(2C) on the
            // absolute-value / max auxiliaries.
            let xi = lay.xi_off.unwrap();
            let t_off = lay.t_off.unwrap();
            for i in 0..n {
                let off = i * bw;
                for k in 0..lay.t_count {
                    q[off + t_off + k] = 1.0 / (2.0 * c);
                }
                q[off + xi] = 1.0;
                q[off + xi + 1] = 1.0;
            }
        }
        Method::SvrLinear => unreachable!(),
    }
    let p = CsrMatrix::from_triplets(nvar, nvar, &p_trips)?;

    // Constraint rows. Pairwise comparison rows come first so the structured
    // solver path can identify them as one contiguous range.
    let mut a = CsrBuilder::new(nvar);
    let mut l = Vec::new();
    let mut u_b = Vec::new();
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(2 * w);

    let (pair_lo, pair_hi) = match spec.shape.curvature {
        Curvature::Concave => (f64::NEG_INFINITY, 0.0),
        Curvature::Convex => (0.0, f64::INFINITY),
    };
    for i in 0..n {
        let u_i = &u_eval[i * w..(i + 1) * w];
        for h in 0..n {
            if h == i {
                continue;
            }
            row.clear();
            for (s, &v) in u_i.iter().enumerate() {
                row.push((i * bw + s, v));
            }
            for (s, &v) in u_i.iter().enumerate() {
                row.push((h * bw + s, -v));
            }
            a.push_row(&row);
            l.push(pair_lo);
            u_b.push(pair_hi);
        }
    }
    let pair_rows = 0..a.nrows();

    // Epsilon-insensitive margin rows and slack nonnegativity.
    if let Some(xi) = lay.xi_off {
        for i in 0..n {
            let off = i * bw;
            let u_i = &u_eval[i * w..(i + 1) * w];
            // y_i - u_i'v_i <= eps + xi_i
            row.clear();
            for (s, &v) in u_i.iter().enumerate() {
                row.push((off + s, -v));
            }
            row.push((off + xi, -1.0));
            a.push_row(&row);
            l.push(f64::NEG_INFINITY);
            u_b.push(epsilon - data.y()[i]);
            // u_i'v_i - y_i <= eps + xi*_i
            row.clear();
            for (s, &v) in u_i.iter().enumerate() {
                row.push((off + s, v));
            }
            row.push((off + xi + 1, -1.0));
            a.push_row(&row);
            l.push(f64::NEG_INFINITY);
            u_b.push(epsilon + data.y()[i]);
        }
        for i in 0..n {
            let off = i * bw;
            for k in 0..2 {
                a.push_row(&[(off + xi + k, 1.0)]);
                l.push(0.0);
                u_b.push(f64::INFINITY);
            }
        }
    }

    // Auxiliary absolute-value rows for the lasso penalties:
    // t >= beta and t >= -beta, per component (L1) or per block (LInf).
    if let Some(t_off) = lay.t_off {
        for i in 0..n {
            let off = i * bw;
            for j in 0..d {
                let t_slot = off + t_off + if lay.t_count == d { j } else { 0 };
                a.push_row(&[(off + 1 + j, -1.0), (t_slot, 1.0)]);
                l.push(0.0);
                u_b.push(f64::INFINITY);
                a.push_row(&[(off + 1 + j, 1.0), (t_slot, 1.0)]);
                l.push(0.0);
                u_b.push(f64::INFINITY);
            }
        }
    }

    // Monotonicity sign restrictions on every slope component.
    match spec.shape.monotonicity {
        Monotonicity::None => {}
        Monotonicity::Increasing => {
            for i in 0..n {
                for j in 0..d {
                    a.push_row(&[(i * bw + 1 + j, 1.0)]);
                    l.push(0.0);
                    u_b.push(f64::INFINITY);
                }
            }
        }
        Monotonicity::Decreasing => {
            for i in 0..n {
                for j in 0..d {
                    a.push_row(&[(i * bw + 1 + j, 1.0)]);
                    l.push(f64::NEG_INFINITY);
                    u_b.push(0.0);
                }
            }
        }
    }

    // Homogeneity: intercepts pinned to zero.
    if spec.shape.homogeneous {
        for i in 0..n {
            a.push_row(&[(i * bw, 1.0)]);
            l.push(0.0);
            u_b.push(0.0);
        }
    }

    let alpha_idx: Vec<usize> = (0..n).map(|i| i * bw).collect();
    let beta_idx: Vec<usize> = (0..n).flat_map(|i| (0..d).map(move |j| i * bw + 1 + j)).collect();

    let mut blocks = vec![
        VarBlock { label: "alpha".into(), indices: alpha_idx.clone() },
        VarBlock { label: "beta".into(), indices: beta_idx.clone() },
    ];
    if let Some(t_off) = lay.t_off {
        blocks.push(VarBlock {
            label: "t".into(),
            indices: (0..n)
                .flat_map(|i| (0..lay.t_count).map(move |k| i * bw + t_off + k))
                .collect(),
        });
    }
    if let Some(xi) = lay.xi_off {
        blocks.push(VarBlock { label: "xi".into(), indices: (0..n).map(|i| i * bw + xi).collect() });
        blocks.push(VarBlock {
            label: "xi_star".into(),
            indices: (0..n).map(|i| i * bw + xi + 1).collect(),
        });
    }

    let mut program = ConicProgram::new(p, q, a.finish(), l, u_b)?.with_blocks(blocks)?;
    if matches!(spec.method, Method::Lcr) {
        let radius = spec.params.lipschitz.expect("validated by EstimatorSpec::validate");
        for i in 0..n {
            let idx: Vec<usize> = (0..d).map(|j| i * bw + 1 + j).collect();
            program = program.with_ball(idx, radius)?;
        }
    }
    let program = program.with_hint(PairwiseHint {
        n_obs: n,
        block_width: bw,
        eval_width: w,
        pair_rows,
        u_eval,
    });

    Ok(ProgramBundle { program, spec: *spec, d, alpha_idx, beta_idx })
}

/// Assembles the classical linear SVR program: one global `(alpha, beta)`
/// with per-observation slacks.
fn assemble_svr(data: &Dataset, spec: &EstimatorSpec) -> Result<ProgramBundle> {
    let n = data.n();
    let d = data.dim();
    let nvar = 1 + d + 2 * n;
    let c = spec.params.c;
    let epsilon = spec.params.epsilon;
    let xi0 = 1 + d;
    let xis0 = 1 + d + n;

    let mut p_trips = Vec::with_capacity(d);
    for j in 0..d {
        p_trips.push((1 + j, 1 + j, 1.0));
    }
    let p = CsrMatrix::from_triplets(nvar, nvar, &p_trips)?;
    let mut q = vec![0.0f64; nvar];
    for i in 0..n {
        q[xi0 + i] = c;
        q[xis0 + i] = c;
    }

    let mut a = CsrBuilder::new(nvar);
    let mut l = Vec::new();
    let mut u_b = Vec::new();
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(d + 2);
    for i in 0..n {
        let x = data.row(i);
        // y_i - (alpha + beta'x_i) <= eps + xi_i
        row.clear();
        row.push((0, -1.0));
        for j in 0..d {
            row.push((1 + j, -x[j]));
        }
        row.push((xi0 + i, -1.0));
        a.push_row(&row);
        l.push(f64::NEG_INFINITY);
        u_b.push(epsilon - data.y()[i]);
        // (alpha + beta'x_i) - y_i <= eps + xi*_i
        row.clear();
        row.push((0, 1.0));
        for j in 0..d {
            row.push((1 + j, x[j]));
        }
        row.push((xis0 + i, -1.0));
        a.push_row(&row);
        l.push(f64::NEG_INFINITY);
        u_b.push(epsilon + data.y()[i]);
    }
    for i in 0..2 * n {
        a.push_row(&[(xi0 + i, 1.0)]);
        l.push(0.0);
        u_b.push(f64::INFINITY);
    }

    let blocks = vec![
        VarBlock { label: "alpha".into(), indices: vec![0] },
        VarBlock { label: "beta".into(), indices: (0..d).map(|j| 1 + j).collect() },
        VarBlock { label: "xi".into(), indices: (0..n).map(|i| xi0 + i).collect() },
        VarBlock { label: "xi_star".into(), indices: (0..n).map(|i| xis0 + i).collect() },
    ];
    let program = ConicProgram::new(p, q, a.finish(), l, u_b)?.with_blocks(blocks)?;

    Ok(ProgramBundle {
        program,
        spec: *spec,
        d,
        alpha_idx: vec![0],
        beta_idx: (0..d).map(|j| 1 + j).collect(),
    })
}
