use nalgebra::{DMatrix, DVector};

use super::closed_form::weighted_gram;
use super::kernel::KernelMatrix;
use crate::error::{Error, Result};
use crate::net::FeatureMatrix;

/// Mini-batch SGD written as a preconditioner of the full-batch gradient:
/// `D_B = (N/|B|)·Φᵀ P_B K⁻¹ Φ`, with `P_B` the 0/1 selection of the batch
/// rows. Only the batch indices and scalars are stored.
///
/// Since `D_B Φᵀ = (N/|B|) Φ_Bᵀ`, a full-batch step preconditioned by `D_B`
/// is exactly the mini-batch step. `D_B` itself is singular; the
/// ε-regularized `P_B^ε = P_B + ε(𝟙 − P_B)` makes `Φ D_B^ε Φᵀ` invertible
/// for the `A`-matrix of the adaptive closed form, which then no longer
/// depends on ε or on the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdProjector {
    pub batch: Vec<usize>,
    pub n: usize,
    pub epsilon: f64,
}

pub fn sgd_projector_matrix(phi_train: &FeatureMatrix, k: &KernelMatrix, batch: &[usize], epsilon: f64) -> Result<SgdProjector> {
    let n = phi_train.rows();
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.len() > n || batch.iter().any(|&i| i >= n) {
        return Err(Error::InvalidBatchSize { batch_size: batch.len(), n });
    }
    if k.n() != n {
        return Err(Error::DimensionMismatch {
            what: "kernel size",
            expected: n,
            got: k.n(),
        });
    }
    if !k.is_factored() {
        return Err(Error::SingularKernel {
            lambda_min: k.lambda_min(),
            lambda_max: k.lambda_max(),
            jitter: k.jitter(),
        });
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidHyperparameter(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    Ok(SgdProjector {
        batch: batch.to_vec(),
        n,
        epsilon,
    })
}

impl SgdProjector {
    /// `N/|B|`.
    pub fn scale(&self) -> f64 {
        self.n as f64 / self.batch.len() as f64
    }

    /// Diagonal of `P_B^ε` as an `N`-vector.
    pub fn selection(&self, epsilon: f64) -> DVector<f64> {
        let mut s = DVector::from_element(self.n, epsilon);
        for &i in &self.batch {
            s[i] = 1.0;
        }
        s
    }

    /// `D_B v` (unregularized).
    pub fn apply(&self, phi: &FeatureMatrix, k: &KernelMatrix, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.apply_with(phi, k, v, 0.0)
    }

    /// `D_B^ε v` using the stored ε.
    pub fn apply_regularized(&self, phi: &FeatureMatrix, k: &KernelMatrix, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.apply_with(phi, k, v, self.epsilon)
    }

    fn apply_with(&self, phi: &FeatureMatrix, k: &KernelMatrix, v: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
        let c = k.solve(&phi.apply(v))?.component_mul(&self.selection(eps));
        Ok(phi.apply_transpose(&c) * self.scale())
    }

    /// Dense `A = D_B^ε Φᵀ(Φ D_B^ε Φᵀ)⁻¹` (`P × N`), evaluated literally.
    /// Test-scale only.
    pub fn a_matrix(&self, phi: &FeatureMatrix, k: &KernelMatrix) -> Result<DMatrix<f64>> {
        let rows = phi.to_rows();
        let gram = phi.gram();
        // Φ D^ε Φᵀ = s·ΦΦᵀ P^ε K⁻¹ ΦΦᵀ
        let sel = DMatrix::from_diagonal(&self.selection(self.epsilon));
        let inner = &sel * k.solve_matrix(&gram)?;
        let kd = &gram * &inner * self.scale();
        let left = rows.transpose() * inner * self.scale();
        let kd_t = kd.transpose();
        let lu = kd_t.lu();
        let solved = lu.solve(&left.transpose()).ok_or(Error::StepSolve { step: 0 })?;
        Ok(solved.transpose())
    }
}

/// One step of SGD composed with an optional adaptive diagonal:
/// `D_t = diag(d)·D_B`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorStep {
    pub projector: SgdProjector,
    pub diagonal: Option<DVector<f64>>,
}

/// The per-step preconditioners `D_0, D_1, …` of an adaptive run.
#[derive(Debug, Clone, PartialEq)]
pub enum AdaptiveMatrixSeq {
    /// One positive diagonal per step.
    Diagonal(Vec<DVector<f64>>),
    /// Mini-batch projectors; the kernel of the training features is shared.
    ProjectorComposed { kernel: KernelMatrix, steps: Vec<ProjectorStep> },
    /// Dense `P × P` matrices; only for tiny test problems.
    Explicit(Vec<DMatrix<f64>>),
}

impl PartialEq for KernelMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries() == other.entries() && self.jitter() == other.jitter()
    }
}

impl AdaptiveMatrixSeq {
    /// `D_t ≡ 𝟙`: plain gradient descent.
    pub fn identity(p: usize, steps: usize) -> Self {
        AdaptiveMatrixSeq::Diagonal(vec![DVector::from_element(p, 1.0); steps])
    }

    pub fn len(&self) -> usize {
        match self {
            AdaptiveMatrixSeq::Diagonal(d) => d.len(),
            AdaptiveMatrixSeq::ProjectorComposed { steps, .. } => steps.len(),
            AdaptiveMatrixSeq::Explicit(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn step(&self, t: usize) -> StepMatrix<'_> {
        match self {
            AdaptiveMatrixSeq::Diagonal(d) => StepMatrix::Diagonal(&d[t]),
            AdaptiveMatrixSeq::ProjectorComposed { steps, .. } => {
                StepMatrix::Projector(&steps[t].projector, steps[t].diagonal.as_ref())
            }
            AdaptiveMatrixSeq::Explicit(m) => StepMatrix::Explicit(&m[t]),
        }
    }
}

enum StepMatrix<'a> {
    Diagonal(&'a DVector<f64>),
    Projector(&'a SgdProjector, Option<&'a DVector<f64>>),
    Explicit(&'a DMatrix<f64>),
}

/// `A_t = D Φᵀ(ΦDΦᵀ)⁻¹` together with the action of `ΦDΦᵀ` on residuals.
struct StepOperator<'a> {
    matrix: StepMatrix<'a>,
    /// Kernel inverted by `A_t`; for projector steps only the diagonal part.
    a_kernel: KernelMatrix,
}

impl<'a> StepOperator<'a> {
    fn new(phi: &FeatureMatrix, matrix: StepMatrix<'a>, step: usize) -> Result<Self> {
        let p = phi.cols();
        let gram = match &matrix {
            StepMatrix::Diagonal(d) => {
                check_diag(d, p)?;
                weighted_gram(phi, d)
            }
            StepMatrix::Projector(_, Some(d)) => {
                check_diag(d, p)?;
                weighted_gram(phi, d)
            }
            StepMatrix::Projector(_, None) => phi.gram(),
            StepMatrix::Explicit(m) => {
                if m.nrows() != p || m.ncols() != p {
                    return Err(Error::DimensionMismatch {
                        what: "explicit adaptive matrix",
                        expected: p,
                        got: m.nrows(),
                    });
                }
                let t = phi.transposed();
                t.tr_mul(&(*m * t))
            }
        };
        let gram = (&gram + gram.transpose()) * 0.5;
        let a_kernel = KernelMatrix::new(gram).map_err(|_| Error::StepSolve { step })?;
        if !a_kernel.is_factored() {
            return Err(Error::StepSolve { step });
        }
        Ok(StepOperator { matrix, a_kernel })
    }

    /// `D u` for a parameter-space vector `u` already of the form `Φᵀc`.
    fn precondition(&self, u: DVector<f64>) -> DVector<f64> {
        match &self.matrix {
            StepMatrix::Diagonal(d) | StepMatrix::Projector(_, Some(d)) => u.component_mul(d),
            StepMatrix::Projector(_, None) => u,
            StepMatrix::Explicit(m) => *m * u,
        }
    }

    /// `A s`.
    fn a_apply(&self, phi: &FeatureMatrix, s: &DVector<f64>, step: usize) -> Result<DVector<f64>> {
        let c = self.a_kernel.solve(s).map_err(|_| Error::StepSolve { step })?;
        Ok(self.precondition(phi.apply_transpose(&c)))
    }

    /// `Φ D Φᵀ r`.
    fn kernel_apply(&self, r: &DVector<f64>) -> DVector<f64> {
        match &self.matrix {
            StepMatrix::Projector(proj, _) => {
                let masked = r.component_mul(&proj.selection(0.0));
                self.a_kernel.entries() * masked * proj.scale()
            }
            _ => self.a_kernel.entries() * r,
        }
    }
}

fn check_diag(d: &DVector<f64>, p: usize) -> Result<()> {
    if d.len() != p {
        return Err(Error::DimensionMismatch {
            what: "adaptive diagonal",
            expected: p,
            got: d.len(),
        });
    }
    Ok(())
}

/// Step-by-step evaluation of the adaptive closed form.
///
/// Index `t` of every per-step vector holds the state after `t` updates;
/// index 0 is the initialization.
#[derive(Debug, Clone)]
pub struct ClosedFormTrace {
    /// Predictions on the probe inputs.
    pub probe: Vec<DVector<f64>>,
    /// Predictions on the training inputs.
    pub train: Vec<DVector<f64>>,
    /// `φ(x_probe) A_t s_t`, the interpolating part.
    pub interpolating: Vec<DVector<f64>>,
    /// `φ(x_probe) B_t`, the path-dependent part.
    pub path: Vec<DVector<f64>>,
    /// `‖B_t‖₂`.
    pub b_norms: Vec<f64>,
    /// `θ_t − θ₀ = A_t s_t + B_t` after the last step.
    pub displacement: DVector<f64>,
    pub steps: usize,
}

/// Inputs of the adaptive closed form.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveProblem<'a> {
    pub phi_train: &'a FeatureMatrix,
    pub phi_probe: &'a FeatureMatrix,
    pub y: &'a DVector<f64>,
    pub f0_train: &'a DVector<f64>,
    pub f0_probe: &'a DVector<f64>,
    pub eta: f64,
}

/// Linearized training under `θ_{t+1} = θ_t − (η/N) D_t Φᵀ(f_t(X) − Y)` in
/// closed form: `f_t(x) = f₀(x) + φ(x)(A_t s_t + B_t)`, where
/// `s_t = [𝟙 − Π_{u=t-1}^{0}(𝟙 − (η/N)ΦD_uΦᵀ)](Y − f₀(X))`,
/// `A_t = D_{t-1}Φᵀ(ΦD_{t-1}Φᵀ)⁻¹` and `B_t = Σ_{v=2}^{t}(A_{v-1} − A_v)s_{v-1}`.
///
/// The product is maintained incrementally (descending index), so `B_t`
/// accumulates `(A_{t-1} − A_t)s_{t-1}` at each step.
pub fn adaptive_closed_form_trace(problem: &AdaptiveProblem<'_>, seq: &AdaptiveMatrixSeq, steps: usize) -> Result<ClosedFormTrace> {
    let AdaptiveProblem {
        phi_train: phi,
        phi_probe,
        y,
        f0_train,
        f0_probe,
        eta,
    } = *problem;
    let n = phi.rows();
    let p = phi.cols();
    if y.len() != n || f0_train.len() != n {
        return Err(Error::DimensionMismatch {
            what: "training labels",
            expected: n,
            got: if y.len() != n { y.len() } else { f0_train.len() },
        });
    }
    if phi_probe.cols() != p || f0_probe.len() != phi_probe.rows() {
        return Err(Error::DimensionMismatch {
            what: "probe features",
            expected: p,
            got: phi_probe.cols(),
        });
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidLearningRate(eta));
    }
    if seq.len() < steps {
        return Err(Error::InvalidConfig(format!(
            "adaptive sequence has {} matrices, {} steps requested",
            seq.len(),
            steps
        )));
    }
    if let AdaptiveMatrixSeq::ProjectorComposed { steps: st, .. } = seq {
        if st.iter().any(|s| s.projector.n != n) {
            return Err(Error::DimensionMismatch {
                what: "projector sample count",
                expected: n,
                got: st.iter().map(|s| s.projector.n).find(|&m| m != n).unwrap_or(n),
            });
        }
    }

    let r0 = y - f0_train;
    let rate = eta / n as f64;
    let mut product = r0.clone(); // Π(…) r0
    let mut b = DVector::zeros(p);
    let mut prev: Option<(StepOperator<'_>, DVector<f64>)> = None; // (A_{t-1}, s_{t-1})

    let mut trace = ClosedFormTrace {
        probe: vec![f0_probe.clone()],
        train: vec![f0_train.clone()],
        interpolating: vec![DVector::zeros(phi_probe.rows())],
        path: vec![DVector::zeros(phi_probe.rows())],
        b_norms: vec![0.0],
        displacement: DVector::zeros(p),
        steps,
    };

    for t in 1..=steps {
        let op = StepOperator::new(phi, seq.step(t - 1), t)?;
        product = &product - op.kernel_apply(&product) * rate;
        if product.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: t });
        }
        let s = &r0 - &product;
        if let Some((prev_op, prev_s)) = &prev {
            b += prev_op.a_apply(phi, prev_s, t - 1)? - op.a_apply(phi, prev_s, t)?;
        }
        let a_s = op.a_apply(phi, &s, t)?;
        let interp = phi_probe.apply(&a_s);
        let path = phi_probe.apply(&b);
        let displacement = &a_s + &b;
        trace.probe.push(f0_probe + &interp + &path);
        trace.train.push(f0_train + phi.apply(&displacement));
        trace.interpolating.push(interp);
        trace.path.push(path);
        trace.b_norms.push(b.norm());
        trace.displacement = displacement;
        prev = Some((op, s));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::empirical_ntk;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        phi: FeatureMatrix,
        probe: FeatureMatrix,
        y: DVector<f64>,
        f0: DVector<f64>,
        f0_probe: DVector<f64>,
    }

    fn instance(n: usize, p: usize, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let phi = FeatureMatrix::from_rows(&mat(n, p));
        let probe = FeatureMatrix::from_rows(&mat(3, p));
        let y = mat(n, 1).column(0).clone_owned();
        let f0 = mat(n, 1).column(0).clone_owned();
        let f0_probe = mat(3, 1).column(0).clone_owned();
        Instance {
            phi,
            probe,
            y,
            f0,
            f0_probe,
        }
    }

    impl Instance {
        fn problem(&self, eta: f64) -> AdaptiveProblem<'_> {
            AdaptiveProblem {
                phi_train: &self.phi,
                phi_probe: &self.probe,
                y: &self.y,
                f0_train: &self.f0,
                f0_probe: &self.f0_probe,
                eta,
            }
        }

        /// Direct iteration of the preconditioned linearized update.
        fn iterate(&self, eta: f64, d: &[DVector<f64>]) -> Vec<DVector<f64>> {
            let n = self.phi.rows() as f64;
            let mut delta = DVector::zeros(self.phi.cols());
            let mut out = vec![self.f0_probe.clone()];
            for dt in d {
                let r = &self.f0 + self.phi.apply(&delta) - &self.y;
                delta -= self.phi.apply_transpose(&r).component_mul(dt) * (eta / n);
                out.push(&self.f0_probe + self.probe.apply(&delta));
            }
            out
        }
    }

    #[test]
    fn identity_sequence_matches_binomial_gd_form() {
        let inst = instance(5, 12, 1);
        let k = empirical_ntk(&inst.phi).unwrap();
        let eta = 0.5 / k.lambda_max();
        let tr = adaptive_closed_form_trace(&inst.problem(eta), &AdaptiveMatrixSeq::identity(12, 30), 30).unwrap();
        let n = 5.0;
        let kinv = k.inverse().unwrap();
        let m = DMatrix::identity(5, 5) - k.entries() * (eta / n);
        let r0 = &inst.y - &inst.f0;
        let mut power = DMatrix::identity(5, 5);
        for t in 0..=30 {
            let coef = &kinv * (DMatrix::identity(5, 5) - &power) * &r0;
            let oracle = &inst.f0_probe + inst.probe.apply(&inst.phi.apply_transpose(&coef));
            assert!((&tr.probe[t] - oracle).amax() < 1e-10, "step {t}");
            assert!(tr.b_norms[t] < 1e-12);
            power = &m * power;
        }
    }

    #[test]
    fn single_step_is_one_preconditioned_update() {
        let inst = instance(4, 10, 2);
        let d = DVector::from_fn(10, |i, _| 0.5 + i as f64 / 10.0);
        let seq = AdaptiveMatrixSeq::Diagonal(vec![d.clone()]);
        let tr = adaptive_closed_form_trace(&inst.problem(0.3), &seq, 1).unwrap();
        let step = d.component_mul(&inst.phi.apply_transpose(&(&inst.y - &inst.f0))) * (0.3 / 4.0);
        let want = &inst.f0_probe + inst.probe.apply(&step);
        assert!((&tr.probe[1] - want).amax() < 1e-12);
    }

    #[test]
    fn constant_diagonal_has_no_path_term() {
        let inst = instance(4, 16, 3);
        let d = DVector::from_fn(16, |i, _| 0.2 + (i % 5) as f64);
        let seq = AdaptiveMatrixSeq::Diagonal(vec![d; 40]);
        let tr = adaptive_closed_form_trace(&inst.problem(0.05), &seq, 40).unwrap();
        assert!(tr.b_norms.iter().all(|&b| b < 1e-12));
    }

    #[test]
    fn varying_diagonals_match_direct_iteration() {
        let inst = instance(4, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let ds: Vec<_> = (0..50).map(|_| DVector::from_fn(16, |_, _| rng.random_range(0.2..2.0))).collect();
        let tr = adaptive_closed_form_trace(&inst.problem(0.05), &AdaptiveMatrixSeq::Diagonal(ds.clone()), 50).unwrap();
        let direct = inst.iterate(0.05, &ds);
        for t in 0..=50 {
            assert!((&tr.probe[t] - &direct[t]).amax() < 1e-10, "step {t}");
        }
        assert!(tr.b_norms[50] > 1e-6, "path term should be active");
        // training predictions equal Y − Π r0
        let last = tr.train.last().unwrap();
        let direct_train = &inst.f0 + inst.phi.apply(&tr.displacement);
        assert!((last - direct_train).amax() < 1e-12);
    }

    #[test]
    fn explicit_identity_matches_diagonal_identity() {
        let inst = instance(3, 8, 5);
        let a = adaptive_closed_form_trace(&inst.problem(0.1), &AdaptiveMatrixSeq::identity(8, 10), 10).unwrap();
        let b = adaptive_closed_form_trace(
            &inst.problem(0.1),
            &AdaptiveMatrixSeq::Explicit(vec![DMatrix::identity(8, 8); 10]),
            10,
        )
        .unwrap();
        for t in 0..=10 {
            assert!((&a.probe[t] - &b.probe[t]).amax() < 1e-12);
        }
    }

    #[test]
    fn projector_sequence_matches_minibatch_iteration() {
        let inst = instance(6, 20, 6);
        let k = empirical_ntk(&inst.phi).unwrap();
        let batches: [&[usize]; 3] = [&[0, 1], &[2, 3], &[4, 5]];
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let mut steps = Vec::new();
        let mut direct = vec![inst.f0_probe.clone()];
        let mut delta = DVector::zeros(20);
        let eta = 0.2;
        for t in 0..24 {
            let batch = batches[t % 3];
            let diag = DVector::from_fn(20, |_, _| rng.random_range(0.5..1.5));
            let r = &inst.f0 + inst.phi.apply(&delta) - &inst.y;
            let mut g = DVector::zeros(20);
            for &i in batch {
                g += DVector::from_column_slice(inst.phi.row(i)) * r[i];
            }
            delta -= g.component_mul(&diag) * (eta / batch.len() as f64);
            direct.push(&inst.f0_probe + inst.probe.apply(&delta));
            steps.push(ProjectorStep {
                projector: sgd_projector_matrix(&inst.phi, &k, batch, 1e-6).unwrap(),
                diagonal: Some(diag),
            });
        }
        let seq = AdaptiveMatrixSeq::ProjectorComposed { kernel: k, steps };
        let tr = adaptive_closed_form_trace(&inst.problem(eta), &seq, 24).unwrap();
        for t in 0..=24 {
            assert!((&tr.probe[t] - &direct[t]).amax() < 1e-10, "step {t}");
        }
    }

    #[test]
    fn sgd_projector_reproduces_gd_direction_and_minibatch_step() {
        let inst = instance(5, 15, 7);
        let k = empirical_ntk(&inst.phi).unwrap();
        let r = DVector::from_fn(5, |i, _| 1.0 - i as f64 * 0.3);
        let grad = inst.phi.apply_transpose(&r);
        let full = sgd_projector_matrix(&inst.phi, &k, &[0, 1, 2, 3, 4], 0.0).unwrap();
        assert!((full.apply(&inst.phi, &k, &grad).unwrap() - &grad).amax() < 1e-12);

        let proj = sgd_projector_matrix(&inst.phi, &k, &[1, 3], 0.0).unwrap();
        let via_d = proj.apply(&inst.phi, &k, &grad).unwrap() / 5.0;
        let mut direct = DVector::zeros(15);
        for i in [1, 3] {
            direct += DVector::from_column_slice(inst.phi.row(i)) * (r[i] / 2.0);
        }
        assert!((via_d - direct).amax() < 1e-12);
    }

    #[test]
    fn a_matrix_is_epsilon_and_batch_independent() {
        let inst = instance(4, 12, 8);
        let k = empirical_ntk(&inst.phi).unwrap();
        let target = inst.phi.to_rows().transpose() * k.inverse().unwrap();
        for batch in [&[0usize][..], &[1, 2], &[0, 1, 2, 3]] {
            for eps in [1e-4, 1e-8] {
                let a = sgd_projector_matrix(&inst.phi, &k, batch, eps).unwrap().a_matrix(&inst.phi, &k).unwrap();
                assert!((&a - &target).amax() < 1e-9, "batch {batch:?} eps {eps}");
            }
        }
    }

    #[test]
    fn projector_rejects_bad_batches() {
        let inst = instance(3, 6, 9);
        let k = empirical_ntk(&inst.phi).unwrap();
        assert!(matches!(sgd_projector_matrix(&inst.phi, &k, &[], 0.0), Err(Error::EmptyBatch)));
        assert!(sgd_projector_matrix(&inst.phi, &k, &[3], 0.0).is_err());
    }

    #[test]
    fn short_sequence_is_rejected() {
        let inst = instance(3, 6, 10);
        assert!(adaptive_closed_form_trace(&inst.problem(0.1), &AdaptiveMatrixSeq::identity(6, 2), 3).is_err());
    }
}
