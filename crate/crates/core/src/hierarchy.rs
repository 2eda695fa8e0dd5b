//! Hierarchical construction of collective molecular-excitation profiles.
//!
//! Level 0 is the row space of the coupling matrix G: the only directions of
//! molecular excitation the cavity dynamics can see. Each further level is
//! generated by applying the diagonal coupling operators to the previous
//! level's basis and orthogonalizing against everything already retained.
//! The coupling operators are Hermitian, so the projected dynamics couples
//! each level only to its neighbours; the resulting operator blocks are the
//! data the reduced equations of motion run on.

use crate::error::{Error, Result};
use crate::model::Model;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Diagonal coupling operators of the molecular rate equation.
///
/// `stimulated[i]` holds the diagonal of A⁽ⁱ⁾ with entries −(E_i+A_i)·g_ip.
/// The pump-independent diagonal part of A⁽⁰⁾ is Σ_i E_i/(E_i+A_i)·A⁽ⁱ⁾ and
/// the remaining (Γ↓+P)·identity piece stays symbolic: the scalar is added
/// at evaluation time.
#[derive(Debug, Clone)]
pub struct CouplingOperators {
    pub stimulated: Vec<DVector<f64>>,
    pub base_shift: DVector<f64>,
    /// E_i/(E_i+A_i) per mode (0 where E_i+A_i = 0).
    pub emission_ratio: DVector<f64>,
}

impl CouplingOperators {
    pub fn build(model: &Model) -> Self {
        let nc = model.mode_count();
        let nm = model.group_count();
        let mut stimulated = Vec::with_capacity(nc);
        let mut ratio = DVector::zeros(nc);
        for i in 0..nc {
            let total = model.emission[i] + model.absorption[i];
            ratio[i] = if total > 0.0 { model.emission[i] / total } else { 0.0 };
            let mut diag = DVector::zeros(nm);
            for p in 0..nm {
                diag[p] = -total * model.g[(i, p)];
            }
            stimulated.push(diag);
        }
        let mut base_shift = DVector::zeros(nm);
        for i in 0..nc {
            base_shift.axpy(ratio[i], &stimulated[i], 1.0);
        }
        CouplingOperators { stimulated, base_shift, emission_ratio: ratio }
    }

    pub fn mode_count(&self) -> usize {
        self.stimulated.len()
    }

    /// max_p |[A⁽ⁱ⁾]_pp| per operator.
    pub fn operator_norms(&self) -> Vec<f64> {
        self.stimulated.iter().map(|d| d.amax()).collect()
    }
}

/// Projected operator blocks of one hierarchy level: T⁽ⁱ⁾_{j,k} = B_jᵀA⁽ⁱ⁾B_k
/// for the in-range neighbours k = j−1, j, j+1.
#[derive(Debug, Clone)]
pub struct LevelBlocks {
    pub below: Option<Vec<DMatrix<f64>>>,
    pub diagonal: Vec<DMatrix<f64>>,
    pub above: Option<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    /// Orthonormal level bases B_j, each N_m × d_j.
    pub bases: Vec<DMatrix<f64>>,
    /// Dual excitation profiles as columns: [G e_i]_j = δ_ij, each in S_0.
    pub duals: DMatrix<f64>,
    pub blocks: Vec<LevelBlocks>,
    /// G·B_0, the only coupling the cavity equations need.
    pub reduced_coupling: DMatrix<f64>,
    /// u_j = B_jᵀ·𝟙, projections of the uniform pump direction.
    pub pump_components: Vec<DVector<f64>>,
    /// Per level j, the d_j × N_c matrix with column i equal to B_jᵀ(A_i g_i),
    /// so the stimulated pump contribution is S_j · n.
    pub stim_components: Vec<DMatrix<f64>>,
    pub emission_ratio: DVector<f64>,
    pub rank_tol: f64,
    pub trunc_tol: f64,
    /// True when level extension returned empty before max_level was reached.
    pub closed: bool,
    pub rank_warning: Option<String>,
}

/// Residual report produced by [`Hierarchy::verify`].
#[derive(Debug, Clone, Serialize)]
pub struct HierarchyReport {
    pub level_dims: Vec<usize>,
    /// Running totals: variables tracked by a level-j truncated simulation.
    pub cumulative_dims: Vec<usize>,
    pub orthonormality_residual: f64,
    pub cross_level_residual: f64,
    /// max over i and |j−k| ≥ 2 of ‖B_jᵀA⁽ⁱ⁾B_k‖_max / ‖A⁽ⁱ⁾‖_max.
    pub tridiagonality_residual: f64,
    /// ‖G·E − I‖_max over the duals (full-rank case).
    pub dual_identity_residual: f64,
    pub closed: bool,
}

/// Basis of the row space of G plus the dual profiles.
///
/// The duals solve [G e_i]_j = δ_ij inside S_0; with a rank-deficient G they
/// are the minimum-norm least-squares solution and a diagnostic is returned.
pub fn build_level0(
    model: &Model,
    rank_tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Option<String>)> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::config("rank_tol must lie in (0, 1)"));
    }
    let nc = model.mode_count();
    let gt = model.coupling.transpose(); // N_m × N_c
    let svd = gt.svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    if smax == 0.0 {
        return Err(Error::config("coupling matrix is zero; no cavity-molecule coupling"));
    }
    let rank = sigma.iter().filter(|s| **s > rank_tol * smax).count();
    let basis = u.columns(0, rank).into_owned();
    // duals: minimum-norm pseudoinverse columns, Gᵀ = UΣVᵀ ⇒ G⁺ = U Σ⁻¹ Vᵀ
    let mut duals = DMatrix::zeros(model.group_count(), nc);
    for r in 0..rank {
        let col = u.column(r);
        for i in 0..nc {
            let w = vt[(r, i)] / sigma[r];
            duals.column_mut(i).axpy(w, &col, 1.0);
        }
    }
    let warning = (rank < nc).then(|| {
        format!(
            "coupling matrix is numerically rank-deficient: rank {rank} < {nc} modes; \
             duals solve the constraint in the least-squares sense"
        )
    });
    Ok((basis, duals, warning))
}

/// Apply every coupling operator to the deepest basis, strip the components
/// inside the existing levels, and orthonormalize what remains. An empty
/// result means the hierarchy closed.
pub fn extend_level(
    ops: &CouplingOperators,
    bases: &[DMatrix<f64>],
    trunc_tol: f64,
) -> DMatrix<f64> {
    let last = bases.last().expect("at least level 0");
    let nm = last.nrows();
    let d = last.ncols();
    let nc = ops.mode_count();
    let mut image = DMatrix::<f64>::zeros(nm, nc * d);
    for (i, diag) in ops.stimulated.iter().enumerate() {
        for k in 0..d {
            let mut col = image.column_mut(i * d + k);
            let src = last.column(k);
            for p in 0..nm {
                col[p] = diag[p] * src[p];
            }
        }
    }
    let scale = spectral_norm(&image);
    if scale == 0.0 {
        return DMatrix::zeros(nm, 0);
    }
    for _ in 0..2 {
        project_out(&mut image, bases);
    }
    let kept = orthonormal_columns(&image, trunc_tol * scale);
    if kept.ncols() == 0 {
        return kept;
    }
    polish_against(kept, bases)
}

/// Spectral norm via power iteration on YᵀY; deterministic fixed-count loop.
fn spectral_norm(y: &DMatrix<f64>) -> f64 {
    let n = y.ncols();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = y.tr_mul(&(y * &v));
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda.sqrt()
}

fn project_out(y: &mut DMatrix<f64>, bases: &[DMatrix<f64>]) {
    for b in bases {
        let coeff = b.tr_mul(y);
        y.gemm(-1.0, b, &coeff, 1.0);
    }
}

/// Orthonormal basis of the column space keeping singular values above the
/// absolute threshold. QR first so the SVD runs on the small square factor.
fn orthonormal_columns(y: &DMatrix<f64>, tol_abs: f64) -> DMatrix<f64> {
    let nm = y.nrows();
    let qr = y.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let svd = r.svd(true, false);
    let u = svd.u.as_ref().expect("svd with u");
    let sigma = &svd.singular_values;
    let keep = sigma.iter().filter(|s| **s > tol_abs).count();
    if keep == 0 {
        return DMatrix::zeros(nm, 0);
    }
    &q * u.columns(0, keep)
}

/// Re-orthogonalize a freshly extracted basis against the existing levels.
/// Directions extracted near the truncation threshold pick up lower-level
/// contamination of order eps·‖Y‖/σ, so two projection sweeps plus a thin QR
/// bring every cross-level overlap back to machine precision.
fn polish_against(mut basis: DMatrix<f64>, bases: &[DMatrix<f64>]) -> DMatrix<f64> {
    for _ in 0..2 {
        project_out(&mut basis, bases);
        basis = basis.qr().q();
    }
    basis
}

impl Hierarchy {
    /// Build levels 0..=max_level and fill every projected block.
    ///
    /// `rank_tol` separates numerical rank from noise; `trunc_tol` (when
    /// larger) discards weakly coupled directions per level, trading
    /// tri-diagonality residual for smaller level dimensions.
    pub fn build(
        model: &Model,
        max_level: usize,
        rank_tol: f64,
        trunc_tol: Option<f64>,
    ) -> Result<Hierarchy> {
        let trunc = trunc_tol.unwrap_or(rank_tol).max(rank_tol);
        if !(trunc > 0.0 && trunc < 1.0) {
            return Err(Error::config("trunc_tol must lie in (0, 1)"));
        }
        let ops = CouplingOperators::build(model);
        let (b0, duals, rank_warning) = build_level0(model, rank_tol)?;
        let mut bases = vec![b0];
        let mut closed = false;
        for _ in 0..max_level {
            let next = extend_level(&ops, &bases, trunc);
            if next.ncols() == 0 {
                closed = true;
                break;
            }
            bases.push(next);
        }
        let mut h = Hierarchy {
            bases,
            duals,
            blocks: Vec::new(),
            reduced_coupling: DMatrix::zeros(0, 0),
            pump_components: Vec::new(),
            stim_components: Vec::new(),
            emission_ratio: ops.emission_ratio.clone(),
            rank_tol,
            trunc_tol: trunc,
            closed,
            rank_warning,
        };
        h.project_operators(model, &ops);
        Ok(h)
    }

    /// Build to closure: extend until a level comes back empty.
    pub fn build_to_closure(model: &Model, rank_tol: f64, trunc_tol: Option<f64>) -> Result<Hierarchy> {
        Self::build(model, model.group_count(), rank_tol, trunc_tol)
    }

    fn project_operators(&mut self, model: &Model, ops: &CouplingOperators) {
        let levels = self.bases.len();
        let nc = model.mode_count();
        let nm = model.group_count();
        self.reduced_coupling = &model.coupling * &self.bases[0];
        let ones = DVector::from_element(nm, 1.0);
        self.pump_components = self.bases.iter().map(|b| b.tr_mul(&ones)).collect();

        // stimulated pump matrix: column i is B_jᵀ(A_i g_i)
        let mut weighted = DMatrix::<f64>::zeros(nm, nc);
        for i in 0..nc {
            for p in 0..nm {
                weighted[(p, i)] = model.absorption[i] * model.g[(i, p)];
            }
        }
        self.stim_components = self.bases.iter().map(|b| b.tr_mul(&weighted)).collect();

        self.blocks.clear();
        for j in 0..levels {
            let diagonal = project_family(ops, &self.bases[j], &self.bases[j]);
            let above = (j + 1 < levels)
                .then(|| project_family(ops, &self.bases[j], &self.bases[j + 1]));
            // Hermiticity: T⁽ⁱ⁾_{j+1,j} is the transpose of T⁽ⁱ⁾_{j,j+1},
            // so the below-blocks are derived, not recomputed.
            let below = (j > 0).then(|| {
                self.blocks[j - 1]
                    .above
                    .as_ref()
                    .expect("previous level has above-blocks")
                    .iter()
                    .map(|t| t.transpose())
                    .collect()
            });
            self.blocks.push(LevelBlocks { below, diagonal, above });
        }
    }

    pub fn level_count(&self) -> usize {
        self.bases.len()
    }

    pub fn level_dims(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.ncols()).collect()
    }

    /// Running totals of level dimensions: the number of excitation profiles
    /// a level-j truncated simulation keeps track of.
    pub fn cumulative_dims(&self) -> Vec<usize> {
        let mut acc = 0;
        self.level_dims()
            .into_iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect()
    }

    /// c_j = B_jᵀ f for j = 0..=level.
    pub fn lift(&self, excitation: &DVector<f64>, level: usize) -> Vec<DVector<f64>> {
        self.bases[..=level]
            .iter()
            .map(|b| b.tr_mul(excitation))
            .collect()
    }

    /// f̂ = Σ_j B_j c_j.
    pub fn reconstruct(&self, coefficients: &[DVector<f64>]) -> DVector<f64> {
        let nm = self.bases[0].nrows();
        let mut f = DVector::zeros(nm);
        for (b, c) in self.bases.iter().zip(coefficients) {
            f.gemv(1.0, b, c, 1.0);
        }
        f
    }

    /// Dense-oracle residual report: orthonormality, cross-level overlaps,
    /// tri-diagonality of the full projected operators, and the dual identity.
    pub fn verify(&self, model: &Model) -> HierarchyReport {
        let ops = CouplingOperators::build(model);
        let levels = self.bases.len();
        let mut ortho: f64 = 0.0;
        let mut cross: f64 = 0.0;
        for j in 0..levels {
            let gram = self.bases[j].tr_mul(&self.bases[j]);
            let identity = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
            ortho = ortho.max((gram - identity).amax());
            for k in 0..j {
                cross = cross.max(self.bases[j].tr_mul(&self.bases[k]).amax());
            }
        }
        let norms = ops.operator_norms();
        let mut tri: f64 = 0.0;
        for (i, diag) in ops.stimulated.iter().enumerate() {
            if norms[i] == 0.0 {
                continue;
            }
            for j in 0..levels {
                for k in 0..levels {
                    if (j as isize - k as isize).abs() < 2 {
                        continue;
                    }
                    let scaled = scale_rows(diag, &self.bases[k]);
                    let block = self.bases[j].tr_mul(&scaled);
                    tri = tri.max(block.amax() / norms[i]);
                }
            }
        }
        let product = &model.coupling * &self.duals;
        let identity = DMatrix::<f64>::identity(product.nrows(), product.ncols());
        let dual = (product - identity).amax();
        HierarchyReport {
            level_dims: self.level_dims(),
            cumulative_dims: self.cumulative_dims(),
            orthonormality_residual: ortho,
            cross_level_residual: cross,
            tridiagonality_residual: tri,
            dual_identity_residual: dual,
            closed: self.closed,
        }
    }
}

fn scale_rows(diag: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col.component_mul_assign(diag);
    }
    out
}

fn project_family(
    ops: &CouplingOperators,
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
) -> Vec<DMatrix<f64>> {
    ops.stimulated
        .iter()
        .map(|diag| left.tr_mul(&scale_rows(diag, right)))
        .collect()
}

/// Sampled excitation profiles of a 1D model for plotting: positions, the
/// mode intensities |Φ_i(x_j)|² and the dual profiles e_i(x_j).
#[derive(Debug, Clone, Serialize)]
pub struct ProfileTable {
    pub positions: Vec<f64>,
    pub mode_names: Vec<String>,
    /// intensities[i][j] = |Φ_i(x_j)|²
    pub intensities: Vec<Vec<f64>>,
    /// profiles[i][j] = e_i(x_j)
    pub profiles: Vec<Vec<f64>>,
}

/// Tabulate dual profiles against mode intensities for a 1D model.
pub fn emit_profiles_1d(model: &Model, hierarchy: &Hierarchy, count: usize) -> Result<ProfileTable> {
    if model.grid.dimensions != 1 {
        return Err(Error::config("profile tables require a 1D model"));
    }
    if count > model.mode_count() {
        return Err(Error::config(format!(
            "profile count {count} exceeds the {} cavity modes",
            model.mode_count()
        )));
    }
    let positions: Vec<f64> = model.grid.positions.iter().map(|p| p[0]).collect();
    let mut intensities = Vec::with_capacity(count);
    let mut profiles = Vec::with_capacity(count);
    let mut names = Vec::with_capacity(count);
    for i in 0..count {
        names.push(model.modes[i].name());
        intensities.push(model.g.row(i).iter().copied().collect());
        profiles.push(hierarchy.duals.column(i).iter().copied().collect());
    }
    Ok(ProfileTable {
        positions,
        mode_names: names,
        intensities,
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use approx::assert_relative_eq;

    fn toy_model_1d() -> Model {
        // N_c = 2, N_m = 12: small enough for dense brute-force oracles
        let mut cfg = ModelConfig::default();
        cfg.dimensions = 1;
        cfg.max_level = 1;
        cfg.grid.points_per_axis = 12;
        cfg.grid.spacing = Some(0.5);
        cfg.density = 1e6;
        Model::build(&cfg).unwrap()
    }

    #[test]
    fn level0_rank_matches_mode_count() {
        let model = toy_model_1d();
        let (b0, duals, warning) = build_level0(&model, 1e-10).unwrap();
        assert_eq!(b0.ncols(), 2);
        assert!(warning.is_none());
        let product = &model.coupling * &duals;
        assert_relative_eq!(product[(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(product[(1, 1)], 1.0, epsilon = 1e-10);
        assert!(product[(0, 1)].abs() < 1e-10);
        assert!(product[(1, 0)].abs() < 1e-10);
    }

    #[test]
    fn single_mode_dual_is_scaled_row() {
        // one cavity mode: e_0 = G_0ᵀ/‖G_0‖², the profile is the mode function
        let mut cfg = ModelConfig::default();
        cfg.dimensions = 1;
        cfg.max_level = 0;
        cfg.grid.points_per_axis = 17;
        cfg.grid.spacing = Some(0.4);
        cfg.density = 1e6;
        let model = Model::build(&cfg).unwrap();
        let (_, duals, _) = build_level0(&model, 1e-12).unwrap();
        let row = model.coupling.row(0).transpose();
        let expected = &row / row.norm_squared();
        assert!((duals.column(0) - expected).amax() < 1e-18);
    }

    #[test]
    fn toy_hierarchy_closes_and_matches_krylov_oracle() {
        let model = toy_model_1d();
        let h = Hierarchy::build_to_closure(&model, 1e-10, None).unwrap();
        assert!(h.closed);
        let total: usize = h.level_dims().iter().sum();

        // dense brute-force oracle: grow span{rows of G} under the diagonal
        // operators until the dimension stops increasing
        let ops = CouplingOperators::build(&model);
        let nm = model.group_count();
        let mut span: Vec<DVector<f64>> = Vec::new();
        for i in 0..model.mode_count() {
            add_to_span(&mut span, model.coupling.row(i).transpose());
        }
        loop {
            let before = span.len();
            let snapshot = span.clone();
            for v in &snapshot {
                for diag in &ops.stimulated {
                    let mut w = v.clone();
                    w.component_mul_assign(diag);
                    add_to_span(&mut span, w);
                }
            }
            if span.len() == before || span.len() == nm {
                break;
            }
        }
        assert_eq!(total, span.len(), "hierarchy span ≠ Krylov span");
    }

    fn add_to_span(span: &mut Vec<DVector<f64>>, mut v: DVector<f64>) {
        let scale = v.norm();
        if scale == 0.0 {
            return;
        }
        v /= scale;
        for _ in 0..2 {
            for b in span.iter() {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-10 {
            span.push(v / norm);
        }
    }

    #[test]
    fn blocks_are_transposes_and_symmetric() {
        let model = toy_model_1d();
        let h = Hierarchy::build(&model, 2, 1e-10, None).unwrap();
        for (j, blocks) in h.blocks.iter().enumerate() {
            for (i, diag_block) in blocks.diagonal.iter().enumerate() {
                let scale = diag_block.amax().max(1e-300);
                let sym = (diag_block - diag_block.transpose()).amax();
                assert!(sym < 1e-13 * scale, "level {j} operator {i}: asymmetry {sym}");
            }
            if let Some(above) = &blocks.above {
                let below_next = h.blocks[j + 1].below.as_ref().unwrap();
                for (up, down) in above.iter().zip(below_next) {
                    assert_eq!(up.transpose(), *down);
                }
            }
        }
    }

    #[test]
    fn lift_reconstruct_projects_onto_subspace() {
        let model = toy_model_1d();
        let h = Hierarchy::build(&model, 1, 1e-10, None).unwrap();
        // f inside S_0 comes back unchanged
        let f0: DVector<f64> = &h.bases[0] * DVector::from_vec(vec![0.3, -1.2]);
        let c = h.lift(&f0, 1);
        let back = h.reconstruct(&c);
        assert!((back - &f0).amax() < 1e-12 * f0.amax());
    }

    #[test]
    fn profiles_require_1d() {
        let model = Model::build(&ModelConfig::default()).unwrap();
        let h = Hierarchy::build(&model, 0, 1e-10, None).unwrap();
        assert!(emit_profiles_1d(&model, &h, 3).is_err());
    }
}
