//! Physical system assembly: cavity modes, molecular grid, coupling matrix
//! and rate constants, all in internal units (κ = 1, l_ho = 1).

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::hermite;
use crate::pump::PumpSchedule;
use nalgebra::{DMatrix, DVector};

/// One cavity mode with its oscillator quantum numbers and per-molecule
/// absorption/emission rates (units κ).
#[derive(Debug, Clone, PartialEq)]
pub struct CavityMode {
    pub mx: u32,
    pub my: u32,
    pub absorption: f64,
    pub emission: f64,
}

impl CavityMode {
    pub fn level(&self) -> u32 {
        self.mx + self.my
    }

    /// Display name, e.g. `[0,1]`.
    pub fn name(&self) -> String {
        format!("[{},{}]", self.mx, self.my)
    }

    /// CSV column label, e.g. `n_0_1`.
    pub fn column(&self) -> String {
        format!("n_{}_{}", self.mx, self.my)
    }
}

/// Regular lattice of molecular groups.
#[derive(Debug, Clone)]
pub struct MolecularGrid {
    /// Group positions in l_ho; the y entry is 0 for 1D models.
    pub positions: Vec<[f64; 2]>,
    /// Molecules per group, N_j (uniform over the default lattice).
    pub molecules_per_group: f64,
    /// Molecules per l_ho² (2D) or per l_ho (1D).
    pub density: f64,
    pub spacing: f64,
    pub points_per_axis: usize,
    pub dimensions: u8,
}

impl MolecularGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Cell measure: spacing² in 2D, spacing in 1D.
    pub fn cell_measure(&self) -> f64 {
        match self.dimensions {
            1 => self.spacing,
            _ => self.spacing * self.spacing,
        }
    }
}

/// Immutable physical description shared by all solvers.
#[derive(Debug, Clone)]
pub struct Model {
    pub modes: Vec<CavityMode>,
    pub grid: MolecularGrid,
    /// Per-mode absorption rates A_i as a vector, for the hot paths.
    pub absorption: DVector<f64>,
    /// Per-mode emission rates E_i.
    pub emission: DVector<f64>,
    /// Single-molecule couplings g_ij = |Φ_i(x_j)|², N_c × N_m.
    pub g: DMatrix<f64>,
    /// Collective couplings G_ij = g_ij · N_j.
    pub coupling: DMatrix<f64>,
    /// Overall mode decay γ_i = A_i Σ_j G_ij + κ.
    pub gamma: DVector<f64>,
    /// Non-radiative molecular decay Γ↓ (units κ).
    pub gamma_down: f64,
    /// Cavity decay; 1 by the choice of units.
    pub kappa: f64,
}

/// All (mx, my) with mx + my ≤ max_level, ordered by (level, mx); A and E
/// are assigned by energy level mx + my.
pub fn build_modes(
    max_level: u32,
    a_per_level: &[f64],
    e_per_level: &[f64],
) -> Result<Vec<CavityMode>> {
    check_rates(max_level, a_per_level, e_per_level)?;
    let mut modes = Vec::new();
    for level in 0..=max_level {
        for mx in 0..=level {
            modes.push(CavityMode {
                mx,
                my: level - mx,
                absorption: a_per_level[level as usize],
                emission: e_per_level[level as usize],
            });
        }
    }
    Ok(modes)
}

/// 1D variant: modes m = 0..=max_level with my pinned to 0.
pub fn build_modes_1d(
    max_level: u32,
    a_per_level: &[f64],
    e_per_level: &[f64],
) -> Result<Vec<CavityMode>> {
    check_rates(max_level, a_per_level, e_per_level)?;
    Ok((0..=max_level)
        .map(|m| CavityMode {
            mx: m,
            my: 0,
            absorption: a_per_level[m as usize],
            emission: e_per_level[m as usize],
        })
        .collect())
}

fn check_rates(max_level: u32, a: &[f64], e: &[f64]) -> Result<()> {
    let need = max_level as usize + 1;
    if a.len() < need || e.len() < need {
        return Err(Error::config(format!(
            "rate lists need {need} entries for max_level {max_level} \
             (got A: {}, E: {})",
            a.len(),
            e.len()
        )));
    }
    if a[..need].iter().chain(&e[..need]).any(|r| *r < 0.0 || !r.is_finite()) {
        return Err(Error::config("absorption/emission rates must be finite and >= 0"));
    }
    Ok(())
}

/// |Φ_mx(x)|²·|Φ_my(y)|² for 2D models, |Φ_mx(x)|² for 1D.
pub fn mode_intensity(mode: &CavityMode, position: [f64; 2], dimensions: u8) -> f64 {
    match dimensions {
        1 => hermite::intensity(mode.mx, position[0]),
        _ => hermite::intensity(mode.mx, position[0]) * hermite::intensity(mode.my, position[1]),
    }
}

impl Model {
    pub fn build(cfg: &ModelConfig) -> Result<Model> {
        let spacing = cfg.grid.resolve_spacing()?;
        if spacing <= 0.0 || !spacing.is_finite() {
            return Err(Error::config("grid spacing must be positive"));
        }
        if cfg.grid.points_per_axis == 0 {
            return Err(Error::config("grid must contain at least one point"));
        }
        if cfg.density <= 0.0 || !cfg.density.is_finite() {
            return Err(Error::config("density must be positive"));
        }
        let modes = match cfg.dimensions {
            1 => build_modes_1d(cfg.max_level, &cfg.a_per_level, &cfg.e_per_level)?,
            2 => build_modes(cfg.max_level, &cfg.a_per_level, &cfg.e_per_level)?,
            d => return Err(Error::config(format!("dimensions must be 1 or 2, got {d}"))),
        };

        let n = cfg.grid.points_per_axis;
        let offset = (n as f64 - 1.0) / 2.0;
        let axis: Vec<f64> = (0..n).map(|k| (k as f64 - offset) * spacing).collect();
        let positions: Vec<[f64; 2]> = match cfg.dimensions {
            1 => axis.iter().map(|&x| [x, 0.0]).collect(),
            _ => {
                let mut p = Vec::with_capacity(n * n);
                for &x in &axis {
                    for &y in &axis {
                        p.push([x, y]);
                    }
                }
                p
            }
        };

        let grid = MolecularGrid {
            molecules_per_group: cfg.density
                * match cfg.dimensions {
                    1 => spacing,
                    _ => spacing * spacing,
                },
            positions,
            density: cfg.density,
            spacing,
            points_per_axis: n,
            dimensions: cfg.dimensions,
        };

        let nc = modes.len();
        let nm = grid.len();
        let mut g = DMatrix::<f64>::zeros(nc, nm);
        for (i, mode) in modes.iter().enumerate() {
            for (j, pos) in grid.positions.iter().enumerate() {
                g[(i, j)] = mode_intensity(mode, *pos, cfg.dimensions);
            }
        }
        let coupling = &g * grid.molecules_per_group;

        let absorption = DVector::from_iterator(nc, modes.iter().map(|m| m.absorption));
        let emission = DVector::from_iterator(nc, modes.iter().map(|m| m.emission));
        let kappa = 1.0;
        let gamma = DVector::from_iterator(
            nc,
            (0..nc).map(|i| absorption[i] * coupling.row(i).sum() + kappa),
        );

        Ok(Model {
            modes,
            grid,
            absorption,
            emission,
            g,
            coupling,
            gamma,
            gamma_down: cfg.gamma_down,
            kappa,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn group_count(&self) -> usize {
        self.grid.len()
    }

    /// Pump schedule resolved from the model config.
    pub fn pump_from_config(cfg: &ModelConfig) -> Result<PumpSchedule> {
        PumpSchedule::from_config(&cfg.pump)
    }

    /// Index of the mode named (mx, my), if present.
    pub fn mode_index(&self, mx: u32, my: u32) -> Option<usize> {
        self.modes.iter().position(|m| m.mx == mx && m.my == my)
    }
}
