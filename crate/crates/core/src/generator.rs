//! Finite-volume discretization of the overdamped generator
//! `L f = -(1/gamma) grad V . grad f + (1/(beta gamma)) Laplace f`
//! on bounded Cartesian or polar grids with reflecting boundaries, and the
//! spectral checks built on it: level-set projection, H1 projection error,
//! Galerkin effective rates, the eigenvalue error bound, and large-offset
//! predictions of the effective coefficients.
//!
//! The operator is written in divergence form,
//! `L f = (1/(beta gamma)) e^{beta V} div(e^{-beta V} grad f)`, and discretized
//! with one flux per grid edge: `(L f)_i = sum_j k_ij (f_j - f_i) / m_i` with
//! node masses `m_i = e^{-beta V(x_i)} vol_i` and edge conductances
//! `k_ij = e^{-beta V(mid_ij)} face_ij / (dist_ij beta gamma)`. This is a
//! second-order central scheme whose row sums vanish and which is exactly
//! self-adjoint in the `m`-weighted inner product. Omitting fluxes through
//! the outer faces gives the zero-flux boundary.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{smallest_eigenpairs, CsrMatrix, EigenSettings};
use crate::par::Exec;
use crate::pcca::pcca_vectors_on_support;
use crate::potentials::PotentialSpec;
use crate::projection::{GridAxis, RCGrid, ReactionCoordinate};

/// Minimum nodes per dimension.
pub const MIN_RESOLUTION: usize = 50;

/// Largest boundary node mass relative to the largest node mass.
pub const BOUNDARY_MASS_TOL: f64 = 1e-10;

/// Relative spread above which a plateau value is flagged.
pub const PLATEAU_TOL: f64 = 0.05;

/// Grid nodes lighter than this fraction of the heaviest node cannot serve
/// as PCCA+ simplex vertices.
pub const GRID_SUPPORT_TOL: f64 = 1e-3;

/// Cell-centered node layouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NodeLayout {
    /// Tensor grid; the last axis varies fastest in the node order.
    Cartesian {
        lower: Vec<f64>,
        upper: Vec<f64>,
        nodes: Vec<usize>,
    },
    /// Annulus `[r_min, r_max] x (-pi, pi]`, radius outer in the node order.
    Polar {
        r_min: f64,
        r_max: f64,
        n_r: usize,
        n_phi: usize,
    },
}

impl NodeLayout {
    pub fn cartesian(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Self {
        NodeLayout::Cartesian { lower, upper, nodes }
    }

    /// Polar annulus for the lemon slice at `n x n` nodes.
    pub fn lemon_slice(n: usize) -> Self {
        NodeLayout::Polar {
            r_min: 0.05,
            r_max: 2.6,
            n_r: n,
            n_phi: n,
        }
    }

    /// Box for the tilted double well at `beta = 0.4`.
    pub fn double_well(nx: usize, ny: usize) -> Self {
        NodeLayout::cartesian(vec![-1.5, -9.0], vec![5.5, 13.0], vec![nx, ny])
    }

    pub fn dim(&self) -> usize {
        match self {
            NodeLayout::Cartesian { nodes, .. } => nodes.len(),
            NodeLayout::Polar { .. } => 2,
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            NodeLayout::Cartesian { nodes, .. } => nodes.iter().product(),
            NodeLayout::Polar { n_r, n_phi, .. } => n_r * n_phi,
        }
    }

    /// One-dimensional grid with one bin per node slice along `axis`, so
    /// that each bin is an exact discrete level set of that coordinate.
    /// Polar axes are `0 = r` and `1 = phi` (periodic).
    pub fn slice_grid(&self, axis: usize) -> Result<RCGrid> {
        let (lo, hi, n, periodic) = match self {
            NodeLayout::Cartesian { lower, upper, nodes } if axis < nodes.len() => {
                (lower[axis], upper[axis], nodes[axis], false)
            }
            NodeLayout::Polar { r_min, r_max, n_r, .. } if axis == 0 => (*r_min, *r_max, *n_r, false),
            NodeLayout::Polar { n_phi, .. } if axis == 1 => (-PI, PI, *n_phi, true),
            _ => return Err(Error::invalid(format!("layout has no axis {axis}"))),
        };
        let width = (hi - lo) / n as f64;
        let axis = if periodic {
            GridAxis::periodic(lo, width, n, hi - lo)
        } else {
            GridAxis::new(lo, width, n)
        };
        RCGrid::new(vec![axis])
    }

    fn validate(&self) -> Result<()> {
        let (counts, ranges): (Vec<usize>, Vec<(f64, f64)>) = match self {
            NodeLayout::Cartesian { lower, upper, nodes } => {
                if lower.len() != nodes.len() || upper.len() != nodes.len() || nodes.is_empty() {
                    return Err(Error::invalid("Cartesian layout needs matching lower, upper and nodes"));
                }
                (
                    nodes.clone(),
                    lower.iter().copied().zip(upper.iter().copied()).collect(),
                )
            }
            NodeLayout::Polar {
                r_min,
                r_max,
                n_r,
                n_phi,
            } => {
                if !(*r_min > 0.0) {
                    return Err(Error::invalid("polar layout needs r_min > 0"));
                }
                (vec![*n_r, *n_phi], vec![(*r_min, *r_max), (-PI, PI)])
            }
        };
        for (&n, &(a, b)) in counts.iter().zip(&ranges) {
            if n < MIN_RESOLUTION {
                return Err(Error::invalid(format!(
                    "grid resolution {n} is below the minimum of {MIN_RESOLUTION} per dimension"
                )));
            }
            if !(b > a && a.is_finite() && b.is_finite()) {
                return Err(Error::invalid(format!("empty grid range [{a}, {b}]")));
            }
        }
        Ok(())
    }
}

/// Edge of the flux graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// `e^{-beta V(mid)} face / dist`, normalized by the partition sum, so
    /// that `sum_e w_e (g_i - g_j)^2` approximates `||grad g||^2` in `L2(mu)`.
    pub w: f64,
}

#[derive(Clone, Debug)]
pub struct GeneratorGrid {
    pub layout: NodeLayout,
    /// Cartesian node coordinates, `n x dim` row-major.
    pub positions: Vec<f64>,
    /// Normalized node masses.
    pub weights: Vec<f64>,
    pub edges: Vec<Edge>,
    pub operator: CsrMatrix,
    pub beta: f64,
    pub gamma: f64,
}

struct AxisNodes {
    lower: f64,
    h: f64,
    n: usize,
}

impl AxisNodes {
    fn at(&self, i: f64) -> f64 {
        self.lower + (i + 0.5) * self.h
    }
}

/// Build the generator of a named potential.
pub fn build_generator(spec: &PotentialSpec, layout: &NodeLayout, beta: f64, gamma: f64) -> Result<GeneratorGrid> {
    if spec.dim() != layout.dim() {
        return Err(Error::invalid(format!(
            "{} is {}-dimensional, the layout is {}-dimensional",
            spec.name(),
            spec.dim(),
            layout.dim()
        )));
    }
    build_generator_with(|x| spec.value(x), layout, beta, gamma, true)
}

/// Build the generator of an arbitrary potential. With `check_boundary`
/// the boundary mass criterion is enforced.
pub fn build_generator_with<F>(
    potential: F,
    layout: &NodeLayout,
    beta: f64,
    gamma: f64,
    check_boundary: bool,
) -> Result<GeneratorGrid>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    layout.validate()?;
    for (name, v) in [("beta", beta), ("gamma", gamma)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
    }
    let exec = Exec::default();
    let n = layout.n_nodes();
    let d = layout.dim();

    // raw geometry: node positions and volumes, edge midpoints with face/dist
    let mut positions = vec![0.0; n * d];
    let mut volumes = vec![0.0; n];
    let mut boundary = vec![false; n];
    // (i, j, midpoint, face / dist)
    let mut raw_edges: Vec<(usize, usize, Vec<f64>, f64)> = Vec::new();

    match layout {
        NodeLayout::Cartesian { lower, upper, nodes } => {
            let axes: Vec<AxisNodes> = (0..d)
                .map(|k| AxisNodes {
                    lower: lower[k],
                    h: (upper[k] - lower[k]) / nodes[k] as f64,
                    n: nodes[k],
                })
                .collect();
            let vol: f64 = axes.iter().map(|a| a.h).product();
            let strides: Vec<usize> = (0..d).map(|k| nodes[k + 1..].iter().product()).collect();
            for node in 0..n {
                let idx: Vec<usize> = (0..d).map(|k| (node / strides[k]) % nodes[k]).collect();
                for k in 0..d {
                    positions[node * d + k] = axes[k].at(idx[k] as f64);
                    if idx[k] == 0 || idx[k] + 1 == axes[k].n {
                        boundary[node] = true;
                    }
                }
                volumes[node] = vol;
                for k in 0..d {
                    if idx[k] + 1 < axes[k].n {
                        let mut mid: Vec<f64> = positions[node * d..(node + 1) * d].to_vec();
                        mid[k] = axes[k].at(idx[k] as f64 + 0.5);
                        let geom = vol / (axes[k].h * axes[k].h);
                        raw_edges.push((node, node + strides[k], mid, geom));
                    }
                }
            }
        }
        NodeLayout::Polar {
            r_min,
            r_max,
            n_r,
            n_phi,
        } => {
            let ra = AxisNodes {
                lower: *r_min,
                h: (r_max - r_min) / *n_r as f64,
                n: *n_r,
            };
            let pa = AxisNodes {
                lower: -PI,
                h: 2.0 * PI / *n_phi as f64,
                n: *n_phi,
            };
            let cart = |r: f64, phi: f64| vec![r * phi.cos(), r * phi.sin()];
            for ir in 0..ra.n {
                let r = ra.at(ir as f64);
                for ip in 0..pa.n {
                    let node = ir * pa.n + ip;
                    let phi = pa.at(ip as f64);
                    positions[node * 2] = r * phi.cos();
                    positions[node * 2 + 1] = r * phi.sin();
                    volumes[node] = r * ra.h * pa.h;
                    boundary[node] = ir == 0 || ir + 1 == ra.n;
                    if ir + 1 < ra.n {
                        let rm = ra.at(ir as f64 + 0.5);
                        raw_edges.push((node, node + pa.n, cart(rm, phi), rm * pa.h / ra.h));
                    }
                    let next = ir * pa.n + (ip + 1) % pa.n;
                    let pm = pa.at(ip as f64 + 0.5);
                    raw_edges.push((node, next, cart(r, pm), ra.h / (r * pa.h)));
                }
            }
        }
    }

    let v_nodes: Vec<f64> = exec
        .map(n, |i| potential(&positions[i * d..(i + 1) * d]))
        .into_iter()
        .collect::<Result<_>>()?;
    let v_edges: Vec<f64> = exec
        .map_slice(&raw_edges, |e| potential(&e.2))
        .into_iter()
        .collect::<Result<_>>()?;
    let vmin = v_nodes.iter().copied().fold(f64::INFINITY, f64::min);
    let mut weights: Vec<f64> = (0..n)
        .map(|i| (-beta * (v_nodes[i] - vmin)).exp() * volumes[i])
        .collect();
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);

    if check_boundary {
        let max_w = weights.iter().copied().fold(0.0, f64::max);
        let max_b = (0..n).filter(|&i| boundary[i]).map(|i| weights[i]).fold(0.0, f64::max);
        if max_b > BOUNDARY_MASS_TOL * max_w {
            return Err(Error::DomainTooSmall(format!(
                "boundary node mass reaches {:.3e} of the maximum (limit {BOUNDARY_MASS_TOL:e})",
                max_b / max_w
            )));
        }
    }

    let edges: Vec<Edge> = raw_edges
        .iter()
        .zip(&v_edges)
        .map(|(e, &v)| Edge {
            i: e.0,
            j: e.1,
            w: (-beta * (v - vmin)).exp() * e.3 / z,
        })
        .collect();

    let scale = 1.0 / (beta * gamma);
    let mut triplets = Vec::with_capacity(n + 2 * edges.len());
    let mut diag = vec![0.0; n];
    for e in &edges {
        let k = scale * e.w;
        triplets.push((e.i, e.j, k / weights[e.i]));
        triplets.push((e.j, e.i, k / weights[e.j]));
        diag[e.i] -= k / weights[e.i];
        diag[e.j] -= k / weights[e.j];
    }
    triplets.extend(diag.iter().enumerate().map(|(i, &v)| (i, i, v)));
    let operator = CsrMatrix::from_triplets(n, triplets);

    Ok(GeneratorGrid {
        layout: layout.clone(),
        positions,
        weights,
        edges,
        operator,
        beta,
        gamma,
    })
}

/// Eigenpairs of `-L`: rates ascending, eigenvectors `mu`-orthonormal.
#[derive(Clone, Debug)]
pub struct EigenSolution {
    pub rates: Vec<f64>,
    /// `n x k`, columns `psi_i`.
    pub vectors: DMatrix<f64>,
}

impl EigenSolution {
    pub fn timescales(&self) -> Vec<f64> {
        self.rates
            .iter()
            .map(|&k| if k > 0.0 { 1.0 / k } else { f64::INFINITY })
            .collect()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i).iter().copied().collect()
    }
}

impl GeneratorGrid {
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.positions[i * d..(i + 1) * d]
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.operator.mul_vec(f, &mut out);
        out
    }

    /// `<f, g>` in the node-mass inner product.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights.iter().zip(f).zip(g).map(|((w, a), b)| w * a * b).sum()
    }

    /// `|<L f, g> - <f, L g>|`.
    pub fn self_adjoint_residual(&self, f: &[f64], g: &[f64]) -> f64 {
        (self.inner(&self.apply(f), g) - self.inner(f, &self.apply(g))).abs()
    }

    /// `max_i |(L 1)_i|`.
    pub fn kernel_residual(&self) -> f64 {
        self.apply(&vec![1.0; self.n()]).iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Edge conductance `k_e = w_e / (beta gamma)`.
    fn conductance(&self, e: &Edge) -> f64 {
        e.w / (self.beta * self.gamma)
    }

    /// `M^{1/2} (-L) M^{-1/2}`, symmetric positive semi-definite.
    pub fn symmetric_operator(&self) -> CsrMatrix {
        let n = self.n();
        let mut diag = vec![0.0; n];
        let mut triplets = Vec::with_capacity(n + 2 * self.edges.len());
        for e in &self.edges {
            let k = self.conductance(e);
            let off = -k / (self.weights[e.i] * self.weights[e.j]).sqrt();
            triplets.push((e.i, e.j, off));
            triplets.push((e.j, e.i, off));
            diag[e.i] += k / self.weights[e.i];
            diag[e.j] += k / self.weights[e.j];
        }
        triplets.extend(diag.iter().enumerate().map(|(i, &v)| (i, i, v)));
        CsrMatrix::from_triplets(n, triplets)
    }

    pub fn eigenpairs(&self, k: usize) -> Result<EigenSolution> {
        self.eigenpairs_with(k, EigenSettings::default())
    }

    pub fn eigenpairs_with(&self, k: usize, settings: EigenSettings) -> Result<EigenSolution> {
        let (rates, u) = smallest_eigenpairs(&self.symmetric_operator(), k, settings)?;
        let inv_sqrt: Vec<f64> = self.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
        let vectors = DMatrix::from_fn(self.n(), k, |r, c| u[(r, c)] * inv_sqrt[r]);
        Ok(EigenSolution { rates, vectors })
    }

    /// Reaction coordinate at every node, `n x m` row-major.
    pub fn rc_values(&self, rc: &ReactionCoordinate) -> Result<Vec<f64>> {
        let m = rc.m();
        let mut out = vec![0.0; self.n() * m];
        for i in 0..self.n() {
            rc.apply_into(self.position(i), &mut out[i * m..(i + 1) * m])?;
        }
        Ok(out)
    }

    /// `sqrt(||g||^2 + sum_j ||d_j g||^2)` with `g = f - pf`, derivatives
    /// from edge difference quotients.
    pub fn h1_error(&self, f: &[f64], pf: &[f64]) -> f64 {
        let g: Vec<f64> = f.iter().zip(pf).map(|(a, b)| a - b).collect();
        let l2 = self.inner(&g, &g);
        let grad: f64 = self.edges.iter().map(|e| e.w * (g[e.i] - g[e.j]).powi(2)).sum();
        (l2 + grad).sqrt()
    }

    /// Dirichlet form `<-L g, g>`.
    pub fn dirichlet(&self, g: &[f64]) -> f64 {
        -self.inner(&self.apply(g), g)
    }
}

/// Assignment of grid nodes to reaction-coordinate bins.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelSets {
    pub bin_of_node: Vec<usize>,
    pub n_bins: usize,
    /// Bins holding no nodes; they are left out of the reduced space.
    pub empty_bins: Vec<usize>,
}

impl LevelSets {
    pub fn new(gen: &GeneratorGrid, rc: &ReactionCoordinate, grid: &RCGrid) -> Result<Self> {
        let m = rc.m();
        let z = gen.rc_values(rc)?;
        let raw: Vec<usize> = (0..gen.n())
            .map(|i| {
                grid.bin_index(&z[i * m..(i + 1) * m])
                    .ok_or_else(|| Error::invalid(format!("node {i} maps outside the reaction-coordinate grid")))
            })
            .collect::<Result<_>>()?;
        let mut used = vec![false; grid.n_bins()];
        for &b in &raw {
            used[b] = true;
        }
        let empty_bins: Vec<usize> = (0..grid.n_bins()).filter(|&b| !used[b]).collect();
        // renumber occupied bins consecutively
        let mut new_index = vec![usize::MAX; grid.n_bins()];
        let mut count = 0;
        for b in 0..grid.n_bins() {
            if used[b] {
                new_index[b] = count;
                count += 1;
            }
        }
        Ok(Self {
            bin_of_node: raw.iter().map(|&b| new_index[b]).collect(),
            n_bins: count,
            empty_bins,
        })
    }

    /// Every node its own level set (no reduction).
    pub fn identity(n: usize) -> Self {
        Self {
            bin_of_node: (0..n).collect(),
            n_bins: n,
            empty_bins: Vec::new(),
        }
    }

    pub fn masses(&self, gen: &GeneratorGrid) -> Vec<f64> {
        let mut nu = vec![0.0; self.n_bins];
        for (i, &b) in self.bin_of_node.iter().enumerate() {
            nu[b] += gen.weights[i];
        }
        nu
    }

    /// Mass-weighted average of `f` over each level set, broadcast to its
    /// nodes. The node masses carry the volume element, which for the polar
    /// angle equals the conditional weight `mu J^{-1/2}` along each ray, so
    /// this is the orthogonal projection onto functions of the coordinate.
    pub fn project(&self, gen: &GeneratorGrid, f: &[f64]) -> Vec<f64> {
        let nu = self.masses(gen);
        let mut avg = vec![0.0; self.n_bins];
        let mut lo = vec![f64::INFINITY; self.n_bins];
        let mut hi = vec![f64::NEG_INFINITY; self.n_bins];
        for (i, &b) in self.bin_of_node.iter().enumerate() {
            avg[b] += gen.weights[i] * f[i];
            lo[b] = lo[b].min(f[i]);
            hi[b] = hi[b].max(f[i]);
        }
        for b in 0..self.n_bins {
            // a function already constant on the level set is returned unchanged
            avg[b] = if lo[b] == hi[b] { lo[b] } else { avg[b] / nu[b] };
        }
        self.bin_of_node.iter().map(|&b| avg[b]).collect()
    }

    /// Rates of the Galerkin projection of `-L` onto the level-set indicators.
    pub fn effective_rates(&self, gen: &GeneratorGrid, k: usize) -> Result<Vec<f64>> {
        let nu = self.masses(gen);
        let mut diag = vec![0.0; self.n_bins];
        let mut triplets = Vec::new();
        for e in &gen.edges {
            let (p, q) = (self.bin_of_node[e.i], self.bin_of_node[e.j]);
            if p == q {
                continue;
            }
            let k = gen.conductance(e) / (nu[p] * nu[q]).sqrt();
            triplets.push((p, q, -k));
            triplets.push((q, p, -k));
            diag[p] += gen.conductance(e) / nu[p];
            diag[q] += gen.conductance(e) / nu[q];
        }
        triplets.extend(diag.iter().enumerate().map(|(i, &v)| (i, i, v)));
        let a = CsrMatrix::from_triplets(self.n_bins, triplets);
        Ok(smallest_eigenpairs(&a, k.min(self.n_bins), EigenSettings::default())?.0)
    }
}

/// Right-hand side of the eigenvalue error bound:
/// `(M - 1) kappa_2^{-1/2} sqrt(eta_1 / beta) eps`.
pub fn bound_rhs(m: usize, kappa2: f64, eta1: f64, beta: f64, eps: f64) -> f64 {
    (m as f64 - 1.0) * kappa2.powf(-0.5) * (eta1 / beta).sqrt() * eps
}

/// Absolute tolerance on `omega_i >= kappa_i`, scaled by `max(1, kappa_i)`.
pub const VARIATIONAL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub epsilon: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub m: usize,
    pub kappa2: f64,
    pub eta1: f64,
    pub beta: f64,
    pub kappas: Vec<f64>,
    pub omegas: Vec<f64>,
    pub passes: bool,
    pub diagnostics: Vec<String>,
}

impl BoundReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,kappa,omega\n");
        for (i, (k, w)) in self.kappas.iter().zip(&self.omegas).enumerate() {
            let _ = writeln!(out, "{},{},{}", i + 1, k, w);
        }
        let _ = writeln!(out, "epsilon,{}", self.epsilon);
        let _ = writeln!(out, "lhs,{}", self.lhs);
        let _ = writeln!(out, "rhs,{}", self.rhs);
        let _ = writeln!(out, "passes,{}", self.passes);
        out
    }
}

/// Compare the `M` dominant full rates with the Galerkin effective rates and
/// evaluate the bound with `eps = max_i ||psi_i - P psi_i||_{H1}`.
pub fn verify_bound(
    gen: &GeneratorGrid,
    eig: &EigenSolution,
    sets: &LevelSets,
    m: usize,
    eta1: f64,
) -> Result<BoundReport> {
    if m < 2 || m > eig.rates.len() {
        return Err(Error::invalid(format!(
            "M = {m} needs 2 <= M <= {} computed eigenpairs",
            eig.rates.len()
        )));
    }
    let kappas = eig.rates[..m].to_vec();
    let omegas = sets.effective_rates(gen, m)?;
    if omegas.len() < m {
        return Err(Error::invalid(format!(
            "only {} level sets, fewer than M = {m}",
            omegas.len()
        )));
    }
    let mut diagnostics: Vec<String> = sets
        .empty_bins
        .iter()
        .map(|b| format!("bin {b} holds no grid nodes and was excluded"))
        .collect();
    let epsilon = (0..m)
        .map(|i| {
            let psi = eig.vector(i);
            gen.h1_error(&psi, &sets.project(gen, &psi))
        })
        .fold(0.0, f64::max);
    let mut variational_ok = true;
    for i in 0..m {
        if omegas[i] < kappas[i] - VARIATIONAL_TOL * kappas[i].max(1.0) {
            variational_ok = false;
            diagnostics.push(format!(
                "variational violation at index {}: omega {} < kappa {} (discretization error)",
                i + 1,
                omegas[i],
                kappas[i]
            ));
        }
    }
    let lhs = (1..m)
        .map(|i| (omegas[i] - kappas[i]) / omegas[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let kappa2 = kappas[1];
    let rhs = bound_rhs(m, kappa2, eta1, gen.beta, epsilon);
    // absolute slack for the exact case where both sides vanish
    let passes = variational_ok && lhs <= rhs + 1e-8;
    Ok(BoundReport {
        epsilon,
        lhs,
        rhs,
        m,
        kappa2,
        eta1,
        beta: gen.beta,
        kappas,
        omegas,
        passes,
        diagnostics,
    })
}

/// Spectral quantities entering the large-offset asymptotics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetastableSpectralData {
    /// `kappa_j`, `j < M`.
    pub rates: Vec<f64>,
    /// `kappa_{M+1}`, used to check the offset.
    pub next_rate: Option<f64>,
    pub m_rc: usize,
    /// `<xi_l, psi_j>`, `M x m`.
    pub xi_proj: Vec<f64>,
    /// `<xi_l xi_r, psi_j>`, `M x m x m`.
    pub xi2_proj: Vec<f64>,
    /// `rho_ij`, `n_sets x M`.
    pub rho: Vec<f64>,
    /// Weighted standard deviation of `psi_j` over `S_i` relative to the
    /// range of `rho_.j`, `n_sets x M`.
    pub plateau_spread: Vec<f64>,
    /// Crisp set of every grid node.
    pub node_sets: Vec<usize>,
    pub set_probabilities: Vec<f64>,
}

impl MetastableSpectralData {
    /// From `M` grid eigenpairs, with metastable sets from PCCA+ on the
    /// eigenvectors and plateau values as mass-weighted means over each set.
    pub fn from_grid(gen: &GeneratorGrid, eig: &EigenSolution, rc: &ReactionCoordinate, m_sets: usize) -> Result<Self> {
        if m_sets == 0 || m_sets > eig.rates.len() {
            return Err(Error::invalid("M exceeds the computed eigenpairs"));
        }
        let n = gen.n();
        let m = rc.m();
        let x = eig.vectors.columns(0, m_sets).into_owned();
        let part = pcca_vectors_on_support(&x, &gen.weights, (0..n).collect(), GRID_SUPPORT_TOL)?;
        let xi = gen.rc_values(rc)?;
        let mut xi_proj = vec![0.0; m_sets * m];
        let mut xi2_proj = vec![0.0; m_sets * m * m];
        for j in 0..m_sets {
            for i in 0..n {
                let wpsi = gen.weights[i] * x[(i, j)];
                for l in 0..m {
                    xi_proj[j * m + l] += wpsi * xi[i * m + l];
                    for r in 0..m {
                        xi2_proj[(j * m + l) * m + r] += wpsi * xi[i * m + l] * xi[i * m + r];
                    }
                }
            }
        }
        let mut rho = vec![0.0; m_sets * m_sets];
        let mut second = vec![0.0; m_sets * m_sets];
        let mut mass = vec![0.0; m_sets];
        for i in 0..n {
            let s = part.crisp[i];
            mass[s] += gen.weights[i];
            for j in 0..m_sets {
                rho[s * m_sets + j] += gen.weights[i] * x[(i, j)];
                second[s * m_sets + j] += gen.weights[i] * x[(i, j)] * x[(i, j)];
            }
        }
        let mut plateau_spread = vec![0.0; m_sets * m_sets];
        for s in 0..m_sets {
            for j in 0..m_sets {
                rho[s * m_sets + j] /= mass[s];
                let var = (second[s * m_sets + j] / mass[s] - rho[s * m_sets + j].powi(2)).max(0.0);
                plateau_spread[s * m_sets + j] = var.sqrt();
            }
        }
        for j in 0..m_sets {
            let col: Vec<f64> = (0..m_sets).map(|s| rho[s * m_sets + j]).collect();
            let range = col.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - col.iter().copied().fold(f64::INFINITY, f64::min);
            for s in 0..m_sets {
                let v = &mut plateau_spread[s * m_sets + j];
                *v = if range > 0.0 { *v / range } else { 0.0 };
            }
        }
        Ok(Self {
            rates: eig.rates[..m_sets].to_vec(),
            next_rate: eig.rates.get(m_sets).copied(),
            m_rc: m,
            xi_proj,
            xi2_proj,
            rho,
            plateau_spread,
            node_sets: part.crisp,
            set_probabilities: part.set_probabilities,
        })
    }

    pub fn n_sets(&self) -> usize {
        self.rates.len()
    }

    /// Plateau entries whose relative spread exceeds [`PLATEAU_TOL`].
    pub fn plateau_warnings(&self) -> Vec<String> {
        let ms = self.n_sets();
        let mut out = Vec::new();
        for s in 0..ms {
            for j in 1..ms {
                let v = self.plateau_spread[s * ms + j];
                if v > PLATEAU_TOL {
                    out.push(format!("psi_{} varies by {v:.3} of its range on set {}", j + 1, s + 1));
                }
            }
        }
        out
    }

    /// The metastable set whose plateau each bin of `grid` lies on, if any.
    ///
    /// A bin belongs to set `i` when, for every `j`, the mass-weighted mean
    /// of `psi_j` over the nodes in the bin is within [`PLATEAU_TOL`] times
    /// the plateau range of `rho_ij`. Bins without nodes map to `None`.
    pub fn plateau_bins(
        &self,
        gen: &GeneratorGrid,
        eig: &EigenSolution,
        rc: &ReactionCoordinate,
        grid: &RCGrid,
    ) -> Result<Vec<Option<usize>>> {
        let ms = self.n_sets();
        let m = rc.m();
        let z = gen.rc_values(rc)?;
        let nb = grid.n_bins();
        let mut mass = vec![0.0; nb];
        let mut mean = vec![0.0; nb * ms];
        for i in 0..gen.n() {
            if let Some(b) = grid.bin_index(&z[i * m..(i + 1) * m]) {
                mass[b] += gen.weights[i];
                for j in 0..ms {
                    mean[b * ms + j] += gen.weights[i] * eig.vectors[(i, j)];
                }
            }
        }
        let ranges: Vec<f64> = (0..ms)
            .map(|j| {
                let col = (0..ms).map(|s| self.rho[s * ms + j]);
                col.clone().fold(f64::NEG_INFINITY, f64::max) - col.fold(f64::INFINITY, f64::min)
            })
            .collect();
        Ok((0..nb)
            .map(|b| {
                if mass[b] <= 0.0 {
                    return None;
                }
                (0..ms).find(|&s| {
                    (1..ms).all(|j| {
                        let v = mean[b * ms + j] / mass[b];
                        (v - self.rho[s * ms + j]).abs() <= PLATEAU_TOL * ranges[j]
                    })
                })
            })
            .collect())
    }

    /// `c_l^i` and `c_lr^i` at offset `s`.
    pub fn centers(&self, s: f64, set: usize) -> (Vec<f64>, Vec<f64>) {
        let (ms, m) = (self.n_sets(), self.m_rc);
        let mut c = vec![0.0; m];
        let mut c2 = vec![0.0; m * m];
        for j in 0..ms {
            let f = (-self.rates[j] * s).exp() * self.rho[set * ms + j];
            for l in 0..m {
                c[l] += f * self.xi_proj[j * m + l];
            }
            for k in 0..m * m {
                c2[k] += f * self.xi2_proj[j * m * m + k];
            }
        }
        (c, c2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LargeOffsetPrediction {
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub warning: Option<String>,
}

/// Effective drift and diffusion at offset `s` for `z` in set `set`.
pub fn large_offset_predict(
    data: &MetastableSpectralData,
    s: f64,
    z: &[f64],
    set: usize,
    beta: f64,
) -> Result<LargeOffsetPrediction> {
    let m = data.m_rc;
    if z.len() != m {
        return Err(Error::invalid(format!("z has {} components, expected {m}", z.len())));
    }
    if set >= data.n_sets() {
        return Err(Error::invalid(format!("set {set} out of range")));
    }
    if !(s > 0.0) {
        return Err(Error::invalid("offset must be positive"));
    }
    let warning = data.next_rate.and_then(|k| {
        let t_next = 1.0 / k;
        (s < 5.0 * t_next).then(|| format!("offset {s} is below 5 t_(M+1) = {}", 5.0 * t_next))
    });
    let (c, c2) = data.centers(s, set);
    let drift = (0..m).map(|l| (c[l] - z[l]) / s).collect();
    let mut diffusion = vec![0.0; m * m];
    for l in 0..m {
        for r in 0..m {
            diffusion[l * m + r] = beta / (2.0 * s) * (z[l] * z[r] - c[r] * z[l] - c[l] * z[r] + c2[l * m + r]);
        }
    }
    Ok(LargeOffsetPrediction {
        drift,
        diffusion,
        warning,
    })
}
