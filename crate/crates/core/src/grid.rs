//! Power-network case files and the DC power-flow matrices consumed by the
//! dispatch QPs.
//!
//! Cases are self-contained JSON documents. Susceptances are per-unit; the
//! derived `B_bus`/`B_f` matrices are kept per-unit too, and the dispatch
//! layer scales them by `base_mw` so its balance equations live in MW.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: usize,
    #[serde(rename = "ref", default)]
    pub is_ref: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchSpec {
    pub from: usize,
    pub to: usize,
    /// Per-unit susceptance (1/x).
    pub b: f64,
    /// Flow limit in MW; the lower limit is the negation.
    pub flow_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    /// Quadratic cost coefficient, $/MW^2.
    pub q_cost: f64,
    /// Linear cost coefficient, $/MW.
    pub c_cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSpec {
    /// Dispatch slack penalty, $/MW.
    pub c_ls: f64,
    /// Load-shedding linear cost, $/MW.
    pub c_ls1: f64,
    /// Load-shedding quadratic cost, $/MW^2.
    pub c_ls2: f64,
    /// Generation-storage linear cost, $/MW.
    pub c_gs1: f64,
    /// Generation-storage quadratic cost, $/MW^2.
    pub c_gs2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
    pub generators: Vec<GeneratorSpec>,
    pub loads: Vec<LoadSpec>,
    pub costs: CostSpec,
    pub base_mw: f64,
}

/// A validated case with its derived DC matrices.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub file: CaseFile,
    pub ref_bus: usize,
    /// n_b x n_b bus susceptance matrix (per-unit).
    pub b_bus: DMatrix<f64>,
    /// n_br x n_b branch susceptance matrix (per-unit): row k maps angles to
    /// the flow on branch k.
    pub b_f: DMatrix<f64>,
    /// n_b x n_g generator incidence.
    pub c_g: DMatrix<f64>,
    /// n_b x n load incidence.
    pub c_l: DMatrix<f64>,
    /// Bus id -> dense index.
    id_to_idx: Vec<usize>,
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.file.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.file.branches.len()
    }

    pub fn n_generators(&self) -> usize {
        self.file.generators.len()
    }

    pub fn n_loads(&self) -> usize {
        self.file.loads.len()
    }

    pub fn base_mw(&self) -> f64 {
        self.file.base_mw
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.id_to_idx.iter().position(|&b| b == id)
    }

    pub fn gen_pmin(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_generators(), self.file.generators.iter().map(|g| g.pmin))
    }

    pub fn gen_pmax(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_generators(), self.file.generators.iter().map(|g| g.pmax))
    }

    pub fn gen_q_cost(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_generators(), self.file.generators.iter().map(|g| g.q_cost))
    }

    pub fn gen_c_cost(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_generators(), self.file.generators.iter().map(|g| g.c_cost))
    }

    pub fn flow_max(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_branches(), self.file.branches.iter().map(|b| b.flow_max))
    }
}

/// A single validation finding; `validate_case` collects these instead of
/// failing on the first problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub what: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.what)
    }
}

fn violation(what: impl Into<String>) -> Violation {
    Violation { what: what.into() }
}

/// Check every case invariant and report all violations.
pub fn validate_case(file: &CaseFile) -> Vec<Violation> {
    let mut out = Vec::new();
    let n_b = file.buses.len();
    if n_b == 0 {
        out.push(violation("case has no buses"));
        return out;
    }

    let mut ids: Vec<usize> = file.buses.iter().map(|b| b.id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != n_b {
        out.push(violation("duplicate bus ids"));
    }

    let ref_count = file.buses.iter().filter(|b| b.is_ref).count();
    if ref_count != 1 {
        out.push(violation(format!("expected exactly one reference bus, found {ref_count}")));
    }

    let idx_of = |id: usize| file.buses.iter().position(|b| b.id == id);

    for (k, br) in file.branches.iter().enumerate() {
        if br.b <= 0.0 {
            out.push(violation(format!("branch {k}: susceptance {} must be positive", br.b)));
        }
        if br.flow_max <= 0.0 {
            out.push(violation(format!("branch {k}: flow_max {} must be positive", br.flow_max)));
        }
        if idx_of(br.from).is_none() || idx_of(br.to).is_none() {
            out.push(violation(format!("branch {k}: unknown endpoint bus")));
        } else if br.from == br.to {
            out.push(violation(format!("branch {k}: self-loop at bus {}", br.from)));
        }
    }

    for (g, gen) in file.generators.iter().enumerate() {
        if idx_of(gen.bus).is_none() {
            out.push(violation(format!("generator {g}: unknown bus {}", gen.bus)));
        }
        if gen.q_cost <= 0.0 {
            out.push(violation(format!("generator {g}: q_cost {} must be positive", gen.q_cost)));
        }
        if gen.pmin > gen.pmax {
            out.push(violation(format!("generator {g}: pmin {} exceeds pmax {}", gen.pmin, gen.pmax)));
        }
    }
    if file.generators.is_empty() {
        out.push(violation("case has no generators"));
    }

    for (l, load) in file.loads.iter().enumerate() {
        if idx_of(load.bus).is_none() {
            out.push(violation(format!("load {l}: unknown bus {}", load.bus)));
        }
    }
    if file.loads.is_empty() {
        out.push(violation("case has no loads"));
    }

    // shedding must be penalized more than storage
    if file.costs.c_gs2 >= file.costs.c_ls2 {
        out.push(violation(format!(
            "cost ordering violated: c_gs2 {} must be < c_ls2 {}",
            file.costs.c_gs2, file.costs.c_ls2
        )));
    }
    if file.costs.c_gs1 >= file.costs.c_ls1 {
        out.push(violation(format!(
            "cost ordering violated: c_gs1 {} must be < c_ls1 {}",
            file.costs.c_gs1, file.costs.c_ls1
        )));
    }
    if file.costs.c_ls <= 0.0 || file.costs.c_ls1 <= 0.0 || file.costs.c_ls2 <= 0.0
        || file.costs.c_gs1 < 0.0 || file.costs.c_gs2 <= 0.0
    {
        out.push(violation("cost coefficients must be positive"));
    }
    if file.base_mw <= 0.0 {
        out.push(violation("base_mw must be positive"));
    }

    // connectivity over valid branches
    if n_b > 0 {
        let mut seen = vec![false; n_b];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for br in &file.branches {
                let (Some(a), Some(b)) = (idx_of(br.from), idx_of(br.to)) else {
                    continue;
                };
                let next = if a == i {
                    b
                } else if b == i {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            out.push(violation("network is disconnected"));
        }
    }

    out
}

/// Build the derived matrices for a case that already passed validation.
pub fn build_case(file: CaseFile) -> Result<GridCase> {
    let violations = validate_case(&file);
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(|v| v.what.clone()).collect();
        return Err(Error::InvalidCase(msgs.join("; ")));
    }

    let n_b = file.buses.len();
    let idx_of = |id: usize| file.buses.iter().position(|b| b.id == id).unwrap();
    let ref_bus = file.buses.iter().position(|b| b.is_ref).unwrap();

    let n_br = file.branches.len();
    let mut b_bus = DMatrix::zeros(n_b, n_b);
    let mut b_f = DMatrix::zeros(n_br, n_b);
    for (k, br) in file.branches.iter().enumerate() {
        let i = idx_of(br.from);
        let j = idx_of(br.to);
        b_f[(k, i)] = br.b;
        b_f[(k, j)] = -br.b;
        b_bus[(i, i)] += br.b;
        b_bus[(j, j)] += br.b;
        b_bus[(i, j)] -= br.b;
        b_bus[(j, i)] -= br.b;
    }

    let n_g = file.generators.len();
    let mut c_g = DMatrix::zeros(n_b, n_g);
    for (g, gen) in file.generators.iter().enumerate() {
        c_g[(idx_of(gen.bus), g)] = 1.0;
    }
    let n_l = file.loads.len();
    let mut c_l = DMatrix::zeros(n_b, n_l);
    for (l, load) in file.loads.iter().enumerate() {
        c_l[(idx_of(load.bus), l)] = 1.0;
    }

    let id_to_idx = file.buses.iter().map(|b| b.id).collect();
    Ok(GridCase {
        file,
        ref_bus,
        b_bus,
        b_f,
        c_g,
        c_l,
        id_to_idx,
    })
}

/// Parse and validate a JSON case file.
pub fn load_case(path: &Path) -> Result<GridCase> {
    let text = std::fs::read_to_string(path)?;
    let file: CaseFile = serde_json::from_str(&text)?;
    build_case(file)
}

/// Parse and validate a case from a JSON string.
pub fn case_from_str(text: &str) -> Result<GridCase> {
    let file: CaseFile = serde_json::from_str(text)?;
    build_case(file)
}

/// The bundled 14-bus test system: standard topology and susceptances with
/// line limits and cost coefficients tightened so a ~250-450 MW load profile
/// hits both congested and uncongested operating points.
pub const CASE14_JSON: &str = include_str!("../assets/case14.json");

/// Build the bundled 14-bus case.
pub fn case14() -> GridCase {
    case_from_str(CASE14_JSON).expect("bundled 14-bus case must validate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn two_bus_file(b: f64) -> CaseFile {
        CaseFile {
            buses: vec![
                BusSpec { id: 0, is_ref: true },
                BusSpec { id: 1, is_ref: false },
            ],
            branches: vec![BranchSpec { from: 0, to: 1, b, flow_max: 100.0 }],
            generators: vec![GeneratorSpec { bus: 0, pmin: 0.0, pmax: 100.0, q_cost: 0.1, c_cost: 10.0 }],
            loads: vec![LoadSpec { bus: 1 }],
            costs: CostSpec { c_ls: 300.0, c_ls1: 120.0, c_ls2: 0.8, c_gs1: 15.0, c_gs2: 0.15 },
            base_mw: 100.0,
        }
    }

    #[test]
    fn two_bus_susceptance_matrix() {
        let case = build_case(two_bus_file(4.0)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[4.0, -4.0, -4.0, 4.0]);
        assert_relative_eq!(case.b_bus, expected);
        assert_eq!(case.ref_bus, 0);
    }

    #[test]
    fn bundled_case14_parses_and_validates() {
        let case = case14();
        assert_eq!(case.n_buses(), 14);
        assert_eq!(case.n_branches(), 20);
        assert_eq!(case.n_generators(), 5);
        assert_eq!(case.n_loads(), 14);
        assert!(validate_case(&case.file).is_empty());
    }

    #[test]
    fn cost_ordering_violation_detected() {
        let mut file = two_bus_file(4.0);
        file.costs.c_gs2 = file.costs.c_ls2 + 1.0;
        let v = validate_case(&file);
        assert!(v.iter().any(|v| v.what.contains("c_gs2")));
        assert!(build_case(file).is_err());
    }

    #[test]
    fn zero_susceptance_detected() {
        let mut file = two_bus_file(4.0);
        file.branches[0].b = 0.0;
        let v = validate_case(&file);
        assert!(v.iter().any(|v| v.what.contains("susceptance")));
    }

    #[test]
    fn duplicate_ref_detected() {
        let mut file = two_bus_file(4.0);
        file.buses[1].is_ref = true;
        let v = validate_case(&file);
        assert!(v.iter().any(|v| v.what.contains("reference bus")));
    }

    #[test]
    fn disconnected_detected() {
        let mut file = two_bus_file(4.0);
        file.buses.push(BusSpec { id: 2, is_ref: false });
        let v = validate_case(&file);
        assert!(v.iter().any(|v| v.what.contains("disconnected")));
    }

    #[test]
    fn valid_case_has_no_violations() {
        assert!(validate_case(&two_bus_file(4.0)).is_empty());
    }

    #[test]
    fn b_bus_row_sums_and_rank() {
        let case = case14();
        let ones = DVector::from_element(case.n_buses(), 1.0);
        let prod = &case.b_bus * &ones;
        assert!(prod.amax() < 1e-10);
        let svd = case.b_bus.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
        assert_eq!(rank, case.n_buses() - 1);
    }

    #[test]
    fn branch_flows_match_angle_differences() {
        let case = case14();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let theta = DVector::from_fn(case.n_buses(), |_, _| rng.random_range(-0.5..0.5));
        let flows = &case.b_f * &theta;
        let idx_of = |id: usize| case.bus_index(id).unwrap();
        for (k, br) in case.file.branches.iter().enumerate() {
            let expect = br.b * (theta[idx_of(br.from)] - theta[idx_of(br.to)]);
            assert_relative_eq!(flows[k], expect, max_relative = 1e-13, epsilon = 1e-13);
        }
    }

    proptest! {
        #[test]
        fn random_chain_networks_satisfy_invariants(n in 2usize..10, seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let buses: Vec<BusSpec> = (0..n).map(|i| BusSpec { id: i, is_ref: i == 0 }).collect();
            let mut branches = Vec::new();
            for i in 1..n {
                branches.push(BranchSpec {
                    from: rng.random_range(0..i),
                    to: i,
                    b: rng.random_range(1.0..20.0),
                    flow_max: 50.0,
                });
            }
            let file = CaseFile {
                buses,
                branches,
                generators: vec![GeneratorSpec { bus: 0, pmin: 0.0, pmax: 100.0, q_cost: 0.1, c_cost: 10.0 }],
                loads: vec![LoadSpec { bus: n - 1 }],
                costs: CostSpec { c_ls: 300.0, c_ls1: 120.0, c_ls2: 0.8, c_gs1: 15.0, c_gs2: 0.15 },
                base_mw: 100.0,
            };
            let case = build_case(file).unwrap();
            let ones = DVector::from_element(n, 1.0);
            prop_assert!((&case.b_bus * &ones).amax() < 1e-10);
            let svd = case.b_bus.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
            prop_assert_eq!(rank, n - 1);
        }
    }
}
