//! Tri-layer cavity assignment and diagonal scheduling of stabilizer measurements.
//!
//! Z-checks use the ancilla-1 layer and X-checks the ancilla-2 layer. Each
//! layer has one cavity per grid row and one per grid column, and a check
//! needs the row cavity and the column cavity through its grid cell.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::code::{CheckType, CssCode, Layout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Line {
    Row(usize),
    Col(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cavity {
    pub layer: CheckType,
    pub line: Line,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CavityMap {
    pub cavities: Vec<Cavity>,
    pub x_checks: Vec<(usize, usize)>,
    pub z_checks: Vec<(usize, usize)>,
}

impl CavityMap {
    pub fn len(&self) -> usize {
        self.cavities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cavities.is_empty()
    }

    fn cell(&self, kind: CheckType, index: usize) -> (usize, usize) {
        match kind {
            CheckType::X => self.x_checks[index],
            CheckType::Z => self.z_checks[index],
        }
    }

    /// Row and column cavities a check occupies.
    pub fn cavities_of(&self, kind: CheckType, index: usize) -> [Cavity; 2] {
        let (r, c) = self.cell(kind, index);
        [Cavity { layer: kind, line: Line::Row(r) }, Cavity { layer: kind, line: Line::Col(c) }]
    }

    fn count(&self, kind: CheckType) -> usize {
        match kind {
            CheckType::X => self.x_checks.len(),
            CheckType::Z => self.z_checks.len(),
        }
    }
}

pub fn assign_cavities(layout: &Layout) -> CavityMap {
    let mut cavities = Vec::with_capacity(2 * (layout.rows + layout.cols));
    for layer in [CheckType::Z, CheckType::X] {
        cavities.extend((0..layout.rows).map(|r| Cavity { layer, line: Line::Row(r) }));
        cavities.extend((0..layout.cols).map(|c| Cavity { layer, line: Line::Col(c) }));
    }
    CavityMap { cavities, x_checks: layout.x_checks.clone(), z_checks: layout.z_checks.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledCheck {
    #[serde(rename = "type")]
    pub kind: CheckType,
    pub index: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestep {
    pub pass: CheckType,
    pub checks: Vec<ScheduledCheck>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub timesteps: Vec<Timestep>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    /// Checks in emission order.
    pub fn order(&self) -> impl Iterator<Item = &ScheduledCheck> {
        self.timesteps.iter().flat_map(|t| t.checks.iter())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScheduleOptions {
    /// Diagonal index taken modulo the grid size, i.e. diagonals wrap around.
    pub wrap: bool,
    /// Alternate Z and X timesteps instead of a full Z pass before the X pass.
    pub alternate: bool,
}

/// Checks grouped by grid diagonal, the Z pass first.
pub fn diagonal_schedule(code: &CssCode, layout: &Layout) -> Schedule {
    diagonal_schedule_with(code, layout, ScheduleOptions::default())
}

pub fn diagonal_schedule_with(code: &CssCode, layout: &Layout, opts: ScheduleOptions) -> Schedule {
    let size = layout.rows.max(layout.cols) as i64;
    let pass = |kind: CheckType| -> Vec<Timestep> {
        let cells = match kind {
            CheckType::X => &layout.x_checks,
            CheckType::Z => &layout.z_checks,
        };
        let mut groups: BTreeMap<i64, Vec<ScheduledCheck>> = BTreeMap::new();
        for (index, &(row, col)) in cells.iter().enumerate().take(code.checks(kind).rows()) {
            let mut diag = row as i64 - col as i64;
            if opts.wrap {
                diag = diag.rem_euclid(size);
            }
            groups.entry(diag).or_default().push(ScheduledCheck { kind, index, row, col });
        }
        groups
            .into_values()
            .map(|mut checks| {
                checks.sort_by_key(|c| (c.row, c.col));
                Timestep { pass: kind, checks }
            })
            .collect()
    };
    let z = pass(CheckType::Z);
    let x = pass(CheckType::X);
    let timesteps = if opts.alternate {
        let mut out = Vec::with_capacity(z.len() + x.len());
        let (mut zi, mut xi) = (z.into_iter(), x.into_iter());
        loop {
            match (zi.next(), xi.next()) {
                (None, None) => break,
                (a, b) => out.extend(a.into_iter().chain(b)),
            }
        }
        out
    } else {
        z.into_iter().chain(x).collect()
    };
    Schedule { timesteps }
}

/// Fallback for codes without a grid layout: first-fit packing of checks with
/// disjoint supports, Z pass then X pass.
pub fn greedy_schedule(code: &CssCode) -> Schedule {
    let mut timesteps = Vec::new();
    for kind in [CheckType::Z, CheckType::X] {
        let m = code.checks(kind);
        let mut steps: Vec<(Vec<bool>, Vec<ScheduledCheck>)> = Vec::new();
        for index in 0..m.rows() {
            let sup = m.row(index);
            let slot = steps.iter().position(|(used, _)| sup.iter().all(|&q| !used[q]));
            let slot = slot.unwrap_or_else(|| {
                steps.push((vec![false; code.n], Vec::new()));
                steps.len() - 1
            });
            for &q in sup {
                steps[slot].0[q] = true;
            }
            steps[slot].1.push(ScheduledCheck { kind, index, row: index, col: index });
        }
        timesteps.extend(steps.into_iter().map(|(_, checks)| Timestep { pass: kind, checks }));
    }
    Schedule { timesteps }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleIssue {
    Conflict { step: usize, first: ScheduledCheck, second: ScheduledCheck, cavity: Cavity },
    Missing { kind: CheckType, index: usize },
    Repeated { kind: CheckType, index: usize },
}

/// Ok, or the first violation found.
pub fn validate_schedule(s: &Schedule, cavities: &CavityMap) -> Result<(), ScheduleIssue> {
    let mut seen: HashMap<(CheckType, usize), usize> = HashMap::new();
    for (step, t) in s.timesteps.iter().enumerate() {
        let mut busy: HashMap<Cavity, ScheduledCheck> = HashMap::new();
        for &c in &t.checks {
            *seen.entry((c.kind, c.index)).or_default() += 1;
            if seen[&(c.kind, c.index)] > 1 {
                return Err(ScheduleIssue::Repeated { kind: c.kind, index: c.index });
            }
            for cav in cavities.cavities_of(c.kind, c.index) {
                if let Some(&first) = busy.get(&cav) {
                    return Err(ScheduleIssue::Conflict { step, first, second: c, cavity: cav });
                }
                busy.insert(cav, c);
            }
        }
    }
    for kind in [CheckType::Z, CheckType::X] {
        for index in 0..cavities.count(kind) {
            if !seen.contains_key(&(kind, index)) {
                return Err(ScheduleIssue::Missing { kind, index });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Horizontal,
    Vertical,
}

/// Qubits of the two cat states being merged.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GhzMerge {
    pub horizontal: Vec<usize>,
    pub vertical: Vec<usize>,
}

impl GhzMerge {
    /// Pauli X correction after the boundary parity measurement returned `m`:
    /// identity for `m = 0`, X on every qubit of the chosen branch for `m = 1`.
    pub fn correction(&self, m: bool, branch: Branch) -> Vec<usize> {
        merge_ghz_correction(m, match branch {
            Branch::Horizontal => &self.horizontal,
            Branch::Vertical => &self.vertical,
        })
    }
}

pub fn merge_ghz_correction(m: bool, branch_qubits: &[usize]) -> Vec<usize> {
    if m {
        branch_qubits.to_vec()
    } else {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{hgp_from_polynomial, layout, steane_code, Boundary, CheckPolynomial};

    fn rep_product(n: usize, boundary: Boundary) -> CssCode {
        hgp_from_polynomial(&CheckPolynomial::new(&[0, 1]).unwrap(), n, boundary).unwrap()
    }

    #[test]
    fn cavity_counts() {
        let l = layout(&rep_product(5, Boundary::Open)).unwrap();
        assert_eq!(assign_cavities(&l).len(), 36);
        let l = layout(&rep_product(6, Boundary::Periodic)).unwrap();
        assert_eq!(assign_cavities(&l).len(), 48);
        let unit = Layout { rows: 1, cols: 1, coordinate: vec![], x_checks: vec![], z_checks: vec![] };
        assert_eq!(assign_cavities(&unit).len(), 4);
    }

    #[test]
    fn degenerate_code_takes_two_steps() {
        let code = hgp_from_polynomial(&CheckPolynomial::new(&[0]).unwrap(), 1, Boundary::Periodic).unwrap();
        let l = layout(&code).unwrap();
        let s = diagonal_schedule(&code, &l);
        assert_eq!(s.len(), 2);
        assert_eq!(validate_schedule(&s, &assign_cavities(&l)), Ok(()));
    }

    #[test]
    fn same_row_conflict_is_named() {
        let code = rep_product(3, Boundary::Periodic);
        let l = layout(&code).unwrap();
        let cav = assign_cavities(&l);
        let a = ScheduledCheck { kind: CheckType::Z, index: 0, row: l.z_checks[0].0, col: l.z_checks[0].1 };
        let b = ScheduledCheck { kind: CheckType::Z, index: 1, row: l.z_checks[1].0, col: l.z_checks[1].1 };
        assert_eq!(a.row, b.row);
        let bad = Schedule { timesteps: vec![Timestep { pass: CheckType::Z, checks: vec![a, b] }] };
        match validate_schedule(&bad, &cav) {
            Err(ScheduleIssue::Conflict { first, second, .. }) => assert_eq!((first.index, second.index), (0, 1)),
            other => panic!("expected conflict, got {other:?}"),
        }
        let empty = Schedule { timesteps: vec![] };
        assert!(matches!(validate_schedule(&empty, &cav), Err(ScheduleIssue::Missing { .. })));
    }

    #[test]
    fn wrapped_and_alternating_variants_stay_valid() {
        let code = rep_product(4, Boundary::Periodic);
        let l = layout(&code).unwrap();
        let cav = assign_cavities(&l);
        let wrapped = diagonal_schedule_with(&code, &l, ScheduleOptions { wrap: true, alternate: false });
        assert_eq!(wrapped.len(), 8);
        assert_eq!(validate_schedule(&wrapped, &cav), Ok(()));
        let alt = diagonal_schedule_with(&code, &l, ScheduleOptions { wrap: false, alternate: true });
        assert_eq!(alt.timesteps[0].pass, CheckType::Z);
        assert_eq!(alt.timesteps[1].pass, CheckType::X);
        assert_eq!(validate_schedule(&alt, &cav), Ok(()));
    }

    #[test]
    fn greedy_schedule_covers_steane() {
        let s = greedy_schedule(&steane_code());
        assert_eq!(s.order().count(), 6);
        assert!(s.timesteps.iter().all(|t| !t.checks.is_empty()));
    }

    #[test]
    fn merge_corrections() {
        let m = GhzMerge { horizontal: vec![0, 1, 2], vertical: vec![3, 4, 5] };
        assert!(m.correction(false, Branch::Horizontal).is_empty());
        assert_eq!(m.correction(true, Branch::Horizontal), vec![0, 1, 2]);
        assert_eq!(m.correction(true, Branch::Vertical), vec![3, 4, 5]);
    }
}
