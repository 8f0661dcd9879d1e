//! Activation and parameter counts for named and user-given structures.

use std::fmt::Write as _;

use leankan::{LayerSpec, NormalizerKind};

use crate::config::{Architecture, CONVERGENCE_POINTS};

/// A structure to count, optionally with a published value to match.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub label: String,
    pub architecture: Architecture,
    pub n_in: usize,
    pub n_out: usize,
    pub grid: usize,
    pub base: bool,
    pub activations: usize,
    pub parameters: usize,
    pub expected_activations: Option<usize>,
    pub expected_parameters: Option<usize>,
}

impl AuditRow {
    pub fn count(
        label: impl Into<String>,
        architecture: Architecture,
        (n_in, n_out): (usize, usize),
        grid: usize,
        base: bool,
    ) -> leankan::Result<Self> {
        // the normalizer does not change any count
        let specs: Vec<LayerSpec> = architecture.layer_specs(n_in, n_out, grid, NormalizerKind::Tanh, base)?;
        Ok(AuditRow {
            label: label.into(),
            architecture,
            n_in,
            n_out,
            grid,
            base,
            activations: specs.iter().map(LayerSpec::count_activations).sum(),
            parameters: specs.iter().map(LayerSpec::count_parameters).sum(),
            expected_activations: None,
            expected_parameters: None,
        })
    }

    fn expect(mut self, activations: Option<usize>, parameters: Option<usize>) -> Self {
        self.expected_activations = activations;
        self.expected_parameters = parameters;
        self
    }

    pub fn matches(&self) -> bool {
        self.expected_activations.map_or(true, |e| e == self.activations)
            && self.expected_parameters.map_or(true, |e| e == self.parameters)
    }
}

fn row(
    label: &str,
    arch: Architecture,
    io: (usize, usize),
    grid: usize,
    acts: Option<usize>,
    params: Option<usize>,
) -> AuditRow {
    AuditRow::count(label, arch, io, grid, true)
        .expect("published structures are valid")
        .expect(acts, params)
}

/// Every published count, with its expected value.
pub fn published_rows() -> Vec<AuditRow> {
    let mut rows = vec![
        row("4->3 AddKAN layer", Architecture::Add, (4, 3), 4, Some(12), None),
        row("4->3 MultKAN layer", Architecture::Mult { n_a: 1, k: 2 }, (4, 3), 4, Some(20), None),
        row("4->3 LeanKAN layer", Architecture::Lean { n_mu: 2 }, (4, 3), 4, Some(12), None),
        row("toy MultKAN", Architecture::Mult { n_a: 2, k: 2 }, (4, 4), 4, None, Some(120)),
        row("toy LeanKAN", Architecture::Lean { n_mu: 2 }, (4, 4), 4, None, Some(80)),
        row(
            "LV rapid MultKAN",
            Architecture::MultFirst { hidden: 4, n_a: 2, k: 2 },
            (2, 2),
            4,
            None,
            Some(100),
        ),
        row(
            "LV rapid LeanKAN",
            Architecture::LeanSecond { hidden: 5, n_mu: 3 },
            (2, 2),
            4,
            None,
            Some(100),
        ),
    ];
    rows.extend(table2_rows());
    rows.push(row(
        "Schrodinger LeanKAN",
        Architecture::LeanSecond { hidden: 2, n_mu: 2 },
        (402, 402),
        5,
        None,
        Some(9648),
    ));
    rows
}

/// Both variants of each converged-LV structure.
pub fn table2_rows() -> Vec<AuditRow> {
    const EXPECTED: [(usize, usize); 4] = [(80, 64), (156, 120), (210, 168), (300, 240)];
    CONVERGENCE_POINTS
        .iter()
        .zip(EXPECTED)
        .flat_map(|(p, (mult, lean))| {
            let label = |kind: &str| format!("LV {kind} nodes={} n={} grid={}", p.nodes, p.n, p.grid);
            [
                row(&label("MultKAN"), p.mult(), (2, 2), p.grid, None, Some(mult)),
                row(&label("LeanKAN"), p.lean(), (2, 2), p.grid, None, Some(lean)),
            ]
        })
        .collect()
}

fn fmt_expected(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

pub fn render(rows: &[AuditRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<34} {:<40} {:>9} {:>5} {:>11} {:>6} {:>10} {:>6}  status",
        "label", "architecture", "in->out", "grid", "activations", "expect", "parameters", "expect"
    );
    for r in rows {
        let status = match (r.expected_activations, r.expected_parameters) {
            (None, None) => "",
            _ if r.matches() => "ok",
            _ => "MISMATCH",
        };
        let _ = writeln!(
            s,
            "{:<34} {:<40} {:>9} {:>5} {:>11} {:>6} {:>10} {:>6}  {status}",
            r.label,
            r.architecture.to_string(),
            format!("{}->{}", r.n_in, r.n_out),
            r.grid,
            r.activations,
            fmt_expected(r.expected_activations),
            r.parameters,
            fmt_expected(r.expected_parameters),
        );
    }
    s
}
